#include "teeod/sim.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "teeod/bytes.hpp"
#include "teeod/wallet.hpp"

namespace teeod {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

uint64_t parse_u64(const std::string& key, const std::string& value, int line) {
  try {
    std::size_t used = 0;
    const uint64_t v = std::stoull(value, &used, 0);
    if (used == value.size() && !value.empty() && value[0] != '-') return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("line " + std::to_string(line) + ": " + key + ": expected an unsigned integer, got '" +
                    value + "'");
}

std::string hex_word(ReturnCode rc) { return to_string(rc); }

}  // namespace

SimConfig SimConfig::parse(std::string_view text) {
  SimConfig c;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string body = trim(raw.substr(0, raw.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected key=value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key == "enclave_count") {
      const uint64_t v = parse_u64(key, value, line);
      if (v < 1 || v > 1024) throw ConfigError("line " + std::to_string(line) + ": enclave_count: must be at least 1");
      c.enclave_count = static_cast<int>(v);
    } else if (key == "device") {
      c.device = value;
    } else if (key == "storage_dir") {
      c.storage_dir = value;
    } else if (key == "rng_seed") {
      c.rng_seed = parse_u64(key, value, line);
    } else if (key == "huk") {
      auto bytes = from_hex(value);
      if (!bytes || bytes->size() != 32) {
        throw ConfigError("line " + std::to_string(line) + ": huk: expected 64 hex characters");
      }
      c.huk = std::move(*bytes);
    } else if (key == "huk_seed") {
      c.huk_seed = value;
    } else if (key == "uart_dir") {
      c.uart_dir = value;
    } else if (key == "dma_delay_model") {
      if (value == "none") {
        c.dma_per_byte = false;
      } else if (value == "per-byte") {
        c.dma_per_byte = true;
      } else {
        throw ConfigError("line " + std::to_string(line) + ": dma_delay_model: expected none or per-byte");
      }
    } else if (key == "dma_ns_per_byte") {
      c.dma_ns_per_byte = parse_u64(key, value, line);
    } else if (key == "tcm_size" || key == "shm_size") {
      const uint64_t fixed = key == "tcm_size" ? kTcmSize : kShmSize;
      if (parse_u64(key, value, line) != fixed) {
        throw ConfigError("line " + std::to_string(line) + ": " + key + ": fixed at " + std::to_string(fixed) +
                          " bytes");
      }
    } else {
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
  }
  return c;
}

SimConfig SimConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Simulator::Simulator(const SimConfig& config) : config_(config) {
  FabricConfig fc;
  fc.enclave_count = config_.enclave_count;
  try {
    fc.device = resources::DeviceProfile::resolve(config_.device);
  } catch (const resources::ResourceError& e) {
    throw ConfigError(std::string("device: ") + e.what());
  }
  validate(fc);  // before anything touches the filesystem

  rng_ = config_.rng_seed ? std::make_unique<tee::Rng>(*config_.rng_seed)
                          : tee::Rng::from_entropy();
  std::error_code ec;
  std::filesystem::create_directories(config_.storage_dir, ec);
  if (ec) throw ConfigError("storage_dir: cannot create " + config_.storage_dir.string() + ": " + ec.message());
  const tee::DeviceKey key = config_.huk ? tee::DeviceKey::from_bytes(*config_.huk)
                                         : tee::DeviceKey::from_seed(config_.huk_seed);
  storage_ = std::make_unique<tee::SecureStorage>(config_.storage_dir, key, *rng_);

  fc.dma = config_.dma();
  fc.uart_dir = config_.uart_dir;
  wallet::register_ta(fc.registry);
  fc.services = TeeServices{rng_.get(), storage_.get(), &counter_};
  fabric_ = std::make_unique<Fabric>(std::move(fc));
  context_ = std::make_unique<client::Context>(*fabric_);
}

Simulator::~Simulator() {
  context_.reset();
  fabric_.reset();
}

// ---------------------------------------------------------------------------
// Demos

uint32_t demo_increment(client::Context& context, uint32_t value) {
  client::Session s;
  ReturnCode rc = context.open_session(s, kIncrementTaUuid, builtin_image(ta_kind::kIncrement));
  if (rc != ReturnCode::kSuccess) throw std::runtime_error("open_session: " + hex_word(rc));
  client::Operation op;
  op.params[0] = client::Value{value, 0, client::Direction::kInout};
  rc = context.invoke_command(s, 0, op);
  context.close_session(s);
  if (rc != ReturnCode::kSuccess) throw std::runtime_error("invoke_command: " + hex_word(rc));
  return std::get<client::Value>(op.params[0]).a;
}

Bytes demo_shmem16(client::Context& context) {
  client::Session s;
  ReturnCode rc = context.open_session(s, kShmem16TaUuid, builtin_image(ta_kind::kShmem16));
  if (rc != ReturnCode::kSuccess) throw std::runtime_error("open_session: " + hex_word(rc));
  client::SharedMemory shm;
  rc = context.allocate_shared_memory(s, 16, client::Direction::kOut, shm);
  client::Operation op;
  op.params[0] = client::MemRef{&shm};
  if (rc == ReturnCode::kSuccess) rc = context.invoke_command(s, 0, op);
  context.close_session(s);
  if (rc != ReturnCode::kSuccess) throw std::runtime_error("invoke_command: " + hex_word(rc));
  return shm.buffer;
}

// ---------------------------------------------------------------------------
// Bench

double ScenarioStats::mean_ns() const {
  if (samples_ns.empty()) return 0;
  return std::accumulate(samples_ns.begin(), samples_ns.end(), 0.0) / static_cast<double>(samples_ns.size());
}

uint64_t ScenarioStats::min_ns() const {
  return samples_ns.empty() ? 0 : *std::min_element(samples_ns.begin(), samples_ns.end());
}

uint64_t ScenarioStats::max_ns() const {
  return samples_ns.empty() ? 0 : *std::max_element(samples_ns.begin(), samples_ns.end());
}

const ScenarioStats& BenchReport::scenario(std::string_view name) const {
  for (const auto& s : scenarios) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no scenario " + std::string(name));
}

std::vector<std::string> BenchReport::machine_lines() const {
  std::vector<std::string> lines;
  char buf[256];
  for (const auto& s : scenarios) {
    std::snprintf(buf, sizeof(buf), "scenario=%s n=%zu mean_ns=%.0f min_ns=%llu max_ns=%llu", s.name.c_str(),
                  s.samples_ns.size(), s.mean_ns(), static_cast<unsigned long long>(s.min_ns()),
                  static_cast<unsigned long long>(s.max_ns()));
    lines.emplace_back(buf);
  }
  std::snprintf(buf, sizeof(buf), "ratio=cold_open/warm_open value=%.2f", cold_warm_ratio);
  lines.emplace_back(buf);
  std::snprintf(buf, sizeof(buf), "ratio=shm_invoke/raw_invoke value=%.3f", shm_raw_ratio);
  lines.emplace_back(buf);
  std::snprintf(buf, sizeof(buf), "loads cold_open=%llu warm_open=%llu",
                static_cast<unsigned long long>(cold_open_loads),
                static_cast<unsigned long long>(warm_open_loads));
  lines.emplace_back(buf);
  lines.emplace_back(std::string("structure=") + (violations.empty() ? "ok" : "violated"));
  for (const auto& v : violations) lines.push_back("violation=" + v);
  return lines;
}

std::string BenchReport::to_text() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %6s %14s %14s %14s\n", "scenario", "n", "mean_us", "min_us", "max_us");
  out << buf;
  for (const auto& s : scenarios) {
    std::snprintf(buf, sizeof(buf), "%-12s %6zu %14.1f %14.1f %14.1f\n", s.name.c_str(), s.samples_ns.size(),
                  s.mean_ns() / 1e3, static_cast<double>(s.min_ns()) / 1e3, static_cast<double>(s.max_ns()) / 1e3);
    out << buf;
  }
  for (const auto& line : machine_lines()) out << line << "\n";
  return out.str();
}

namespace {

using Clock = std::chrono::steady_clock;

uint64_t since(Clock::time_point t0) {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}

void expect(BenchReport& r, bool ok, const std::string& what) {
  if (!ok && std::find(r.violations.begin(), r.violations.end(), what) == r.violations.end()) {
    r.violations.push_back(what);
  }
}

}  // namespace

BenchReport run_bench(Fabric& fabric, client::Context& context, int iterations) {
  if (iterations < 1) throw std::invalid_argument("iterations must be at least 1");
  BenchReport report;
  ScenarioStats cold{"cold_open", {}};
  ScenarioStats warm{"warm_open", {}};
  ScenarioStats raw{"raw_invoke", {}};
  ScenarioStats shm{"shm_invoke", {}};
  ScenarioStats close{"close", {}};

  const Bytes big = builtin_image(ta_kind::kIncrement, kMaxImageSize);
  const Bytes shm_image = builtin_image(ta_kind::kShmem16);
  const auto ok = ReturnCode::kSuccess;
  fabric.quiesce();

  // Cold open: the TA is not resident; the 64 KiB image goes through the loader.
  for (int i = 0; i < iterations; ++i) {
    fabric.quiesce();
    client::Session s;
    const uint64_t loads = fabric.load_count();
    const auto t0 = Clock::now();
    const ReturnCode rc = context.open_session(s, kIncrementTaUuid, big);
    cold.samples_ns.push_back(since(t0));
    expect(report, rc == ok, "cold open failed");
    report.cold_open_loads += fabric.load_count() - loads;
    expect(report, fabric.load_count() - loads == 1, "cold open did not load exactly once");
    context.close_session(s);
  }

  // Warm open: a second concurrent session on the resident TA.
  {
    fabric.quiesce();
    client::Session anchor;
    expect(report, context.open_session(anchor, kIncrementTaUuid, big) == ok, "anchor open failed");
    for (int i = 0; i < iterations; ++i) {
      client::Session s;
      const uint64_t loads = fabric.load_count();
      const auto t0 = Clock::now();
      const ReturnCode rc = context.open_session(s, kIncrementTaUuid, big);
      warm.samples_ns.push_back(since(t0));
      expect(report, rc == ok, "warm open failed");
      report.warm_open_loads += fabric.load_count() - loads;
      expect(report, s.slot == anchor.slot, "warm open landed on another slot");
      context.close_session(s);
    }
    expect(report, report.warm_open_loads == 0, "warm open invoked the loader");

    // Raw and shared-memory invokes, interleaved so host noise hits both.
    client::Session mem;
    expect(report, context.open_session(mem, kShmem16TaUuid, shm_image) == ok, "shmem16 open failed");
    client::SharedMemory buf;
    expect(report, context.allocate_shared_memory(mem, 16, client::Direction::kOut, buf) == ok,
           "shared memory allocation failed");
    for (int i = 0; i < iterations; ++i) {
      client::Operation op;
      op.params[0] = client::Value{static_cast<uint32_t>(i), 0, client::Direction::kInout};
      auto t0 = Clock::now();
      ReturnCode rc = context.invoke_command(anchor, 0, op);
      raw.samples_ns.push_back(since(t0));
      expect(report, rc == ok && std::get<client::Value>(op.params[0]).a == static_cast<uint32_t>(i) + 1,
             "raw invoke returned a wrong value");

      client::Operation mop;
      mop.params[0] = client::MemRef{&buf};
      t0 = Clock::now();
      rc = context.invoke_command(mem, 0, mop);
      shm.samples_ns.push_back(since(t0));
      expect(report, rc == ok && buf.buffer.size() == 16 && buf.buffer[15] == 0x0F,
             "shm invoke returned wrong bytes");
    }
    context.close_session(mem);
    context.close_session(anchor);
  }

  // Close of the last session; slot cleanup runs behind the caller's back.
  for (int i = 0; i < iterations; ++i) {
    fabric.quiesce();
    client::Session s;
    expect(report, context.open_session(s, kIncrementTaUuid, big) == ok, "open before close failed");
    const auto t0 = Clock::now();
    context.close_session(s);
    close.samples_ns.push_back(since(t0));
  }
  fabric.quiesce();
  expect(report, fabric.audit().empty(), "fabric audit failed after bench");

  report.cold_warm_ratio = cold.mean_ns() / std::max(warm.mean_ns(), 1.0);
  report.shm_raw_ratio = shm.mean_ns() / std::max(raw.mean_ns(), 1.0);
  report.scenarios = {cold, warm, raw, shm, close};
  return report;
}

}  // namespace teeod
