// teeod: boot the simulated fabric, run the demo TAs, the latency bench, the
// resource report and the wallet client.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "teeod/bytes.hpp"
#include "teeod/resources.hpp"
#include "teeod/sim.hpp"
#include "teeod/wallet.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<int> enclaves;
  std::optional<std::string> device;
  std::optional<uint64_t> seed;
  std::optional<std::string> storage_dir;
  std::optional<std::string> uart_dir;
  std::optional<uint64_t> dma_ns_per_byte;
};

teeod::SimConfig make_config(const GlobalFlags& g) {
  teeod::SimConfig c = g.config.empty() ? teeod::SimConfig{} : teeod::SimConfig::load(g.config);
  if (g.enclaves) c.enclave_count = *g.enclaves;
  if (g.device) c.device = *g.device;
  if (g.seed) c.rng_seed = *g.seed;
  if (g.storage_dir) c.storage_dir = *g.storage_dir;
  if (g.uart_dir) c.uart_dir = *g.uart_dir;
  if (g.dma_ns_per_byte) {
    c.dma_per_byte = *g.dma_ns_per_byte > 0;
    c.dma_ns_per_byte = *g.dma_ns_per_byte;
  }
  return c;
}

int cmd_boot(const GlobalFlags& g) {
  teeod::Simulator sim(make_config(g));
  const auto& cfg = sim.config();
  std::cout << "device=" << sim.fabric().config().device.name << " enclaves=" << cfg.enclave_count
            << " tcm_size=" << teeod::kTcmSize << " shm_size=" << teeod::kShmSize
            << " storage_dir=" << cfg.storage_dir.string() << "\n";
  for (const auto& slot : sim.fabric().enclaves_list()) {
    char base[16];
    std::snprintf(base, sizeof(base), "0x%08x", slot.tcm_base);
    std::cout << "slot=" << slot.slot_index << " tcm_base=" << base
              << " state=" << teeod::to_string(sim.fabric().enclave(slot.slot_index).state())
              << " taken=" << (slot.taken ? 1 : 0) << "\n";
  }
  return 0;
}

int cmd_demo(const GlobalFlags& g, const std::string& name, uint32_t value) {
  if (name != "increment" && name != "shmem16") {
    std::cerr << "demo: unknown demo '" << name << "' (expected increment or shmem16)\n";
    return 2;
  }
  teeod::Simulator sim(make_config(g));
  if (name == "increment") {
    std::cout << teeod::demo_increment(sim.context(), value) << "\n";
  } else {
    std::cout << teeod::to_hex(teeod::demo_shmem16(sim.context())) << "\n";
  }
  for (const auto& e : sim.fabric().events().events()) std::clog << e.to_line() << "\n";
  return 0;
}

int cmd_bench(const GlobalFlags& g, int iterations) {
  teeod::Simulator sim(make_config(g));
  const teeod::BenchReport report = teeod::run_bench(sim.fabric(), sim.context(), iterations);
  std::cout << report.to_text();
  return report.violations.empty() ? 0 : 1;
}

int cmd_resources(const GlobalFlags& g) {
  const int n = g.enclaves.value_or(4);
  const auto device = teeod::resources::DeviceProfile::resolve(g.device.value_or("ZU3EG"));
  const std::string text = teeod::resources::report(n, device);
  if (n < 1) {
    std::cerr << text;
    return 1;
  }
  std::cout << text;
  return 0;
}

int cmd_wallet(const GlobalFlags& g, const std::vector<std::string>& args) {
  teeod::Simulator sim(make_config(g));
  return teeod::wallet::run_client(args, sim.context(), std::cout, std::cerr);
}

int cmd_mkimage(const std::string& kind, std::size_t size, const std::string& out) {
  teeod::Bytes image;
  if (kind == "wallet") {
    image = teeod::wallet::ta_image();
  } else if (kind == "increment") {
    image = teeod::builtin_image(teeod::ta_kind::kIncrement, size);
  } else if (kind == "shmem16") {
    image = teeod::builtin_image(teeod::ta_kind::kShmem16, size);
  } else if (kind == "echo") {
    image = teeod::builtin_image(teeod::ta_kind::kEcho, size);
  } else {
    std::cerr << "mkimage: unknown kind '" << kind << "'\n";
    return 2;
  }
  std::ofstream f(out, std::ios::binary);
  f.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
  if (!f) {
    std::cerr << "mkimage: cannot write " << out << "\n";
    return 1;
  }
  std::cout << "wrote " << image.size() << " bytes to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TEE-on-FPGA fabric simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "key=value simulator config file");
  app.add_option("--enclaves", g.enclaves, "enclave slots (resources: design size)");
  app.add_option("--device", g.device, "device profile: ZU3EG or a profile file");
  app.add_option("--seed", g.seed, "RNG seed (default: host entropy)");
  app.add_option("--storage-dir", g.storage_dir, "trusted storage directory");
  app.add_option("--uart-dir", g.uart_dir, "directory for per-enclave UART logs");
  app.add_option("--dma-ns-per-byte", g.dma_ns_per_byte, "per-byte transfer cost, 0 disables");

  auto* boot = app.add_subcommand("boot", "boot the fabric and print the slot table");

  std::string demo_name;
  uint32_t demo_value = 41;
  auto* demo = app.add_subcommand("demo", "run a builtin TA through open/invoke/close");
  demo->add_option("name", demo_name, "increment | shmem16")->required();
  demo->add_option("--value", demo_value, "input for the increment demo");

  int iterations = 100;
  auto* bench = app.add_subcommand("bench", "run the latency scenarios");
  bench->add_option("--iterations", iterations, "samples per scenario")->check(CLI::PositiveNumber);

  auto* resources = app.add_subcommand("resources", "print FPGA utilization for --enclaves N");

  auto* wallet = app.add_subcommand("wallet", "bitcoin wallet client: <command_id> <pin> [-a args...]");
  wallet->prefix_command();

  std::string kind;
  std::size_t size = teeod::kImageHeaderSize;
  std::string out;
  auto* mkimage = app.add_subcommand("mkimage", "write a TA image file");
  mkimage->add_option("--kind", kind, "increment | shmem16 | echo | wallet")->required();
  mkimage->add_option("--size", size, "zero-pad builtin images to this many bytes");
  mkimage->add_option("-o,--output", out, "output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*boot) return cmd_boot(g);
    if (*demo) return cmd_demo(g, demo_name, demo_value);
    if (*bench) return cmd_bench(g, iterations);
    if (*resources) return cmd_resources(g);
    if (*wallet) return cmd_wallet(g, wallet->remaining());
    if (*mkimage) return cmd_mkimage(kind, size, out);
  } catch (const teeod::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
