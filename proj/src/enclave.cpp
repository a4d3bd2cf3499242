#include "teeod/enclave.hpp"

#include <algorithm>
#include <cstring>

namespace teeod {

// ---------------------------------------------------------------------------
// TaEnv

TaEnv::TaEnv(Enclave& enclave, const Uuid& uuid, std::span<const uint8_t> payload)
    : enclave_(enclave), uuid_(uuid), payload_(payload) {}

bool TaEnv::granted(uint32_t offset, uint32_t len) const {
  const uint64_t end = static_cast<uint64_t>(offset) + len;
  for (const Grant& g : grants_) {
    if (offset >= g.offset && end <= static_cast<uint64_t>(g.offset) + g.length) return true;
  }
  return false;
}

Bytes TaEnv::read(MemSpace space, uint32_t offset, uint32_t len) {
  checkpoint();
  const uint64_t end = static_cast<uint64_t>(offset) + len;
  if (space == MemSpace::kTcm) {
    if (end > kTcmSize) throw MemoryFault("tcm read out of bounds");
    auto first = enclave_.tcm_.begin() + offset;
    return Bytes(first, first + len);
  }
  if (!granted(offset, len)) throw MemoryFault("shm read outside granted range");
  enclave_.options_.dma.charge(len);
  auto first = enclave_.shm_.begin() + offset;
  return Bytes(first, first + len);
}

void TaEnv::write(MemSpace space, uint32_t offset, std::span<const uint8_t> data) {
  checkpoint();
  const uint64_t end = static_cast<uint64_t>(offset) + data.size();
  if (space == MemSpace::kTcm) {
    if (end > kTcmSize) throw MemoryFault("tcm write out of bounds");
    std::copy(data.begin(), data.end(), enclave_.tcm_.begin() + offset);
    return;
  }
  if (data.size() > kShmSize || !granted(offset, static_cast<uint32_t>(data.size())))
    throw MemoryFault("shm write outside granted range");
  enclave_.options_.dma.charge(data.size());
  std::copy(data.begin(), data.end(), enclave_.shm_.begin() + offset);
}

uint32_t TaEnv::memref_size(std::size_t i) const {
  if (params_.at(i).kind != ParamKind::kMemref) throw MemoryFault("parameter is not a memref");
  return grants_.at(i).length;
}

Bytes TaEnv::read_memref(std::size_t i) {
  const uint32_t len = memref_size(i);
  return read(MemSpace::kShm, grants_[i].offset, len);
}

void TaEnv::write_memref(std::size_t i, std::span<const uint8_t> data, uint32_t at) {
  const uint32_t len = memref_size(i);
  if (static_cast<uint64_t>(at) + data.size() > len) throw MemoryFault("write past memref end");
  write(MemSpace::kShm, grants_[i].offset + at, data);
}

void TaEnv::print(std::string_view line) { enclave_.uart(line); }

void TaEnv::checkpoint() const { enclave_.check_alive(); }

Bytes TaEnv::random_bytes(std::size_t n) {
  checkpoint();
  if (!enclave_.services_.rng) throw std::runtime_error("no rng service");
  return enclave_.services_.rng->random_bytes(n);
}

uint64_t TaEnv::monotonic_counter() {
  if (!enclave_.services_.counter) throw std::runtime_error("no counter service");
  return enclave_.services_.counter->next();
}

tee::SecureStorage& TaEnv::storage() {
  checkpoint();
  if (!enclave_.services_.storage) throw std::runtime_error("no storage service");
  return *enclave_.services_.storage;
}

void TaEnv::storage_put(std::string_view object_id, std::span<const uint8_t> data) {
  storage().put(uuid_, object_id, data);
}

Bytes TaEnv::storage_get(std::string_view object_id) { return storage().get(uuid_, object_id); }

void TaEnv::storage_delete(std::string_view object_id) { storage().remove(uuid_, object_id); }

bool TaEnv::storage_exists(std::string_view object_id) {
  return storage().exists(uuid_, object_id);
}

// ---------------------------------------------------------------------------
// Builtin TAs

namespace {

// Returns a value provided by the CA, incremented by one.
class IncrementTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override { return ReturnCode::kSuccess; }
  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t cmd_id) override {
    if (cmd_id != 0 || env.kind(0) != ParamKind::kValueInout) return ReturnCode::kErrorBadParameters;
    env.param(0).a += 1;  // wraps mod 2^32
    return ReturnCode::kSuccess;
  }
  void close_session(TaEnv&, uint32_t) override {}
  void destroy(TaEnv&) override {}
};

// Writes 0x00..0x0F into the first 16 bytes of MEMREF 0.
class Shmem16Ta final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override { return ReturnCode::kSuccess; }
  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t cmd_id) override {
    if (cmd_id != 0 || env.kind(0) != ParamKind::kMemref) return ReturnCode::kErrorBadParameters;
    if (env.memref_size(0) < 16) {
      env.param(0).b = 16;
      return ReturnCode::kErrorShortBuffer;
    }
    std::array<uint8_t, 16> seq{};
    for (uint8_t i = 0; i < 16; ++i) seq[i] = i;
    env.write_memref(0, seq);
    env.param(0).b = 16;
    return ReturnCode::kSuccess;
  }
  void close_session(TaEnv&, uint32_t) override {}
  void destroy(TaEnv&) override {}
};

// Copies parameter 0 (value or memref) into parameter 1.
class EchoTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override { return ReturnCode::kSuccess; }
  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t) override {
    const ParamKind in = env.kind(0);
    const ParamKind out = env.kind(1);
    if (is_value_input(in) && is_value_output(out)) {
      env.param(1).a = env.param(0).a;
      env.param(1).b = env.param(0).b;
      return ReturnCode::kSuccess;
    }
    if (in == ParamKind::kMemref && out == ParamKind::kMemref) {
      Bytes data = env.read_memref(0);
      if (env.memref_size(1) < data.size()) {
        env.param(1).b = static_cast<uint32_t>(data.size());
        return ReturnCode::kErrorShortBuffer;
      }
      env.write_memref(1, data);
      env.param(1).b = static_cast<uint32_t>(data.size());
      return ReturnCode::kSuccess;
    }
    return ReturnCode::kErrorBadParameters;
  }
  void close_session(TaEnv&, uint32_t) override {}
  void destroy(TaEnv&) override {}
};

}  // namespace

const Uuid kIncrementTaUuid = Uuid::parse("7e0a7a10-0001-4c1e-9d0f-7465656f6401");
const Uuid kShmem16TaUuid = Uuid::parse("7e0a7a10-0002-4c1e-9d0f-7465656f6402");
const Uuid kEchoTaUuid = Uuid::parse("7e0a7a10-0003-4c1e-9d0f-7465656f6403");

TaRegistry TaRegistry::with_builtins() {
  TaRegistry r;
  r.add(ta_kind::kIncrement, [](const TaImage&) { return std::make_unique<IncrementTa>(); });
  r.add(ta_kind::kShmem16, [](const TaImage&) { return std::make_unique<Shmem16Ta>(); });
  r.add(ta_kind::kEcho, [](const TaImage&) { return std::make_unique<EchoTa>(); });
  return r;
}

void TaRegistry::add(uint32_t kind, TaFactory factory) { factories_[kind] = std::move(factory); }

const TaFactory* TaRegistry::find(uint32_t kind) const {
  auto it = factories_.find(kind);
  return it == factories_.end() ? nullptr : &it->second;
}

Bytes builtin_image(uint32_t kind, std::size_t total_size) {
  Uuid uuid;
  switch (kind) {
    case ta_kind::kIncrement: uuid = kIncrementTaUuid; break;
    case ta_kind::kShmem16: uuid = kShmem16TaUuid; break;
    case ta_kind::kEcho: uuid = kEchoTaUuid; break;
    default: throw std::invalid_argument("not a builtin TA kind");
  }
  const std::size_t payload = total_size > kImageHeaderSize ? total_size - kImageHeaderSize : 0;
  return encode_image(uuid, kind, Bytes(payload, 0));
}

// ---------------------------------------------------------------------------
// Enclave

std::string_view to_string(EnclaveState s) {
  switch (s) {
    case EnclaveState::kReset: return "RESET";
    case EnclaveState::kWfi: return "WFI";
    case EnclaveState::kIsr: return "ISR";
  }
  return "?";
}

bool EnclaveSnapshot::fully_zeroized() const {
  auto zero = [](const auto& c) { return std::all_of(c.begin(), c.end(), [](auto v) { return v == 0; }); };
  return zero(tcm) && zero(mailbox) && zero(registers) && sessions == 0 && last_session_id == 0 &&
         !ta_bound &&
         !int_line && state == EnclaveState::kReset;
}

Enclave::Enclave(int index, const TaRegistry& registry, TeeServices services, EventLog* log,
                 EnclaveOptions options)
    : index_(index),
      registry_(registry),
      services_(services),
      log_(log),
      options_(std::move(options)),
      tcm_(kTcmSize, 0),
      shm_(kShmSize, 0) {
  core_ = std::thread([this] { run_loop(); });
}

Enclave::~Enclave() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
    rst_line_ = true;
    ++generation_;
  }
  cv_.notify_all();
  core_.join();
}

void Enclave::check_alive() const {
  if (rst_line_.load(std::memory_order_acquire)) throw ResetAbort{};
}

void Enclave::assert_reset() {
  std::unique_lock lock(mu_);
  rst_line_ = true;
  ++generation_;
  cv_.notify_all();
  cv_.wait(lock, [&] { return state_ != EnclaveState::kIsr; });

  std::fill(tcm_.begin(), tcm_.end(), 0);
  std::fill(shm_.begin(), shm_.end(), 0);
  mailbox_.fill(0);
  regs_.fill(0);
  int_line_ = false;
  state_ = EnclaveState::kReset;
  ta_.reset();
  image_.reset();
  sessions_.clear();
  last_session_id_ = 0;
  quarantined_ = false;
  cv_.notify_all();
}

void Enclave::release_reset() {
  std::lock_guard lock(mu_);
  rst_line_ = false;
  state_ = EnclaveState::kWfi;
  cv_.notify_all();
}

void Enclave::load_tcm(std::span<const uint8_t> image) {
  std::lock_guard lock(mu_);
  if (!rst_line_) throw std::logic_error("TCM load while enclave is running");
  if (image.size() > kTcmSize) throw std::length_error("image larger than TCM");
  std::copy(image.begin(), image.end(), tcm_.begin());
  std::fill(tcm_.begin() + static_cast<std::ptrdiff_t>(image.size()), tcm_.end(), 0);
}

FrameWords Enclave::deliver(const FrameWords& request) {
  std::unique_lock lock(mu_);
  auto failed = [] {
    ReplyFrame r;
    r.code = ReturnCode::kErrorGeneric;
    return encode_reply(r);
  };
  if (rst_line_ || state_ != EnclaveState::kWfi) return failed();
  const uint64_t gen = generation_;
  mailbox_ = request;
  int_line_ = true;
  cv_.notify_all();
  cv_.wait(lock, [&] { return !int_line_ || generation_ != gen; });
  if (generation_ != gen) return failed();
  return mailbox_;
}

void Enclave::run_loop() {
  std::unique_lock lock(mu_);
  for (;;) {
    cv_.wait(lock, [&] { return stop_ || (int_line_ && !rst_line_); });
    if (stop_) return;

    state_ = EnclaveState::kIsr;
    const uint64_t gen = generation_;
    const FrameWords request = mailbox_;
    std::copy(request.begin(), request.end(), regs_.begin());
    regs_[13] = static_cast<uint32_t>(kTcmSize);  // sp at top of TCM
    lock.unlock();

    FrameWords reply{};
    bool abandoned = false;
    try {
      reply = handle(request);
    } catch (const ResetAbort&) {
      abandoned = true;
    }

    lock.lock();
    if (abandoned || generation_ != gen) {
      // assert_reset() owns the cleanup.
      state_ = EnclaveState::kReset;
      cv_.notify_all();
      continue;
    }
    mailbox_ = reply;
    int_line_ = false;
    state_ = EnclaveState::kWfi;
    cv_.notify_all();
  }
}

bool Enclave::bind_ta() {
  if (ta_) return true;
  try {
    TaImage image = decode_image_prefix(tcm_);
    const TaFactory* factory = registry_.find(image.ta_kind);
    if (!factory) return false;
    ta_ = (*factory)(image);
    image_ = std::move(image);
    return ta_ != nullptr;
  } catch (const ProtocolError&) {
    return false;
  }
}

FrameWords Enclave::handle(const FrameWords& request) {
  MailboxFrame frame;
  try {
    frame = decode_frame(request);
  } catch (const ProtocolError&) {
    ReplyFrame r;
    r.code = ReturnCode::kErrorBadParameters;
    return encode_reply(r);
  }

  ReplyFrame reply;
  reply.session_id = frame.session_id;
  reply.param_type = frame.param_type;
  reply.gp = frame.gp;
  reply.cmd_id = frame.cmd_id;

  if (quarantined_) {
    reply.code = ReturnCode::kErrorGeneric;
    return encode_reply(reply);
  }
  if (!bind_ta()) {
    reply.code = ReturnCode::kErrorBadFormat;
    return encode_reply(reply);
  }

  TaEnv env(*this, image_->uuid, image_->payload);
  env.types_ = frame.param_type;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    env.params_[i] = TaParam{frame.param_type.at(i), frame.gp[2 * i], frame.gp[2 * i + 1]};
    if (env.params_[i].kind == ParamKind::kMemref) {
      env.grants_.push_back({frame.gp[2 * i], frame.gp[2 * i + 1]});
    } else {
      env.grants_.push_back({0, 0});
    }
  }

  try {
    reply = dispatch(frame, env);
  } catch (const MemoryFault&) {
    reply.code = ReturnCode::kErrorAccessDenied;
    quarantined_ = options_.quarantine_on_fault;
  } catch (const tee::StorageError& e) {
    reply.code = e.code();
  } catch (const std::exception&) {
    reply.code = ReturnCode::kErrorGeneric;
    quarantined_ = options_.quarantine_on_fault;
  }
  regs_[0] = static_cast<uint32_t>(reply.code);
  return encode_reply(reply);
}

ReplyFrame Enclave::dispatch(const MailboxFrame& frame, TaEnv& env) {
  ReplyFrame reply;
  reply.session_id = frame.session_id;
  reply.param_type = frame.param_type;
  reply.gp = frame.gp;
  reply.cmd_id = frame.cmd_id;

  auto collect_outputs = [&] {
    for (std::size_t i = 0; i < kNumParams; ++i) {
      if (env.params_[i].kind == ParamKind::kNone) continue;
      reply.gp[2 * i] = env.params_[i].a;
      reply.gp[2 * i + 1] = env.params_[i].b;
      if (env.params_[i].kind == ParamKind::kMemref) reply.gp[2 * i] = frame.gp[2 * i];
    }
  };

  switch (frame.operation_id) {
    case OperationId::kOpen: {
      const uint32_t id = last_session_id_ + 1;
      reply.code = ta_->open_session(env, id);
      collect_outputs();
      if (reply.code == ReturnCode::kSuccess) {
        std::lock_guard lock(mu_);
        sessions_.insert(id);
        last_session_id_ = id;
        reply.session_id = id;
      } else {
        reply.session_id = 0;
      }
      return reply;
    }
    case OperationId::kInvoke: {
      if (!sessions_.count(frame.session_id)) {
        reply.code = ReturnCode::kErrorBadParameters;
        return reply;
      }
      reply.code = ta_->invoke_command(env, frame.session_id, frame.cmd_id);
      collect_outputs();
      return reply;
    }
    case OperationId::kClose: {
      if (!sessions_.count(frame.session_id)) {
        reply.code = ReturnCode::kErrorBadParameters;
        return reply;
      }
      ta_->close_session(env, frame.session_id);
      bool last = false;
      {
        std::lock_guard lock(mu_);
        sessions_.erase(frame.session_id);
        last = sessions_.empty();
      }
      if (last) {
        ta_->destroy(env);
        ta_.reset();
        if (log_) {
          Event e;
          e.kind = EventKind::kDestroy;
          e.slot = index_;
          e.uuid = image_->uuid;
          log_->record(std::move(e));
        }
      }
      reply.code = ReturnCode::kSuccess;
      return reply;
    }
  }
  reply.code = ReturnCode::kErrorBadParameters;
  return reply;
}

void Enclave::uart(std::string_view line) {
  std::lock_guard lock(uart_mu_);
  uart_lines_.emplace_back(line);
  if (options_.uart_path) {
    if (!uart_file_.is_open()) {
      std::error_code ec;
      std::filesystem::create_directories(options_.uart_path->parent_path(), ec);
      uart_file_.open(*options_.uart_path, std::ios::app);
    }
    uart_file_ << line << '\n';
    uart_file_.flush();
  }
}

Bytes Enclave::shm_read(uint32_t offset, uint32_t len) const {
  if (!memref_in_window(offset, len)) throw MemoryFault("shm window overrun");
  std::lock_guard lock(mu_);
  options_.dma.charge(len);
  return Bytes(shm_.begin() + offset, shm_.begin() + offset + len);
}

void Enclave::shm_write(uint32_t offset, std::span<const uint8_t> data) {
  if (data.size() > kShmSize || !memref_in_window(offset, static_cast<uint32_t>(data.size())))
    throw MemoryFault("shm window overrun");
  std::lock_guard lock(mu_);
  options_.dma.charge(data.size());
  std::copy(data.begin(), data.end(), shm_.begin() + offset);
}

void Enclave::shm_fill(uint32_t offset, uint32_t len, uint8_t value) {
  if (!memref_in_window(offset, len)) throw MemoryFault("shm window overrun");
  std::lock_guard lock(mu_);
  options_.dma.charge(len);
  std::fill_n(shm_.begin() + offset, len, value);
}

Bytes Enclave::tcm_peek(uint32_t offset, uint32_t len) const {
  if (static_cast<uint64_t>(offset) + len > kTcmSize) throw MemoryFault("tcm peek out of bounds");
  std::lock_guard lock(mu_);
  return Bytes(tcm_.begin() + offset, tcm_.begin() + offset + len);
}

Bytes Enclave::shm_peek() const {
  std::lock_guard lock(mu_);
  return shm_;
}

std::size_t Enclave::active_sessions() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

EnclaveState Enclave::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

EnclaveSnapshot Enclave::snapshot() const {
  std::lock_guard lock(mu_);
  EnclaveSnapshot s;
  s.state = state_;
  s.rst_line = rst_line_;
  s.int_line = int_line_;
  s.ta_bound = ta_ != nullptr;
  s.quarantined = quarantined_;
  s.last_session_id = last_session_id_;
  s.sessions = sessions_.size();
  s.mailbox = mailbox_;
  s.registers = regs_;
  s.tcm = tcm_;
  s.shm = shm_;
  return s;
}

std::vector<std::string> Enclave::uart_lines() const {
  std::lock_guard lock(uart_mu_);
  return uart_lines_;
}

}  // namespace teeod
