#include "teeod/fabric.hpp"

#include <algorithm>
#include <chrono>

namespace teeod {

namespace {

constexpr uint32_t kTcmBaseAddress = 0xA0000000;

uint64_t elapsed_ns(std::chrono::steady_clock::time_point since) {
  return static_cast<uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - since)
          .count());
}

uint32_t align_up(uint64_t v) {
  return static_cast<uint32_t>((v + kCmAlignment - 1) / kCmAlignment * kCmAlignment);
}

}  // namespace

// ---------------------------------------------------------------------------
// CmRegion

CmRegion::CmRegion(std::size_t capacity) : capacity_(capacity), bytes_(capacity, 0) {
  if (capacity > UINT32_MAX) throw std::invalid_argument("CM capacity exceeds 32-bit addressing");
}

CmRegion::Allocation CmRegion::stage(std::span<const uint8_t> bytes) {
  std::lock_guard lock(mu_);
  // Empty images still occupy one byte so every allocation has its own offset.
  const uint64_t need = std::max<uint64_t>(bytes.size(), 1);
  uint64_t cursor = 0;
  for (const auto& [offset, size] : allocations_) {
    if (cursor + need <= offset) break;
    cursor = align_up(static_cast<uint64_t>(offset) + std::max<uint32_t>(size, 1));
  }
  if (cursor + need > capacity_) {
    throw FabricError(ReturnCode::kErrorOutOfMemory, ManagerStatus::kIdle,
                      "contiguous memory exhausted");
  }
  const auto offset = static_cast<uint32_t>(cursor);
  std::copy(bytes.begin(), bytes.end(), bytes_.begin() + offset);
  allocations_[offset] = static_cast<uint32_t>(bytes.size());
  return {offset, static_cast<uint32_t>(bytes.size())};
}

void CmRegion::release(uint32_t offset) {
  std::lock_guard lock(mu_);
  auto it = allocations_.find(offset);
  if (it == allocations_.end()) return;
  std::fill_n(bytes_.begin() + offset, it->second, 0);
  allocations_.erase(it);
}

Bytes CmRegion::read(uint32_t offset, uint32_t len) const {
  if (static_cast<uint64_t>(offset) + len > capacity_) {
    throw FabricError(ReturnCode::kErrorExcessData, ManagerStatus::kIdle, "CM read out of range");
  }
  std::lock_guard lock(mu_);
  return Bytes(bytes_.begin() + offset, bytes_.begin() + offset + len);
}

void CmRegion::write(uint32_t offset, std::span<const uint8_t> bytes) {
  if (static_cast<uint64_t>(offset) + bytes.size() > capacity_) {
    throw FabricError(ReturnCode::kErrorExcessData, ManagerStatus::kIdle, "CM write out of range");
  }
  std::lock_guard lock(mu_);
  std::copy(bytes.begin(), bytes.end(), bytes_.begin() + offset);
}

std::vector<CmRegion::Allocation> CmRegion::allocations() const {
  std::lock_guard lock(mu_);
  std::vector<Allocation> out;
  for (const auto& [offset, size] : allocations_) out.push_back({offset, size});
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void validate(const FabricConfig& config) {
  if (config.enclave_count < 1) {
    throw ConfigError("enclave_count: must be at least 1 (got " +
                      std::to_string(config.enclave_count) + ")");
  }
  const resources::Capacity cap = resources::max_enclaves(config.device);
  if (config.enclave_count > cap.count) {
    throw ConfigError("enclave_count: " + std::to_string(config.enclave_count) + " exceeds the " +
                      std::to_string(cap.count) + " enclaves that fit " + config.device.name +
                      " (bound by " + std::string(resources::to_string(cap.binding)) + ")");
  }
  if (config.cm_capacity < kMaxImageSize) {
    throw ConfigError("cm_capacity: must hold at least one 64 KiB image");
  }
}

// ---------------------------------------------------------------------------
// Fabric

uint32_t Fabric::tcm_base(int slot) {
  return kTcmBaseAddress + static_cast<uint32_t>(slot) * static_cast<uint32_t>(kTcmSize);
}

Fabric::Fabric(FabricConfig config) : config_(std::move(config)), cm_(config_.cm_capacity) {
  validate(config_);
  slots_.reserve(static_cast<std::size_t>(config_.enclave_count));
  for (int i = 0; i < config_.enclave_count; ++i) {
    auto slot = std::make_unique<Slot>();
    EnclaveOptions options;
    options.dma = config_.dma;
    options.quarantine_on_fault = config_.quarantine_on_fault;
    if (config_.uart_dir) options.uart_path = *config_.uart_dir / ("enclave" + std::to_string(i) + ".log");
    slot->enclave = std::make_unique<Enclave>(i, config_.registry, config_.services, &events_, options);
    slot->tcm_base = tcm_base(i);
    slots_.push_back(std::move(slot));
  }
  cleanup_worker_ = std::thread([this] { cleanup_loop(); });
}

Fabric::~Fabric() {
  {
    std::lock_guard lock(manager_mu_);
    stopping_ = true;
  }
  manager_cv_.notify_all();
  cleanup_worker_.join();
}

Fabric::Slot& Fabric::slot_at(int slot) {
  if (slot < 0 || slot >= slot_count()) {
    throw FabricError(ReturnCode::kErrorBadParameters, ManagerStatus::kIdle,
                      "no such slot " + std::to_string(slot));
  }
  return *slots_[static_cast<std::size_t>(slot)];
}

const Fabric::Slot& Fabric::slot_at(int slot) const {
  return const_cast<Fabric*>(this)->slot_at(slot);
}

Enclave& Fabric::enclave(int slot) { return *slot_at(slot).enclave; }

void Fabric::set_status(ManagerStatus status) {
  if (!is_valid_transition(regs_.status, status)) {
    throw std::logic_error("manager status " + std::string(to_string(regs_.status)) + " -> " +
                           std::string(to_string(status)));
  }
  regs_.status = status;
}

void Fabric::fail(ManagerStatus status, ReturnCode code, const std::string& what) {
  set_status(status);
  throw FabricError(code, status, what);
}

OpenResult Fabric::manager_open(const Uuid& uuid, uint32_t cm_addr, uint32_t size) {
  const auto start = std::chrono::steady_clock::now();
  std::unique_lock lock(manager_mu_);
  manager_cv_.wait(lock, [&] { return cleanups_pending_ == 0; });

  // The previous request's terminal status is acknowledged by the next one.
  if (regs_.status != ManagerStatus::kIdle) set_status(ManagerStatus::kIdle);
  regs_.uuid = uuid;
  regs_.addr = cm_addr;
  regs_.size = size;
  set_status(ManagerStatus::kLoading);

  auto log_open = [&](int slot, bool fresh) {
    Event e;
    e.kind = EventKind::kOpen;
    e.slot = slot;
    e.uuid = uuid;
    e.fields = {{"fresh", fresh ? "1" : "0"}};
    e.dur_ns = elapsed_ns(start);
    events_.record(std::move(e));
  };

  if (auto it = loaded_tas_.find(uuid); it != loaded_tas_.end()) {
    const int slot = it->second;
    ++slot_at(slot).reservations;
    set_status(ManagerStatus::kLoaded);
    log_open(slot, false);
    return {slot, false};
  }

  if (size > kMaxImageSize) {
    fail(ManagerStatus::kErrSize, ReturnCode::kErrorExcessData,
         "image of " + std::to_string(size) + " bytes exceeds the 64 KiB TCM");
  }
  if (static_cast<uint64_t>(cm_addr) + size > cm_.capacity()) {
    fail(ManagerStatus::kErrSize, ReturnCode::kErrorExcessData, "image lies outside CM");
  }

  int slot = -1;
  for (int i = 0; i < slot_count(); ++i) {
    if (!slots_[static_cast<std::size_t>(i)]->taken) {
      slot = i;
      break;
    }
  }
  if (slot < 0) fail(ManagerStatus::kErrFull, ReturnCode::kErrorOutOfEnclaves, "all enclaves are taken");

  Slot& s = *slots_[static_cast<std::size_t>(slot)];
  loader_copy_locked({cm_addr, size, s.tcm_base});

  // Plumbing check on what actually landed in the TCM; not authentication.
  bool valid = false;
  try {
    const TaImage image = decode_image(s.enclave->tcm_peek(0, size));
    valid = image.uuid == uuid && config_.registry.find(image.ta_kind) != nullptr;
  } catch (const ProtocolError&) {
    valid = false;
  }
  if (!valid) {
    s.enclave->assert_reset();
    fail(ManagerStatus::kErrFormat, ReturnCode::kErrorBadFormat,
         "staged image is malformed or does not carry " + uuid.to_string());
  }

  s.enclave->release_reset();
  s.taken = true;
  s.reservations = 1;
  loaded_tas_[uuid] = slot;
  set_status(ManagerStatus::kLoaded);
  log_open(slot, true);
  return {slot, true};
}

void Fabric::loader_copy(const LoadRequest& request) {
  std::lock_guard lock(manager_mu_);
  loader_copy_locked(request);
}

void Fabric::loader_copy_locked(const LoadRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  if (request.size > kMaxImageSize) {
    throw FabricError(ReturnCode::kErrorExcessData, ManagerStatus::kErrSize, "load larger than TCM");
  }
  if (static_cast<uint64_t>(request.addr_src) + request.size > cm_.capacity()) {
    throw FabricError(ReturnCode::kErrorExcessData, ManagerStatus::kErrSize, "load source outside CM");
  }
  int slot = -1;
  for (int i = 0; i < slot_count(); ++i) {
    if (slots_[static_cast<std::size_t>(i)]->tcm_base == request.addr_dst) slot = i;
  }
  if (slot < 0) {
    throw FabricError(ReturnCode::kErrorBadParameters, ManagerStatus::kIdle, "unknown TCM destination");
  }
  Slot& s = *slots_[static_cast<std::size_t>(slot)];
  if (s.taken) {
    throw FabricError(ReturnCode::kErrorAccessDenied, ManagerStatus::kIdle, "destination enclave is occupied");
  }
  s.enclave->assert_reset();
  const Bytes image = cm_.read(request.addr_src, request.size);
  config_.dma.charge(image.size());
  s.enclave->load_tcm(image);
  load_count_.fetch_add(1);

  Event e;
  e.kind = EventKind::kLoad;
  e.slot = slot;
  e.uuid = regs_.uuid;
  e.fields = {{"src", std::to_string(request.addr_src)}, {"size", std::to_string(request.size)}};
  e.dur_ns = elapsed_ns(start);
  events_.record(std::move(e));
}

void Fabric::release(int slot) {
  std::lock_guard lock(manager_mu_);
  Slot& s = slot_at(slot);
  if (s.reservations == 0) return;
  if (--s.reservations > 0) return;
  ++cleanups_pending_;
  cleanup_queue_.push_back(slot);
  manager_cv_.notify_all();
}

void Fabric::manager_close(int slot) {
  slot_at(slot);  // range check
  acquire(slot);
  try {
    close_slot(slot);
  } catch (...) {
    release_lease(slot);
    throw;
  }
  release_lease(slot);
}

void Fabric::close_slot(int slot) {
  const auto start = std::chrono::steady_clock::now();
  std::lock_guard lock(manager_mu_);
  Slot& s = *slots_[static_cast<std::size_t>(slot)];
  if (!s.taken) return;
  Uuid uuid;
  for (auto it = loaded_tas_.begin(); it != loaded_tas_.end(); ++it) {
    if (it->second == slot) {
      uuid = it->first;
      loaded_tas_.erase(it);
      break;
    }
  }
  s.enclave->assert_reset();
  s.reservations = 0;
  s.taken = false;

  Event e;
  e.kind = EventKind::kClose;
  e.slot = slot;
  e.uuid = uuid;
  e.dur_ns = elapsed_ns(start);
  events_.record(std::move(e));
}

void Fabric::cleanup_loop() {
  std::unique_lock lock(manager_mu_);
  for (;;) {
    manager_cv_.wait(lock, [&] { return stopping_ || !cleanup_queue_.empty(); });
    if (cleanup_queue_.empty()) return;  // stopping with nothing left
    const int slot = cleanup_queue_.front();
    cleanup_queue_.pop_front();
    lock.unlock();
    // A new reservation cannot arrive in between: manager_open waits for
    // pending cleanups before touching bookkeeping.
    manager_close(slot);
    lock.lock();
    --cleanups_pending_;
    manager_cv_.notify_all();
  }
}

void Fabric::quiesce() {
  std::unique_lock lock(manager_mu_);
  manager_cv_.wait(lock, [&] { return cleanups_pending_ == 0; });
}

// ---------------------------------------------------------------------------
// Communication agent

void Fabric::acquire(int slot) {
  Slot& s = slot_at(slot);
  std::unique_lock lock(s.queue_mu);
  const uint64_t ticket = s.next_ticket++;
  s.queue_cv.wait(lock, [&] { return s.serving == ticket; });
}

void Fabric::release_lease(int slot) {
  Slot& s = slot_at(slot);
  {
    std::lock_guard lock(s.queue_mu);
    ++s.serving;
  }
  s.queue_cv.notify_all();
}

Fabric::SlotLease::SlotLease(Fabric* fabric, int slot) : fabric_(fabric), slot_(slot) {}

Fabric::SlotLease::SlotLease(SlotLease&& other) noexcept : fabric_(other.fabric_), slot_(other.slot_) {
  other.fabric_ = nullptr;
}

Fabric::SlotLease::~SlotLease() {
  if (fabric_) fabric_->release_lease(slot_);
}

Fabric::SlotLease Fabric::lease(int slot) {
  acquire(slot);
  return SlotLease(this, slot);
}

void Fabric::SlotLease::shm_write(uint32_t offset, std::span<const uint8_t> data) {
  Slot& s = fabric_->slot_at(slot_);
  if (!s.taken) throw FabricError(ReturnCode::kErrorAccessDenied, ManagerStatus::kIdle, "slot is free");
  s.enclave->shm_write(offset, data);
}

Bytes Fabric::SlotLease::shm_read(uint32_t offset, uint32_t len) {
  Slot& s = fabric_->slot_at(slot_);
  if (!s.taken) throw FabricError(ReturnCode::kErrorAccessDenied, ManagerStatus::kIdle, "slot is free");
  return s.enclave->shm_read(offset, len);
}

void Fabric::SlotLease::shm_fill(uint32_t offset, uint32_t len, uint8_t value) {
  Slot& s = fabric_->slot_at(slot_);
  if (!s.taken) throw FabricError(ReturnCode::kErrorAccessDenied, ManagerStatus::kIdle, "slot is free");
  s.enclave->shm_fill(offset, len, value);
}

ReplyFrame Fabric::SlotLease::dispatch(const MailboxFrame& frame) {
  return fabric_->do_dispatch(slot_, frame);
}

ReplyFrame Fabric::comm_dispatch(int slot, const MailboxFrame& frame) {
  return lease(slot).dispatch(frame);
}

ReplyFrame Fabric::do_dispatch(int slot, const MailboxFrame& frame) {
  const auto start = std::chrono::steady_clock::now();
  Slot& s = slot_at(slot);
  ReplyFrame reply;
  reply.session_id = frame.session_id;
  reply.param_type = frame.param_type;
  reply.gp = frame.gp;
  reply.cmd_id = frame.cmd_id;
  if (!s.taken) {
    reply.code = ReturnCode::kErrorAccessDenied;
    return reply;
  }

  std::function<void(const DispatchTrace&)> tracer;
  {
    std::lock_guard lock(tracer_mu_);
    tracer = tracer_;
  }
  DispatchTrace trace;
  const FrameWords request = encode_frame(frame);
  if (tracer) {
    trace.slot = slot;
    trace.request = request;
    trace.shm_before = s.enclave->shm_peek();
  }

  const FrameWords words = s.enclave->deliver(request);
  try {
    reply = decode_reply(words);
  } catch (const ProtocolError&) {
    reply.code = ReturnCode::kErrorGeneric;
  }

  if (tracer) {
    trace.reply = words;
    trace.shm_after = s.enclave->shm_peek();
    tracer(trace);
  }

  Event e;
  e.kind = EventKind::kDispatch;
  e.slot = slot;
  {
    std::lock_guard lock(manager_mu_);
    for (const auto& [uuid, at] : loaded_tas_) {
      if (at == slot) e.uuid = uuid;
    }
  }
  e.fields = {{"op", std::to_string(static_cast<uint32_t>(frame.operation_id))},
              {"session", std::to_string(reply.session_id)},
              {"cmd", std::to_string(frame.cmd_id)},
              {"rc", to_string(reply.code)}};
  e.dur_ns = elapsed_ns(start);
  events_.record(std::move(e));
  return reply;
}

void Fabric::set_tracer(std::function<void(const DispatchTrace&)> tracer) {
  std::lock_guard lock(tracer_mu_);
  tracer_ = std::move(tracer);
}

// ---------------------------------------------------------------------------
// Inspection

std::vector<SlotRecord> Fabric::enclaves_list() const {
  std::lock_guard lock(manager_mu_);
  std::vector<SlotRecord> out;
  for (int i = 0; i < slot_count(); ++i) {
    const Slot& s = *slots_[static_cast<std::size_t>(i)];
    out.push_back({i, s.tcm_base, s.taken.load()});
  }
  return out;
}

std::map<Uuid, int> Fabric::loaded_tas() const {
  std::lock_guard lock(manager_mu_);
  return loaded_tas_;
}

ManagerRegisters Fabric::manager_registers() const {
  std::lock_guard lock(manager_mu_);
  return regs_;
}

int Fabric::reservations(int slot) const {
  std::lock_guard lock(manager_mu_);
  return slot_at(slot).reservations;
}

std::string Fabric::audit() const {
  std::lock_guard lock(manager_mu_);
  std::map<int, Uuid> by_slot;
  for (const auto& [uuid, slot] : loaded_tas_) {
    if (slot < 0 || slot >= slot_count()) return "loaded_tas maps " + uuid.to_string() + " to a bad slot";
    if (!by_slot.emplace(slot, uuid).second) {
      return "slot " + std::to_string(slot) + " is mapped by two UUIDs";
    }
  }
  for (int i = 0; i < slot_count(); ++i) {
    const Slot& s = *slots_[static_cast<std::size_t>(i)];
    const std::string where = "slot " + std::to_string(i) + ": ";
    const bool mapped = by_slot.count(i) != 0;
    if (s.taken != mapped) return where + "taken flag disagrees with loaded_tas";
    if (!s.taken) {
      if (s.reservations != 0) return where + "free slot holds reservations";
      if (s.enclave->state() != EnclaveState::kReset) return where + "free slot is not held in reset";
      continue;
    }
    try {
      const TaImage image = decode_image_prefix(s.enclave->tcm_peek(0, static_cast<uint32_t>(kTcmSize)));
      if (image.uuid != by_slot[i]) return where + "TCM holds a different TA than loaded_tas says";
    } catch (const ProtocolError&) {
      return where + "taken slot has no valid image in TCM";
    }
  }
  return {};
}

}  // namespace teeod
