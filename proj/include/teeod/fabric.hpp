#pragma once

// The three PL agents: the TEE manager (slot bookkeeping, reset lines), the TA
// loader (CM -> TCM copies) and the communication agent (mailbox routing).

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "teeod/enclave.hpp"
#include "teeod/events.hpp"
#include "teeod/protocol.hpp"
#include "teeod/resources.hpp"

namespace teeod {

// A manager or loader request was refused. code() is what the client API
// reports; status() is the manager status register value that accompanied it
// (kIdle when the failure did not go through the manager).
class FabricError : public std::runtime_error {
 public:
  FabricError(ReturnCode code, ManagerStatus status, const std::string& what)
      : std::runtime_error(what), code_(code), status_(status) {}
  ReturnCode code() const noexcept { return code_; }
  ManagerStatus status() const noexcept { return status_; }

 private:
  ReturnCode code_;
  ManagerStatus status_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kDefaultCmCapacity = 16u << 20;
inline constexpr std::size_t kCmAlignment = 64;

// Flat contiguous-memory region with a first-fit allocator.
class CmRegion {
 public:
  struct Allocation {
    uint32_t offset;
    uint32_t size;
  };

  explicit CmRegion(std::size_t capacity = kDefaultCmCapacity);

  // Throws FabricError(ERROR_OUT_OF_MEMORY) when no gap is large enough.
  Allocation stage(std::span<const uint8_t> bytes);
  // Unknown offsets are ignored.
  void release(uint32_t offset);

  Bytes read(uint32_t offset, uint32_t len) const;
  // Overwrites staged bytes in place (tests use this to corrupt images).
  void write(uint32_t offset, std::span<const uint8_t> bytes);
  std::size_t capacity() const { return capacity_; }
  std::vector<Allocation> allocations() const;

 private:
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::map<uint32_t, uint32_t> allocations_;  // offset -> size
  std::vector<uint8_t> bytes_;
};

struct LoadRequest {
  uint32_t addr_src = 0;
  uint32_t size = 0;
  uint32_t addr_dst = 0;  // tcm_base of the target slot
};

struct SlotRecord {
  int slot_index = 0;
  uint32_t tcm_base = 0;
  bool taken = false;
};

struct OpenResult {
  int slot = -1;
  bool fresh_load = false;
};

// One completed mailbox round trip, with the slot's shared memory as the
// enclave saw it on entry and left it on exit.
struct DispatchTrace {
  int slot = -1;
  FrameWords request{};
  FrameWords reply{};
  Bytes shm_before;
  Bytes shm_after;
};

struct FabricConfig {
  int enclave_count = 4;
  std::size_t cm_capacity = kDefaultCmCapacity;
  resources::DeviceProfile device = resources::DeviceProfile::zu3eg();
  DmaModel dma;
  bool quarantine_on_fault = false;
  std::optional<std::filesystem::path> uart_dir;  // enclave<i>.log per slot
  TaRegistry registry = TaRegistry::with_builtins();
  TeeServices services;
};

// Throws ConfigError naming the offending field.
void validate(const FabricConfig& config);

class Fabric {
 public:
  explicit Fabric(FabricConfig config);
  ~Fabric();
  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  // Exclusive, FIFO-ordered access to one slot's mailbox and shared-memory
  // window. Client copy-in, dispatch and copy-out happen under one lease.
  class SlotLease {
   public:
    SlotLease(SlotLease&& other) noexcept;
    SlotLease& operator=(SlotLease&&) = delete;
    ~SlotLease();

    int slot() const { return slot_; }
    // REE-side window access; FabricError(ERROR_ACCESS_DENIED) on a free slot.
    void shm_write(uint32_t offset, std::span<const uint8_t> data);
    Bytes shm_read(uint32_t offset, uint32_t len);
    void shm_fill(uint32_t offset, uint32_t len, uint8_t value);
    ReplyFrame dispatch(const MailboxFrame& frame);

   private:
    friend class Fabric;
    SlotLease(Fabric* fabric, int slot);
    Fabric* fabric_;
    int slot_;
  };

  // --- manager agent -------------------------------------------------------
  // Reuses the slot already holding uuid or loads the staged image into the
  // lowest free slot. Every successful call reserves the slot once; pair it
  // with release().
  OpenResult manager_open(const Uuid& uuid, uint32_t cm_addr, uint32_t size);
  // Drops one reservation. The last one schedules manager_close on the
  // cleanup worker and returns immediately.
  void release(int slot);
  // Resets and wipes the slot and marks it free. No-op on a free slot.
  void manager_close(int slot);
  // Blocks until every scheduled cleanup has finished.
  void quiesce();

  // --- loader agent --------------------------------------------------------
  void loader_copy(const LoadRequest& request);

  // --- communication agent -------------------------------------------------
  SlotLease lease(int slot);
  ReplyFrame comm_dispatch(int slot, const MailboxFrame& frame);

  // --- contiguous memory ---------------------------------------------------
  CmRegion::Allocation cm_stage(std::span<const uint8_t> image) { return cm_.stage(image); }
  void cm_release(uint32_t offset) { cm_.release(offset); }
  CmRegion& cm() { return cm_; }

  // --- inspection ------------------------------------------------------------
  int slot_count() const { return static_cast<int>(slots_.size()); }
  Enclave& enclave(int slot);
  std::vector<SlotRecord> enclaves_list() const;
  std::map<Uuid, int> loaded_tas() const;
  ManagerRegisters manager_registers() const;
  uint64_t load_count() const { return load_count_.load(); }
  int reservations(int slot) const;
  EventLog& events() { return events_; }
  const FabricConfig& config() const { return config_; }
  // Empty when enclaves_list, loaded_tas, reservations and slot contents
  // agree; otherwise a description of the first disagreement found.
  std::string audit() const;

  void set_tracer(std::function<void(const DispatchTrace&)> tracer);

  static uint32_t tcm_base(int slot);

 private:
  struct Slot {
    std::unique_ptr<Enclave> enclave;
    uint32_t tcm_base = 0;
    std::atomic<bool> taken{false};
    int reservations = 0;
    // FIFO ticket lock guarding mailbox and window access.
    std::mutex queue_mu;
    std::condition_variable queue_cv;
    uint64_t next_ticket = 0;
    uint64_t serving = 0;
  };

  void acquire(int slot);
  void release_lease(int slot);
  Slot& slot_at(int slot);
  const Slot& slot_at(int slot) const;
  void set_status(ManagerStatus status);
  [[noreturn]] void fail(ManagerStatus status, ReturnCode code, const std::string& what);
  void loader_copy_locked(const LoadRequest& request);
  void close_slot(int slot);
  void cleanup_loop();
  ReplyFrame do_dispatch(int slot, const MailboxFrame& frame);

  FabricConfig config_;
  CmRegion cm_;
  EventLog events_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::atomic<uint64_t> load_count_{0};

  mutable std::mutex manager_mu_;
  std::condition_variable manager_cv_;
  ManagerRegisters regs_;
  std::map<Uuid, int> loaded_tas_;
  std::deque<int> cleanup_queue_;
  int cleanups_pending_ = 0;
  bool stopping_ = false;

  std::mutex tracer_mu_;
  std::function<void(const DispatchTrace&)> tracer_;

  std::thread cleanup_worker_;
};

}  // namespace teeod
