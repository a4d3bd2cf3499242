#pragma once

// One enclave slot: a soft core modeled as a worker thread that sleeps in WFI
// until the communication agent raises INT, runs the bound TA in its ISR,
// writes the reply back into the mailbox and clears INT. TAs are native
// objects selected by the image's ta_kind; every memory access they make goes
// through TaEnv, which confines them to their TCM and the shared-memory
// ranges granted by the current frame.

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "teeod/crypto.hpp"
#include "teeod/events.hpp"
#include "teeod/protocol.hpp"
#include "teeod/storage.hpp"

namespace teeod {

enum class MemSpace { kTcm, kShm };

class MemoryFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal Core API services handed to TAs.
struct TeeServices {
  tee::Rng* rng = nullptr;
  tee::SecureStorage* storage = nullptr;
  tee::MonotonicCounter* counter = nullptr;
};

struct TaParam {
  ParamKind kind = ParamKind::kNone;
  uint32_t a = 0;  // value a, or shm offset
  uint32_t b = 0;  // value b, or length
};

class Enclave;

// Everything a TA can touch while one of its entry points runs.
class TaEnv {
 public:
  const Uuid& uuid() const { return uuid_; }
  std::span<const uint8_t> payload() const { return payload_; }

  ParamType param_types() const { return types_; }
  ParamKind kind(std::size_t i) const { return params_.at(i).kind; }
  // Output values are written back through the returned reference.
  TaParam& param(std::size_t i) { return params_.at(i); }

  // Faults with MemoryFault unless the whole range is inside the TCM or a
  // granted shared-memory range.
  Bytes read(MemSpace space, uint32_t offset, uint32_t len);
  void write(MemSpace space, uint32_t offset, std::span<const uint8_t> data);

  // Whole-parameter helpers for MEMREF i (offsets relative to the grant).
  uint32_t memref_size(std::size_t i) const;
  Bytes read_memref(std::size_t i);
  void write_memref(std::size_t i, std::span<const uint8_t> data, uint32_t at = 0);

  // Line-oriented UART of this enclave.
  void print(std::string_view line);
  // Abandons the handler if RST has been asserted meanwhile.
  void checkpoint() const;

  Bytes random_bytes(std::size_t n);
  uint64_t monotonic_counter();
  void storage_put(std::string_view object_id, std::span<const uint8_t> data);
  Bytes storage_get(std::string_view object_id);  // throws tee::StorageError
  void storage_delete(std::string_view object_id);
  bool storage_exists(std::string_view object_id);

 private:
  friend class Enclave;
  TaEnv(Enclave& enclave, const Uuid& uuid, std::span<const uint8_t> payload);

  struct Grant {
    uint32_t offset;
    uint32_t length;
  };
  bool granted(uint32_t offset, uint32_t len) const;
  tee::SecureStorage& storage();

  Enclave& enclave_;
  Uuid uuid_;
  std::span<const uint8_t> payload_;
  ParamType types_;
  std::array<TaParam, kNumParams> params_{};
  std::vector<Grant> grants_;
};

// The TA ABI.
class TrustedApp {
 public:
  virtual ~TrustedApp() = default;
  virtual ReturnCode open_session(TaEnv& env, uint32_t session_id) = 0;
  virtual ReturnCode invoke_command(TaEnv& env, uint32_t session_id, uint32_t cmd_id) = 0;
  virtual void close_session(TaEnv& env, uint32_t session_id) = 0;
  // Called once, after the last close_session and before the slot is wiped.
  virtual void destroy(TaEnv& env) = 0;
};

using TaFactory = std::function<std::unique_ptr<TrustedApp>(const TaImage&)>;

class TaRegistry {
 public:
  // increment, shmem16 and echo.
  static TaRegistry with_builtins();

  void add(uint32_t ta_kind, TaFactory factory);
  const TaFactory* find(uint32_t ta_kind) const;

 private:
  std::map<uint32_t, TaFactory> factories_;
};

namespace ta_kind {
inline constexpr uint32_t kIncrement = 1;
inline constexpr uint32_t kShmem16 = 2;
inline constexpr uint32_t kEcho = 3;
inline constexpr uint32_t kWallet = 16;
}  // namespace ta_kind

extern const Uuid kIncrementTaUuid;
extern const Uuid kShmem16TaUuid;
extern const Uuid kEchoTaUuid;

// Image for a builtin kind, zero-padded up to total_size bytes if larger than
// the bare header.
Bytes builtin_image(uint32_t kind, std::size_t total_size = kImageHeaderSize);

struct EnclaveOptions {
  DmaModel dma;
  // After a TA fault, answer everything with ERROR_GENERIC until reset.
  bool quarantine_on_fault = false;
  std::optional<std::filesystem::path> uart_path;
};

enum class EnclaveState { kReset, kWfi, kIsr };

std::string_view to_string(EnclaveState s);

struct EnclaveSnapshot {
  EnclaveState state = EnclaveState::kReset;
  bool rst_line = true;
  bool int_line = false;
  bool ta_bound = false;
  bool quarantined = false;
  uint32_t last_session_id = 0;
  std::size_t sessions = 0;
  FrameWords mailbox{};
  std::array<uint32_t, 16> registers{};
  Bytes tcm;
  Bytes shm;

  // TCM, mailbox, registers, session bookkeeping all zero.
  bool fully_zeroized() const;
};

class Enclave {
 public:
  Enclave(int index, const TaRegistry& registry, TeeServices services, EventLog* log,
          EnclaveOptions options);
  ~Enclave();
  Enclave(const Enclave&) = delete;
  Enclave& operator=(const Enclave&) = delete;

  int index() const { return index_; }

  // --- manager side ------------------------------------------------------
  // Wipes TCM, mailbox, registers, shared memory and sessions and drops the
  // TA. A handler in flight is abandoned at its next mediated access.
  void assert_reset();
  void release_reset();
  // Loader port. Only legal while RST is asserted.
  void load_tcm(std::span<const uint8_t> image);

  // --- communication agent side -------------------------------------------
  // Copies the request into the mailbox, raises INT and blocks until the core
  // clears it; returns the mailbox contents. A reset while waiting yields an
  // ERROR_GENERIC reply.
  FrameWords deliver(const FrameWords& request);

  // --- REE side of the shared-memory window --------------------------------
  Bytes shm_read(uint32_t offset, uint32_t len) const;
  void shm_write(uint32_t offset, std::span<const uint8_t> data);
  void shm_fill(uint32_t offset, uint32_t len, uint8_t value);

  // Debug ports: uncharged copies of the private stores.
  Bytes tcm_peek(uint32_t offset, uint32_t len) const;
  Bytes shm_peek() const;

  std::size_t active_sessions() const;
  EnclaveState state() const;
  EnclaveSnapshot snapshot() const;
  std::vector<std::string> uart_lines() const;

 private:
  friend class TaEnv;
  struct ResetAbort {};

  void run_loop();
  FrameWords handle(const FrameWords& request);
  ReplyFrame dispatch(const MailboxFrame& frame, TaEnv& env);
  bool bind_ta();
  void uart(std::string_view line);
  void check_alive() const;

  const int index_;
  const TaRegistry& registry_;
  TeeServices services_;
  EventLog* log_;
  EnclaveOptions options_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::atomic<bool> rst_line_{true};
  bool int_line_ = false;
  EnclaveState state_ = EnclaveState::kReset;
  uint64_t generation_ = 0;
  FrameWords mailbox_{};
  std::array<uint32_t, 16> regs_{};
  std::vector<uint8_t> tcm_;
  std::vector<uint8_t> shm_;

  // Touched only by the core thread in ISR, or by reset while the core is out
  // of ISR.
  std::unique_ptr<TrustedApp> ta_;
  std::optional<TaImage> image_;
  std::set<uint32_t> sessions_;
  uint32_t last_session_id_ = 0;  // ids are per-enclave, from 1
  bool quarantined_ = false;

  mutable std::mutex uart_mu_;
  std::vector<std::string> uart_lines_;
  std::ofstream uart_file_;

  std::thread core_;
};

}  // namespace teeod
