#pragma once

// REE-side TEE Client API subset: contexts, sessions, operations and shared
// memory over a Fabric. Calls return a ReturnCode and fill out-parameters,
// in the manner of the TEEC_ functions they mirror.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <variant>

#include "teeod/fabric.hpp"
#include "teeod/protocol.hpp"

namespace teeod::client {

enum class Direction { kIn, kOut, kInout };

// A block of the session's 8 KiB window plus the REE buffer it mirrors.
// `in`/`inout` contents are copied into the window before each dispatch,
// `out`/`inout` windows are copied back afterwards.
struct SharedMemory {
  uint32_t offset = 0;
  uint32_t size = 0;
  Direction direction = Direction::kInout;
  Bytes buffer;  // always `size` bytes once allocated
  uint64_t owner = 0;
};

struct Value {
  uint32_t a = 0;
  uint32_t b = 0;
  Direction direction = Direction::kIn;
};

struct MemRef {
  SharedMemory* shm = nullptr;
  // Length reported back by the TA (e.g. the size it needed on SHORT_BUFFER).
  uint32_t returned_size = 0;
};

using Param = std::variant<std::monostate, Value, MemRef>;

struct Operation {
  std::array<Param, kNumParams> params;
};

struct Session {
  Uuid uuid;
  int slot = -1;
  uint32_t session_id = 0;

  bool is_open() const { return session_id != 0; }

 private:
  friend class Context;
  uint64_t tag_ = 0;
  std::map<uint32_t, uint32_t> blocks_;  // window offset -> size
};

// Param-type nibbles and gp words for an operation. Out-only values travel as
// zeros. Returns BAD_PARAMETERS for a MEMREF without a block.
ReturnCode marshal(const Operation& op, ParamType& type, std::array<uint32_t, kGpWords>& gp);
// Writes output values back into op. Buffers are handled by the caller.
void unmarshal_values(const ReplyFrame& reply, Operation& op);

class Context {
 public:
  explicit Context(Fabric& fabric);
  ~Context();
  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  // Stages the image (once per UUID for the lifetime of the context), asks the
  // manager for an enclave and opens a session on it.
  ReturnCode open_session(Session& session, const Uuid& uuid, std::span<const uint8_t> image);
  ReturnCode open_session(Session& session, const Uuid& uuid, const std::filesystem::path& image_path);
  ReturnCode invoke_command(Session& session, uint32_t cmd_id, Operation& op);
  // Closing a closed session is a no-op returning SUCCESS.
  ReturnCode close_session(Session& session);

  ReturnCode allocate_shared_memory(Session& session, uint32_t size, Direction direction,
                                    SharedMemory& out);
  void release_shared_memory(Session& session, SharedMemory& shm);

  Fabric& fabric() { return fabric_; }
  std::map<Uuid, CmRegion::Allocation> staged_images() const;

 private:
  ReturnCode stage(const Uuid& uuid, std::span<const uint8_t> image, CmRegion::Allocation& out);

  Fabric& fabric_;
  mutable std::mutex mu_;
  std::map<Uuid, CmRegion::Allocation> staged_;
};

}  // namespace teeod::client
