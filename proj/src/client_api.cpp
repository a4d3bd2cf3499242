#include "teeod/client_api.hpp"

#include <atomic>
#include <fstream>
#include <iterator>

namespace teeod::client {

namespace {

std::atomic<uint64_t> g_next_session_tag{1};

ParamKind value_kind(Direction d) {
  switch (d) {
    case Direction::kIn: return ParamKind::kValueIn;
    case Direction::kOut: return ParamKind::kValueOut;
    case Direction::kInout: return ParamKind::kValueInout;
  }
  return ParamKind::kNone;
}

bool copies_in(Direction d) { return d != Direction::kOut; }
bool copies_out(Direction d) { return d != Direction::kIn; }

}  // namespace

ReturnCode marshal(const Operation& op, ParamType& type, std::array<uint32_t, kGpWords>& gp) {
  type = ParamType{};
  gp.fill(0);
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const Param& p = op.params[i];
    if (const auto* v = std::get_if<Value>(&p)) {
      type.set(i, value_kind(v->direction));
      if (v->direction != Direction::kOut) {
        gp[2 * i] = v->a;
        gp[2 * i + 1] = v->b;
      }
    } else if (const auto* m = std::get_if<MemRef>(&p)) {
      if (!m->shm || m->shm->owner == 0) return ReturnCode::kErrorBadParameters;
      type.set(i, ParamKind::kMemref);
      gp[2 * i] = m->shm->offset;
      gp[2 * i + 1] = m->shm->size;
    }
  }
  return ReturnCode::kSuccess;
}

void unmarshal_values(const ReplyFrame& reply, Operation& op) {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (auto* v = std::get_if<Value>(&op.params[i])) {
      if (copies_out(v->direction)) {
        v->a = reply.gp[2 * i];
        v->b = reply.gp[2 * i + 1];
      }
    } else if (auto* m = std::get_if<MemRef>(&op.params[i])) {
      m->returned_size = reply.gp[2 * i + 1];
    }
  }
}

Context::Context(Fabric& fabric) : fabric_(fabric) {}

Context::~Context() {
  std::lock_guard lock(mu_);
  for (const auto& [uuid, alloc] : staged_) fabric_.cm_release(alloc.offset);
}

std::map<Uuid, CmRegion::Allocation> Context::staged_images() const {
  std::lock_guard lock(mu_);
  return staged_;
}

ReturnCode Context::stage(const Uuid& uuid, std::span<const uint8_t> image, CmRegion::Allocation& out) {
  std::lock_guard lock(mu_);
  if (auto it = staged_.find(uuid); it != staged_.end()) {
    out = it->second;
    return ReturnCode::kSuccess;
  }
  try {
    out = fabric_.cm_stage(image);
  } catch (const FabricError& e) {
    return e.code();
  }
  staged_[uuid] = out;
  return ReturnCode::kSuccess;
}

ReturnCode Context::open_session(Session& session, const Uuid& uuid, std::span<const uint8_t> image) {
  if (session.is_open()) return ReturnCode::kErrorBadParameters;
  if (image.size() > kMaxImageSize) return ReturnCode::kErrorExcessData;
  try {
    if (decode_image(image).uuid != uuid) return ReturnCode::kErrorBadFormat;
  } catch (const ProtocolError&) {
    return ReturnCode::kErrorBadFormat;
  }

  CmRegion::Allocation staged{};
  if (ReturnCode rc = stage(uuid, image, staged); rc != ReturnCode::kSuccess) return rc;

  OpenResult opened;
  try {
    opened = fabric_.manager_open(uuid, staged.offset, staged.size);
  } catch (const FabricError& e) {
    return e.code();
  }

  MailboxFrame frame;
  frame.operation_id = OperationId::kOpen;
  const ReplyFrame reply = fabric_.comm_dispatch(opened.slot, frame);
  if (reply.code != ReturnCode::kSuccess || reply.session_id == 0) {
    fabric_.release(opened.slot);
    return reply.code == ReturnCode::kSuccess ? ReturnCode::kErrorGeneric : reply.code;
  }
  session.uuid = uuid;
  session.slot = opened.slot;
  session.session_id = reply.session_id;
  session.tag_ = g_next_session_tag.fetch_add(1);
  session.blocks_.clear();
  return ReturnCode::kSuccess;
}

ReturnCode Context::open_session(Session& session, const Uuid& uuid,
                                 const std::filesystem::path& image_path) {
  std::ifstream in(image_path, std::ios::binary);
  if (!in) return ReturnCode::kErrorItemNotFound;
  const Bytes image((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return open_session(session, uuid, image);
}

ReturnCode Context::invoke_command(Session& session, uint32_t cmd_id, Operation& op) {
  if (!session.is_open()) return ReturnCode::kErrorBadParameters;

  MailboxFrame frame;
  frame.operation_id = OperationId::kInvoke;
  frame.session_id = session.session_id;
  frame.cmd_id = cmd_id;
  if (ReturnCode rc = marshal(op, frame.param_type, frame.gp); rc != ReturnCode::kSuccess) return rc;
  for (const Param& p : op.params) {
    const auto* m = std::get_if<MemRef>(&p);
    if (m && (m->shm->owner != session.tag_ || m->shm->buffer.size() != m->shm->size)) {
      return ReturnCode::kErrorBadParameters;
    }
  }

  ReplyFrame reply;
  try {
    Fabric::SlotLease lease = fabric_.lease(session.slot);
    for (const Param& p : op.params) {
      const auto* m = std::get_if<MemRef>(&p);
      if (!m || m->shm->size == 0) continue;
      if (copies_in(m->shm->direction)) {
        lease.shm_write(m->shm->offset, m->shm->buffer);
      } else {
        lease.shm_fill(m->shm->offset, m->shm->size, 0);
      }
    }
    reply = lease.dispatch(frame);
    if (reply.code == ReturnCode::kSuccess) {
      for (const Param& p : op.params) {
        const auto* m = std::get_if<MemRef>(&p);
        if (!m || m->shm->size == 0 || !copies_out(m->shm->direction)) continue;
        m->shm->buffer = lease.shm_read(m->shm->offset, m->shm->size);
      }
    }
  } catch (const FabricError& e) {
    return e.code();
  } catch (const MemoryFault&) {
    return ReturnCode::kErrorAccessDenied;
  }
  unmarshal_values(reply, op);
  return reply.code;
}

ReturnCode Context::close_session(Session& session) {
  if (!session.is_open()) return ReturnCode::kSuccess;
  MailboxFrame frame;
  frame.operation_id = OperationId::kClose;
  frame.session_id = session.session_id;
  ReturnCode rc = ReturnCode::kSuccess;
  try {
    rc = fabric_.comm_dispatch(session.slot, frame).code;
  } catch (const FabricError& e) {
    rc = e.code();
  }
  fabric_.release(session.slot);
  session.session_id = 0;
  session.slot = -1;
  session.tag_ = 0;
  session.blocks_.clear();
  return rc;
}

ReturnCode Context::allocate_shared_memory(Session& session, uint32_t size, Direction direction,
                                           SharedMemory& out) {
  if (!session.is_open()) return ReturnCode::kErrorBadParameters;
  if (size > kShmSize) return ReturnCode::kErrorOutOfMemory;
  uint64_t cursor = 0;
  if (size > 0) {
    for (const auto& [offset, len] : session.blocks_) {
      if (cursor + size <= offset) break;
      cursor = static_cast<uint64_t>(offset) + len;
    }
    if (cursor + size > kShmSize) return ReturnCode::kErrorOutOfMemory;
    session.blocks_[static_cast<uint32_t>(cursor)] = size;
  }
  out.offset = static_cast<uint32_t>(cursor);
  out.size = size;
  out.direction = direction;
  out.buffer.assign(size, 0);
  out.owner = session.tag_;
  return ReturnCode::kSuccess;
}

void Context::release_shared_memory(Session& session, SharedMemory& shm) {
  if (shm.owner != 0 && shm.owner == session.tag_ && shm.size > 0) session.blocks_.erase(shm.offset);
  shm.owner = 0;
  shm.size = 0;
  shm.buffer.clear();
}

}  // namespace teeod::client
