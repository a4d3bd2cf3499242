#include "teeod/protocol.hpp"

#include <cstdio>
#include <cstring>
#include <sstream>

#include "teeod/bytes.hpp"

namespace teeod {

// ---------------------------------------------------------------------------
// Uuid

Uuid Uuid::parse(std::string_view text) {
  static constexpr std::size_t kDashes[] = {8, 13, 18, 23};
  if (text.size() != 36) throw ProtocolError(ProtocolErrc::kBadUuid, "uuid must be 36 characters");
  std::string hex;
  for (std::size_t i = 0; i < text.size(); ++i) {
    bool dash_pos = false;
    for (std::size_t d : kDashes) dash_pos |= (i == d);
    if (dash_pos) {
      if (text[i] != '-') throw ProtocolError(ProtocolErrc::kBadUuid, "malformed uuid");
      continue;
    }
    hex.push_back(text[i]);
  }
  auto raw = from_hex(hex);
  if (!raw) throw ProtocolError(ProtocolErrc::kBadUuid, "malformed uuid");
  std::array<uint8_t, 16> bytes{};
  std::memcpy(bytes.data(), raw->data(), 16);
  return Uuid(bytes);
}

Uuid Uuid::from_words(const std::array<uint32_t, 4>& words) {
  std::array<uint8_t, 16> bytes{};
  for (std::size_t i = 0; i < 4; ++i) store_le32(bytes.data() + 4 * i, words[i]);
  return Uuid(bytes);
}

std::string Uuid::to_string() const {
  std::string hex = to_hex(bytes_);
  return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
         hex.substr(16, 4) + "-" + hex.substr(20, 12);
}

std::array<uint32_t, 4> Uuid::to_words() const {
  std::array<uint32_t, 4> words{};
  for (std::size_t i = 0; i < 4; ++i) words[i] = load_le32(bytes_.data() + 4 * i);
  return words;
}

bool Uuid::is_nil() const {
  for (uint8_t b : bytes_)
    if (b != 0) return false;
  return true;
}

std::size_t UuidHash::operator()(const Uuid& u) const noexcept {
  // FNV-1a
  std::size_t h = 1469598103934665603ull;
  for (uint8_t b : u.bytes()) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parameters

bool is_value(ParamKind k) {
  return k == ParamKind::kValueIn || k == ParamKind::kValueOut || k == ParamKind::kValueInout;
}
bool is_value_input(ParamKind k) {
  return k == ParamKind::kValueIn || k == ParamKind::kValueInout;
}
bool is_value_output(ParamKind k) {
  return k == ParamKind::kValueOut || k == ParamKind::kValueInout;
}

namespace {

bool is_known_kind(uint32_t nibble) {
  switch (nibble) {
    case 0:
    case 1:
    case 2:
    case 3:
    case 5:
      return true;
    default:
      return false;
  }
}

}  // namespace

ParamType ParamType::of(ParamKind p0, ParamKind p1, ParamKind p2, ParamKind p3) {
  ParamType t;
  t.set(0, p0);
  t.set(1, p1);
  t.set(2, p2);
  t.set(3, p3);
  return t;
}

std::optional<ParamType> ParamType::from_word(uint32_t packed) {
  if (packed >> 16) return std::nullopt;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (!is_known_kind((packed >> (4 * i)) & 0xF)) return std::nullopt;
  }
  ParamType t;
  t.packed_ = packed;
  return t;
}

ParamKind ParamType::at(std::size_t index) const {
  return static_cast<ParamKind>((packed_ >> (4 * index)) & 0xF);
}

void ParamType::set(std::size_t index, ParamKind kind) {
  const uint32_t shift = static_cast<uint32_t>(4 * index);
  packed_ = (packed_ & ~(0xFu << shift)) | (static_cast<uint32_t>(kind) << shift);
}

bool memref_in_window(uint32_t offset, uint32_t length, std::size_t window) {
  return static_cast<uint64_t>(offset) + static_cast<uint64_t>(length) <= window;
}

std::string to_string(ReturnCode rc) {
  switch (rc) {
    case ReturnCode::kSuccess: return "SUCCESS";
    case ReturnCode::kErrorGeneric: return "ERROR_GENERIC";
    case ReturnCode::kErrorAccessDenied: return "ERROR_ACCESS_DENIED";
    case ReturnCode::kErrorBadFormat: return "ERROR_BAD_FORMAT";
    case ReturnCode::kErrorBadParameters: return "ERROR_BAD_PARAMETERS";
    case ReturnCode::kErrorItemNotFound: return "ERROR_ITEM_NOT_FOUND";
    case ReturnCode::kErrorNotSupported: return "ERROR_NOT_SUPPORTED";
    case ReturnCode::kErrorOutOfMemory: return "ERROR_OUT_OF_MEMORY";
    case ReturnCode::kErrorBusy: return "ERROR_BUSY";
    case ReturnCode::kErrorShortBuffer: return "ERROR_SHORT_BUFFER";
    case ReturnCode::kErrorExcessData: return "ERROR_EXCESS_DATA";
    case ReturnCode::kErrorCorruptObject: return "ERROR_CORRUPT_OBJECT";
    case ReturnCode::kErrorOutOfEnclaves: return "ERROR_OUT_OF_ENCLAVES";
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08X", static_cast<uint32_t>(rc));
  return buf;
}

// ---------------------------------------------------------------------------
// Frames

namespace {

void check_memrefs(ParamType type, const std::array<uint32_t, kGpWords>& gp) {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (type.at(i) == ParamKind::kMemref && !memref_in_window(gp[2 * i], gp[2 * i + 1])) {
      throw ProtocolError(ProtocolErrc::kInvalidFrame,
                          "memref " + std::to_string(i) + " exceeds shared-memory window");
    }
  }
}

}  // namespace

FrameWords encode_frame(const MailboxFrame& frame) {
  const auto op = static_cast<uint32_t>(frame.operation_id);
  if (op < 1 || op > 3) throw ProtocolError(ProtocolErrc::kInvalidFrame, "unknown operation_id");
  if (!ParamType::from_word(frame.param_type.packed()))
    throw ProtocolError(ProtocolErrc::kInvalidFrame, "malformed param_type");
  check_memrefs(frame.param_type, frame.gp);

  FrameWords w{};
  w[0] = op;
  w[1] = frame.session_id;
  w[2] = frame.param_type.packed();
  for (std::size_t i = 0; i < kGpWords; ++i) w[3 + i] = frame.gp[i];
  w[11] = frame.cmd_id;
  return w;
}

MailboxFrame decode_frame(std::span<const uint32_t> words) {
  if (words.size() != kFrameWords)
    throw ProtocolError(ProtocolErrc::kInvalidFrame, "frame must be 12 words");
  if (words[0] < 1 || words[0] > 3)
    throw ProtocolError(ProtocolErrc::kInvalidFrame, "unknown operation_id");
  auto type = ParamType::from_word(words[2]);
  if (!type) throw ProtocolError(ProtocolErrc::kInvalidFrame, "malformed param_type");

  MailboxFrame f;
  f.operation_id = static_cast<OperationId>(words[0]);
  f.session_id = words[1];
  f.param_type = *type;
  for (std::size_t i = 0; i < kGpWords; ++i) f.gp[i] = words[3 + i];
  f.cmd_id = words[11];
  check_memrefs(f.param_type, f.gp);
  return f;
}

FrameWords encode_reply(const ReplyFrame& reply) {
  FrameWords w{};
  w[0] = static_cast<uint32_t>(reply.code);
  w[1] = reply.session_id;
  w[2] = reply.param_type.packed();
  for (std::size_t i = 0; i < kGpWords; ++i) w[3 + i] = reply.gp[i];
  w[11] = reply.cmd_id;
  return w;
}

ReplyFrame decode_reply(std::span<const uint32_t> words) {
  if (words.size() != kFrameWords)
    throw ProtocolError(ProtocolErrc::kInvalidFrame, "frame must be 12 words");
  ReplyFrame r;
  r.code = static_cast<ReturnCode>(words[0]);
  r.session_id = words[1];
  auto type = ParamType::from_word(words[2]);
  if (!type) throw ProtocolError(ProtocolErrc::kInvalidFrame, "malformed param_type");
  r.param_type = *type;
  for (std::size_t i = 0; i < kGpWords; ++i) r.gp[i] = words[3 + i];
  r.cmd_id = words[11];
  return r;
}

std::string format_words(std::span<const uint32_t> words) {
  std::string out;
  char buf[12];
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s%08x", i ? "," : "", words[i]);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manager registers

std::string_view to_string(ManagerStatus s) {
  switch (s) {
    case ManagerStatus::kIdle: return "IDLE";
    case ManagerStatus::kLoading: return "LOADING";
    case ManagerStatus::kLoaded: return "LOADED";
    case ManagerStatus::kErrFull: return "ERR_FULL";
    case ManagerStatus::kErrSize: return "ERR_SIZE";
    case ManagerStatus::kErrFormat: return "ERR_FORMAT";
  }
  return "?";
}

bool is_valid_transition(ManagerStatus from, ManagerStatus to) {
  switch (from) {
    case ManagerStatus::kIdle:
      return to == ManagerStatus::kLoading;
    case ManagerStatus::kLoading:
      return to == ManagerStatus::kLoaded || to == ManagerStatus::kErrFull ||
             to == ManagerStatus::kErrSize || to == ManagerStatus::kErrFormat;
    default:
      return to == ManagerStatus::kIdle;
  }
}

// ---------------------------------------------------------------------------
// TA image

Bytes encode_image(const Uuid& uuid, uint32_t ta_kind, std::span<const uint8_t> payload) {
  if (payload.size() > kMaxImageSize - kImageHeaderSize)
    throw ProtocolError(ProtocolErrc::kImageTooLarge, "image exceeds 65536 bytes");
  Bytes out(kImageHeaderSize + payload.size());
  std::memcpy(out.data(), kImageMagic.data(), 4);
  store_le32(out.data() + 4, kImageVersion);
  std::memcpy(out.data() + 8, uuid.bytes().data(), 16);
  store_le32(out.data() + 24, ta_kind);
  store_le32(out.data() + 28, static_cast<uint32_t>(payload.size()));
  if (!payload.empty()) std::memcpy(out.data() + kImageHeaderSize, payload.data(), payload.size());
  return out;
}

namespace {

TaImage parse_image(std::span<const uint8_t> region, bool exact) {
  if (exact && region.size() > kMaxImageSize)
    throw ProtocolError(ProtocolErrc::kImageTooLarge, "image exceeds 65536 bytes");
  if (region.size() < kImageHeaderSize)
    throw ProtocolError(ProtocolErrc::kBadImageFormat, "truncated image header");
  if (std::memcmp(region.data(), kImageMagic.data(), 4) != 0)
    throw ProtocolError(ProtocolErrc::kBadImageFormat, "bad image magic");
  if (load_le32(region.data() + 4) != kImageVersion)
    throw ProtocolError(ProtocolErrc::kBadImageFormat, "unsupported image version");

  const uint64_t payload_len = load_le32(region.data() + 28);
  const uint64_t available = region.size() - kImageHeaderSize;
  if (exact ? payload_len != available : payload_len > available)
    throw ProtocolError(ProtocolErrc::kBadImageFormat, "payload length mismatch");
  if (payload_len + kImageHeaderSize > kMaxImageSize)
    throw ProtocolError(ProtocolErrc::kImageTooLarge, "image exceeds 65536 bytes");

  TaImage img;
  std::array<uint8_t, 16> id{};
  std::memcpy(id.data(), region.data() + 8, 16);
  img.uuid = Uuid(id);
  img.ta_kind = load_le32(region.data() + 24);
  auto body = region.subspan(kImageHeaderSize, static_cast<std::size_t>(payload_len));
  img.payload.assign(body.begin(), body.end());
  return img;
}

}  // namespace

TaImage decode_image(std::span<const uint8_t> bytes) { return parse_image(bytes, true); }

TaImage decode_image_prefix(std::span<const uint8_t> region) { return parse_image(region, false); }

}  // namespace teeod
