#pragma once

// Wire-level data model shared by the REE client, the PL agents and the
// enclaves: identifiers, mailbox frames, return codes, manager registers and
// the TA image container.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace teeod {

using Bytes = std::vector<uint8_t>;

inline constexpr std::size_t kTcmSize = 65536;
inline constexpr std::size_t kShmSize = 8192;
inline constexpr std::size_t kFrameWords = 12;
inline constexpr std::size_t kNumParams = 4;
inline constexpr std::size_t kGpWords = 8;
inline constexpr std::size_t kImageHeaderSize = 32;
inline constexpr std::size_t kMaxImageSize = kTcmSize;

enum class ProtocolErrc {
  kInvalidFrame,
  kImageTooLarge,   // ERR_SIZE
  kBadImageFormat,  // ERR_FORMAT
  kBadUuid,
};

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ProtocolErrc code() const noexcept { return code_; }

 private:
  ProtocolErrc code_;
};

class Uuid {
 public:
  constexpr Uuid() = default;
  constexpr explicit Uuid(const std::array<uint8_t, 16>& bytes) : bytes_(bytes) {}

  // Accepts the hyphenated 8-4-4-4-12 form (case-insensitive).
  static Uuid parse(std::string_view text);
  // Four little-endian register words, as written to the manager block.
  static Uuid from_words(const std::array<uint32_t, 4>& words);

  std::string to_string() const;
  std::array<uint32_t, 4> to_words() const;
  const std::array<uint8_t, 16>& bytes() const { return bytes_; }
  bool is_nil() const;

  friend bool operator==(const Uuid&, const Uuid&) = default;
  friend auto operator<=>(const Uuid&, const Uuid&) = default;

 private:
  std::array<uint8_t, 16> bytes_{};
};

struct UuidHash {
  std::size_t operator()(const Uuid& u) const noexcept;
};

enum class OperationId : uint32_t {
  kOpen = 1,
  kInvoke = 2,
  kClose = 3,
};

enum class ParamKind : uint8_t {
  kNone = 0,
  kValueIn = 1,
  kValueOut = 2,
  kValueInout = 3,
  kMemref = 5,
};

bool is_value(ParamKind k);
bool is_value_input(ParamKind k);
bool is_value_output(ParamKind k);

// Four 4-bit nibbles in the low half-word, one per logical parameter.
class ParamType {
 public:
  constexpr ParamType() = default;
  static ParamType of(ParamKind p0, ParamKind p1 = ParamKind::kNone,
                      ParamKind p2 = ParamKind::kNone, ParamKind p3 = ParamKind::kNone);
  // nullopt if any nibble is not a known kind or the upper half-word is set.
  static std::optional<ParamType> from_word(uint32_t packed);

  ParamKind at(std::size_t index) const;
  void set(std::size_t index, ParamKind kind);
  uint32_t packed() const { return packed_; }

  friend bool operator==(ParamType, ParamType) = default;

 private:
  uint32_t packed_ = 0;
};

// Numeric values follow the GlobalPlatform TEEC_/TEE_ result codes where one
// exists. Codes in the 0xFFFF3xxx range are specific to this fabric.
enum class ReturnCode : uint32_t {
  kSuccess = 0x00000000,
  kErrorGeneric = 0xFFFF0000,
  kErrorAccessDenied = 0xFFFF0001,
  kErrorBadFormat = 0xFFFF0005,
  kErrorBadParameters = 0xFFFF0006,
  kErrorItemNotFound = 0xFFFF0008,
  kErrorNotSupported = 0xFFFF000A,
  kErrorOutOfMemory = 0xFFFF000C,
  kErrorBusy = 0xFFFF000D,
  kErrorShortBuffer = 0xFFFF0010,
  kErrorExcessData = 0xFFFF0004,
  kErrorCorruptObject = 0xF0100001,
  kErrorOutOfEnclaves = 0xFFFF3001,
};

std::string to_string(ReturnCode rc);

using FrameWords = std::array<uint32_t, kFrameWords>;

// Request frame, REE -> TA. Word order: operation_id, session_id,
// param_type, gp[0..8), cmd_id. Logical parameter i owns gp[2i] and
// gp[2i+1]: (a, b) for VALUE, (shm offset, length) for MEMREF.
struct MailboxFrame {
  OperationId operation_id = OperationId::kOpen;
  uint32_t session_id = 0;
  ParamType param_type;
  std::array<uint32_t, kGpWords> gp{};
  uint32_t cmd_id = 0;

  friend bool operator==(const MailboxFrame&, const MailboxFrame&) = default;
};

// Reply frame, TA -> REE. Reuses the request storage; the return code takes
// the operation_id word.
struct ReplyFrame {
  ReturnCode code = ReturnCode::kSuccess;
  uint32_t session_id = 0;
  ParamType param_type;
  std::array<uint32_t, kGpWords> gp{};
  uint32_t cmd_id = 0;

  friend bool operator==(const ReplyFrame&, const ReplyFrame&) = default;
};

FrameWords encode_frame(const MailboxFrame& frame);
MailboxFrame decode_frame(std::span<const uint32_t> words);
FrameWords encode_reply(const ReplyFrame& reply);
ReplyFrame decode_reply(std::span<const uint32_t> words);

// True iff offset + length fits the shared-memory window without wrapping.
bool memref_in_window(uint32_t offset, uint32_t length, std::size_t window = kShmSize);

std::string format_words(std::span<const uint32_t> words);

enum class ManagerStatus : uint32_t {
  kIdle = 0,
  kLoading = 1,
  kLoaded = 2,
  kErrFull = 3,
  kErrSize = 4,
  kErrFormat = 5,
};

std::string_view to_string(ManagerStatus s);
// IDLE -> LOADING -> {LOADED | ERR_*} -> IDLE
bool is_valid_transition(ManagerStatus from, ManagerStatus to);

struct ManagerRegisters {
  Uuid uuid;
  uint32_t addr = 0;
  uint32_t size = 0;
  ManagerStatus status = ManagerStatus::kIdle;
};

inline constexpr std::array<uint8_t, 4> kImageMagic = {'T', 'E', 'O', 'D'};
inline constexpr uint32_t kImageVersion = 1;

struct TaImage {
  Uuid uuid;
  uint32_t ta_kind = 0;
  Bytes payload;

  friend bool operator==(const TaImage&, const TaImage&) = default;
};

// Layout (little-endian): "TEOD" | version u32 | uuid[16] | ta_kind u32 |
// payload_len u32 | payload.
Bytes encode_image(const Uuid& uuid, uint32_t ta_kind, std::span<const uint8_t> payload);
// The buffer must hold exactly one image.
TaImage decode_image(std::span<const uint8_t> bytes);
// Decodes an image at the start of a larger region (e.g. a TCM), ignoring
// whatever follows the declared payload.
TaImage decode_image_prefix(std::span<const uint8_t> region);

}  // namespace teeod
