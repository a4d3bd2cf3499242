#pragma once

// Shared fixtures for the test binaries: scratch directories, a booted
// fabric with test-only TAs registered, and hex helpers.

#include <atomic>
#include <filesystem>
#include <memory>
#include <span>
#include <random>
#include <string>
#include <string_view>

#include "teeod/bytes.hpp"
#include "teeod/client_api.hpp"
#include "teeod/crypto.hpp"
#include "teeod/enclave.hpp"
#include "teeod/fabric.hpp"
#include "teeod/storage.hpp"

namespace testing {

using teeod::Bytes;

inline Bytes hex(std::string_view s) {
  auto b = teeod::from_hex(s);
  if (!b) throw std::invalid_argument("bad hex in test");
  return *b;
}

inline Bytes text(std::string_view s) { return Bytes(s.begin(), s.end()); }

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("teeod-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Test TA kinds, outside the builtin and wallet range.
namespace kind {
// cmd 1: write byte param1.b at param1.a in space param2.a (0 TCM, 1 SHM).
// cmd 2: read one byte the same way, returned in param3.a.
inline constexpr uint32_t kProbe = 100;
// open: fills TCM [kSentinelOffset, +kSentinelLen) with 0xA5.
// cmd 1: param0.a = number of nonzero bytes in that TCM range.
inline constexpr uint32_t kSentinel = 101;
// cmd 0: param0.a = next value of a per-instance counter kept in TCM.
inline constexpr uint32_t kStamp = 102;
// Counts entry-point calls into the global counters below.
inline constexpr uint32_t kCounting = 103;
}  // namespace kind

inline constexpr uint32_t kSentinelOffset = 0x8000;
inline constexpr uint32_t kSentinelLen = 0x1000;

struct Counters {
  std::atomic<int> opens{0};
  std::atomic<int> closes{0};
  std::atomic<int> destroys{0};
};
Counters& counters();

teeod::Uuid test_uuid(uint32_t n);
Bytes test_image(const teeod::Uuid& uuid, uint32_t kind, std::size_t total = teeod::kImageHeaderSize);

void register_test_tas(teeod::TaRegistry& registry);

// A booted fabric with builtin and test TAs and (optionally) storage.
struct Rig {
  explicit Rig(int enclaves = 4, uint64_t dma_ns_per_byte = 0, bool with_storage = false);
  ~Rig();

  TempDir dir;
  std::unique_ptr<teeod::tee::Rng> rng;
  std::unique_ptr<teeod::tee::SecureStorage> storage;
  teeod::tee::MonotonicCounter counter;
  std::unique_ptr<teeod::Fabric> fabric;
  std::unique_ptr<teeod::client::Context> context;
};

// Copies bytes so they end exactly at (or start exactly after) a PROT_NONE
// page; touching the guard kills the process.
class GuardedBuffer {
 public:
  enum class Guard { kAfter, kBefore };
  GuardedBuffer(std::span<const uint8_t> bytes, Guard guard);
  ~GuardedBuffer();
  GuardedBuffer(const GuardedBuffer&) = delete;
  GuardedBuffer& operator=(const GuardedBuffer&) = delete;
  std::span<const uint8_t> span() const { return {data_, size_}; }

 private:
  uint8_t* base_ = nullptr;
  std::size_t mapped_ = 0;
  const uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

}  // namespace testing
