#include "support.hpp"

#include <sys/mman.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>

#include "teeod/wallet.hpp"

namespace testing {

using namespace teeod;

Counters& counters() {
  static Counters c;
  return c;
}

Uuid test_uuid(uint32_t n) {
  std::array<uint8_t, 16> b{0x5e, 0x57, 0x7a, 0x00};
  store_le32(b.data() + 12, n);
  return Uuid(b);
}

Bytes test_image(const Uuid& uuid, uint32_t kind, std::size_t total) {
  const std::size_t payload = total > kImageHeaderSize ? total - kImageHeaderSize : 0;
  return encode_image(uuid, kind, Bytes(payload, 0));
}

namespace {

class ProbeTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override { return ReturnCode::kSuccess; }
  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t cmd) override {
    const MemSpace space = env.param(2).a == 0 ? MemSpace::kTcm : MemSpace::kShm;
    const uint32_t at = env.param(1).a;
    if (cmd == 1) {
      const uint8_t v = static_cast<uint8_t>(env.param(1).b);
      env.write(space, at, std::span<const uint8_t>(&v, 1));
      return ReturnCode::kSuccess;
    }
    if (cmd == 2) {
      env.param(3).a = env.read(space, at, 1).at(0);
      return ReturnCode::kSuccess;
    }
    return ReturnCode::kErrorBadParameters;
  }
  void close_session(TaEnv&, uint32_t) override {}
  void destroy(TaEnv&) override {}
};

class SentinelTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv& env, uint32_t) override {
    const Bytes seen = env.read(MemSpace::kTcm, kSentinelOffset, kSentinelLen);
    observed_ = static_cast<uint32_t>(std::count_if(seen.begin(), seen.end(), [](uint8_t b) { return b != 0; }));
    env.write(MemSpace::kTcm, kSentinelOffset, Bytes(kSentinelLen, 0xA5));
    return ReturnCode::kSuccess;
  }
  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t cmd) override {
    if (cmd != 1) return ReturnCode::kErrorBadParameters;
    env.param(0).a = observed_;
    return ReturnCode::kSuccess;
  }
  void close_session(TaEnv&, uint32_t) override {}
  void destroy(TaEnv&) override {}

 private:
  uint32_t observed_ = 0;  // nonzero bytes found before the first write
};

class StampTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override { return ReturnCode::kSuccess; }
  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t) override {
    const Bytes cur = env.read(MemSpace::kTcm, 0x100, 4);
    const uint32_t next = load_le32(cur.data()) + 1;
    uint8_t out[4];
    store_le32(out, next);
    env.write(MemSpace::kTcm, 0x100, out);
    env.param(0).a = next;
    return ReturnCode::kSuccess;
  }
  void close_session(TaEnv&, uint32_t) override {}
  void destroy(TaEnv&) override {}
};

class CountingTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override {
    ++counters().opens;
    return ReturnCode::kSuccess;
  }
  ReturnCode invoke_command(TaEnv&, uint32_t, uint32_t) override { return ReturnCode::kSuccess; }
  void close_session(TaEnv&, uint32_t) override { ++counters().closes; }
  void destroy(TaEnv&) override { ++counters().destroys; }
};

}  // namespace

void register_test_tas(TaRegistry& registry) {
  registry.add(kind::kProbe, [](const TaImage&) { return std::make_unique<ProbeTa>(); });
  registry.add(kind::kSentinel, [](const TaImage&) { return std::make_unique<SentinelTa>(); });
  registry.add(kind::kStamp, [](const TaImage&) { return std::make_unique<StampTa>(); });
  registry.add(kind::kCounting, [](const TaImage&) { return std::make_unique<CountingTa>(); });
}

Rig::Rig(int enclaves, uint64_t dma_ns_per_byte, bool with_storage) {
  rng = std::make_unique<tee::Rng>(uint64_t{42});
  if (with_storage) {
    storage = std::make_unique<tee::SecureStorage>(dir.path() / "storage",
                                                   tee::DeviceKey::from_seed("test-device"), *rng);
  }
  FabricConfig fc;
  fc.enclave_count = enclaves;
  fc.dma = DmaModel{dma_ns_per_byte};
  register_test_tas(fc.registry);
  wallet::register_ta(fc.registry);
  fc.services = TeeServices{rng.get(), storage.get(), &counter};
  fabric = std::make_unique<Fabric>(std::move(fc));
  context = std::make_unique<client::Context>(*fabric);
}

Rig::~Rig() {
  context.reset();
  fabric.reset();
}

GuardedBuffer::GuardedBuffer(std::span<const uint8_t> bytes, Guard guard) : size_(bytes.size()) {
  const std::size_t page = static_cast<std::size_t>(sysconf(_SC_PAGESIZE));
  const std::size_t body = (bytes.size() + page - 1) / page * page;
  mapped_ = body + page;
  void* p = mmap(nullptr, mapped_, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  if (p == MAP_FAILED) throw std::runtime_error("mmap failed");
  base_ = static_cast<uint8_t*>(p);
  uint8_t* start = nullptr;
  if (guard == Guard::kAfter) {
    mprotect(base_ + body, page, PROT_NONE);
    start = base_ + body - bytes.size();
  } else {
    mprotect(base_, page, PROT_NONE);
    start = base_ + page;
  }
  if (!bytes.empty()) std::memcpy(start, bytes.data(), bytes.size());
  data_ = start;
}

GuardedBuffer::~GuardedBuffer() { munmap(base_, mapped_); }

}  // namespace testing
