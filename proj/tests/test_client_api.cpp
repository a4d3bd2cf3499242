#include <doctest.h>

#include <fstream>
#include <random>

#include "support.hpp"
#include "teeod/client_api.hpp"

using namespace teeod;
using namespace teeod::client;
using testing::Rig;
using testing::test_image;
using testing::test_uuid;

namespace {

struct Snapshot {
  std::vector<SlotRecord> slots;
  std::map<Uuid, int> loaded;
  uint64_t loads;
  std::vector<int> reservations;

  explicit Snapshot(Fabric& f) : slots(f.enclaves_list()), loaded(f.loaded_tas()), loads(f.load_count()) {
    for (int i = 0; i < f.slot_count(); ++i) reservations.push_back(f.reservations(i));
  }
  bool operator==(const Snapshot& o) const {
    auto same = [](const std::vector<SlotRecord>& a, const std::vector<SlotRecord>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].taken != b[i].taken || a[i].tcm_base != b[i].tcm_base) return false;
      }
      return true;
    };
    return same(slots, o.slots) && loaded == o.loaded && loads == o.loads && reservations == o.reservations;
  }
};

}  // namespace

TEST_CASE("increment and shmem16 through the client API") {
  Rig rig(2);
  Context& ctx = *rig.context;
  Session s;
  REQUIRE(ctx.open_session(s, kIncrementTaUuid, builtin_image(ta_kind::kIncrement)) == ReturnCode::kSuccess);
  CHECK(s.is_open());
  Operation op;
  op.params[0] = Value{41, 0, Direction::kInout};
  CHECK(ctx.invoke_command(s, 0, op) == ReturnCode::kSuccess);
  CHECK(std::get<Value>(op.params[0]).a == 42);

  Session m;
  REQUIRE(ctx.open_session(m, kShmem16TaUuid, builtin_image(ta_kind::kShmem16)) == ReturnCode::kSuccess);
  CHECK(m.slot != s.slot);
  SharedMemory shm;
  REQUIRE(ctx.allocate_shared_memory(m, 15, Direction::kOut, shm) == ReturnCode::kSuccess);
  Operation mop;
  mop.params[0] = MemRef{&shm};
  CHECK(ctx.invoke_command(m, 0, mop) == ReturnCode::kErrorShortBuffer);
  CHECK(std::get<MemRef>(mop.params[0]).returned_size == 16);
  ctx.release_shared_memory(m, shm);
  REQUIRE(ctx.allocate_shared_memory(m, 16, Direction::kOut, shm) == ReturnCode::kSuccess);
  mop.params[0] = MemRef{&shm};
  CHECK(ctx.invoke_command(m, 0, mop) == ReturnCode::kSuccess);
  for (int i = 0; i < 16; ++i) CHECK(shm.buffer[i] == i);

  CHECK(ctx.close_session(s) == ReturnCode::kSuccess);
  CHECK_FALSE(s.is_open());
  CHECK(ctx.close_session(s) == ReturnCode::kSuccess);
  CHECK(ctx.close_session(m) == ReturnCode::kSuccess);
  rig.fabric->quiesce();
  CHECK(rig.fabric->audit().empty());
  CHECK(rig.fabric->loaded_tas().empty());
}

TEST_CASE("open_session error mapping") {
  Rig rig(1);
  Context& ctx = *rig.context;
  Session s;
  CHECK(ctx.open_session(s, kIncrementTaUuid, Bytes(kMaxImageSize + 1)) == ReturnCode::kErrorExcessData);
  CHECK(ctx.open_session(s, kIncrementTaUuid, Bytes(40, 1)) == ReturnCode::kErrorBadFormat);
  CHECK(ctx.open_session(s, kEchoTaUuid, builtin_image(ta_kind::kIncrement)) == ReturnCode::kErrorBadFormat);
  CHECK(ctx.open_session(s, kIncrementTaUuid, std::filesystem::path("/nonexistent/ta.bin")) ==
        ReturnCode::kErrorItemNotFound);
  CHECK(ctx.open_session(s, test_uuid(1), test_image(test_uuid(1), 4242)) == ReturnCode::kErrorBadFormat);
  CHECK_FALSE(s.is_open());

  REQUIRE(ctx.open_session(s, kIncrementTaUuid, builtin_image(ta_kind::kIncrement)) == ReturnCode::kSuccess);
  Session again = s;
  CHECK(ctx.open_session(again, kIncrementTaUuid, builtin_image(ta_kind::kIncrement)) ==
        ReturnCode::kErrorBadParameters);
  Session other;
  CHECK(ctx.open_session(other, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kErrorOutOfEnclaves);
  ctx.close_session(s);
  rig.fabric->quiesce();
  CHECK(ctx.open_session(other, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kSuccess);
}

TEST_CASE("open from an image file") {
  Rig rig(1);
  const auto path = rig.dir.path() / "inc.ta";
  const Bytes image = builtin_image(ta_kind::kIncrement, 4096);
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(image.data()),
                                               static_cast<std::streamsize>(image.size()));
  Session s;
  CHECK(rig.context->open_session(s, kIncrementTaUuid, path) == ReturnCode::kSuccess);
  rig.context->close_session(s);
}

TEST_CASE("images are staged once per UUID and released with the context") {
  Rig rig(2);
  {
    Context ctx(*rig.fabric);
    for (int i = 0; i < 3; ++i) {
      Session s;
      REQUIRE(ctx.open_session(s, kIncrementTaUuid, builtin_image(ta_kind::kIncrement)) == ReturnCode::kSuccess);
      ctx.close_session(s);
      rig.fabric->quiesce();
    }
    CHECK(ctx.staged_images().size() == 1);
    CHECK(rig.fabric->cm().allocations().size() == 1);
  }
  CHECK(rig.fabric->cm().allocations().empty());
}

TEST_CASE("shared memory allocator") {
  Rig rig(1);
  Context& ctx = *rig.context;
  Session s;
  SharedMemory a, b, c, z;
  CHECK(ctx.allocate_shared_memory(s, 16, Direction::kIn, a) == ReturnCode::kErrorBadParameters);
  REQUIRE(ctx.open_session(s, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kSuccess);
  CHECK(ctx.allocate_shared_memory(s, 8193, Direction::kIn, a) == ReturnCode::kErrorOutOfMemory);
  REQUIRE(ctx.allocate_shared_memory(s, 8192, Direction::kIn, a) == ReturnCode::kSuccess);
  CHECK(ctx.allocate_shared_memory(s, 1, Direction::kIn, b) == ReturnCode::kErrorOutOfMemory);
  CHECK(ctx.allocate_shared_memory(s, 0, Direction::kIn, z) == ReturnCode::kSuccess);
  CHECK(z.size == 0);
  ctx.release_shared_memory(s, a);
  REQUIRE(ctx.allocate_shared_memory(s, 100, Direction::kIn, a) == ReturnCode::kSuccess);
  REQUIRE(ctx.allocate_shared_memory(s, 100, Direction::kIn, b) == ReturnCode::kSuccess);
  CHECK(a.offset == 0);
  CHECK(b.offset == 100);
  ctx.release_shared_memory(s, a);
  REQUIRE(ctx.allocate_shared_memory(s, 50, Direction::kIn, c) == ReturnCode::kSuccess);
  CHECK(c.offset == 0);
  CHECK(c.buffer.size() == 50);
  ctx.close_session(s);
}

TEST_CASE("property: marshal then unmarshal restores values and buffers") {
  Rig rig(1);
  Context& ctx = *rig.context;
  Session s;
  REQUIRE(ctx.open_session(s, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kSuccess);
  std::mt19937_64 g(31);
  for (int i = 0; i < 200; ++i) {
    if (g() % 2) {
      Operation op;
      const uint32_t a = static_cast<uint32_t>(g());
      const uint32_t b = static_cast<uint32_t>(g());
      op.params[0] = Value{a, b, g() % 2 ? Direction::kIn : Direction::kInout};
      op.params[1] = Value{0, 0, Direction::kOut};
      REQUIRE(ctx.invoke_command(s, 0, op) == ReturnCode::kSuccess);
      CHECK(std::get<Value>(op.params[1]).a == a);
      CHECK(std::get<Value>(op.params[1]).b == b);
      CHECK(std::get<Value>(op.params[0]).a == a);
    } else {
      SharedMemory in, out;
      const uint32_t n = static_cast<uint32_t>(g() % 1000);
      REQUIRE(ctx.allocate_shared_memory(s, n, Direction::kIn, in) == ReturnCode::kSuccess);
      REQUIRE(ctx.allocate_shared_memory(s, n, Direction::kOut, out) == ReturnCode::kSuccess);
      for (auto& x : in.buffer) x = static_cast<uint8_t>(g());
      Operation op;
      op.params[0] = MemRef{&in};
      op.params[1] = MemRef{&out};
      REQUIRE(ctx.invoke_command(s, 0, op) == ReturnCode::kSuccess);
      CHECK(out.buffer == in.buffer);
      CHECK(std::get<MemRef>(op.params[1]).returned_size == n);
      ctx.release_shared_memory(s, in);
      ctx.release_shared_memory(s, out);
    }
  }
  ctx.close_session(s);
}

TEST_CASE("marshal layout") {
  SharedMemory shm;
  shm.offset = 64;
  shm.size = 32;
  shm.owner = 1;
  Operation op;
  op.params[0] = Value{1, 2, Direction::kIn};
  op.params[1] = Value{3, 4, Direction::kOut};
  op.params[2] = MemRef{&shm};
  op.params[3] = Value{5, 6, Direction::kInout};
  ParamType type;
  std::array<uint32_t, kGpWords> gp{};
  REQUIRE(marshal(op, type, gp) == ReturnCode::kSuccess);
  CHECK(type.packed() == 0x3521);
  CHECK(gp == std::array<uint32_t, kGpWords>{1, 2, 0, 0, 64, 32, 5, 6});
  op.params[2] = MemRef{nullptr};
  CHECK(marshal(op, type, gp) == ReturnCode::kErrorBadParameters);
}

TEST_CASE("copy direction: in buffers are not written back, out contents never reach the enclave") {
  Rig rig(1);
  Context& ctx = *rig.context;
  Session s;
  REQUIRE(ctx.open_session(s, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kSuccess);
  std::vector<DispatchTrace> traces;
  rig.fabric->set_tracer([&](const DispatchTrace& t) { traces.push_back(t); });

  SharedMemory in, out;
  REQUIRE(ctx.allocate_shared_memory(s, 64, Direction::kIn, in) == ReturnCode::kSuccess);
  REQUIRE(ctx.allocate_shared_memory(s, 64, Direction::kOut, out) == ReturnCode::kSuccess);
  std::fill(in.buffer.begin(), in.buffer.end(), 0x11);
  std::fill(out.buffer.begin(), out.buffer.end(), 0xEE);  // taint
  Operation op;
  op.params[0] = MemRef{&out};
  op.params[1] = MemRef{&in};
  // Echo copies param0 (the out block) into param1 (the in block).
  REQUIRE(ctx.invoke_command(s, 0, op) == ReturnCode::kSuccess);
  REQUIRE(traces.size() == 1);
  for (uint8_t b : traces[0].shm_before) CHECK(b != 0xEE);
  CHECK(out.buffer == Bytes(64, 0));
  // The enclave overwrote the in block's window range; the REE copy stays.
  CHECK(in.buffer == Bytes(64, 0x11));
  CHECK(Bytes(traces[0].shm_after.begin() + in.offset, traces[0].shm_after.begin() + in.offset + 64) ==
        Bytes(64, 0));
  rig.fabric->set_tracer(nullptr);
  ctx.close_session(s);
}

TEST_CASE("failed invokes do not copy out") {
  Rig rig(1);
  Context& ctx = *rig.context;
  Session s;
  REQUIRE(ctx.open_session(s, kShmem16TaUuid, builtin_image(ta_kind::kShmem16)) == ReturnCode::kSuccess);
  SharedMemory out;
  REQUIRE(ctx.allocate_shared_memory(s, 8, Direction::kInout, out) == ReturnCode::kSuccess);
  std::fill(out.buffer.begin(), out.buffer.end(), 0x42);
  Operation op;
  op.params[0] = MemRef{&out};
  CHECK(ctx.invoke_command(s, 0, op) == ReturnCode::kErrorShortBuffer);
  CHECK(out.buffer == Bytes(8, 0x42));
  ctx.close_session(s);
}

TEST_CASE("memrefs from another session or released blocks are refused") {
  Rig rig(2);
  Context& ctx = *rig.context;
  Session a, b;
  REQUIRE(ctx.open_session(a, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kSuccess);
  REQUIRE(ctx.open_session(b, kEchoTaUuid, builtin_image(ta_kind::kEcho)) == ReturnCode::kSuccess);
  SharedMemory sa, sb;
  REQUIRE(ctx.allocate_shared_memory(a, 8, Direction::kIn, sa) == ReturnCode::kSuccess);
  REQUIRE(ctx.allocate_shared_memory(b, 8, Direction::kOut, sb) == ReturnCode::kSuccess);
  Operation op;
  op.params[0] = MemRef{&sa};
  op.params[1] = MemRef{&sb};
  CHECK(ctx.invoke_command(a, 0, op) == ReturnCode::kErrorBadParameters);
  ctx.release_shared_memory(a, sa);
  op.params[1] = MemRef{&sa};
  CHECK(ctx.invoke_command(a, 0, op) == ReturnCode::kErrorBadParameters);
  ctx.close_session(a);
  ctx.close_session(b);
}

TEST_CASE("property: out-of-order API calls fail and leave the fabric unchanged") {
  Rig rig(2);
  Context& ctx = *rig.context;
  std::mt19937_64 g(41);
  for (int i = 0; i < 300; ++i) {
    Session s;
    const int steps = static_cast<int>(g() % 4);
    bool opened = false;
    for (int k = 0; k < steps; ++k) {
      if (!opened && g() % 2) {
        REQUIRE(ctx.open_session(s, kIncrementTaUuid, builtin_image(ta_kind::kIncrement)) == ReturnCode::kSuccess);
        opened = true;
      } else if (opened) {
        ctx.close_session(s);
        opened = false;
      }
    }
    if (opened) {
      ctx.close_session(s);
    }
    rig.fabric->quiesce();
    // Now s is closed (or never opened): every non-open call must be refused.
    const Snapshot before(*rig.fabric);
    Operation op;
    op.params[0] = Value{1, 0, Direction::kInout};
    SharedMemory shm;
    switch (g() % 4) {
      case 0: REQUIRE(ctx.invoke_command(s, 0, op) == ReturnCode::kErrorBadParameters); break;
      case 1: REQUIRE(ctx.allocate_shared_memory(s, 8, Direction::kIn, shm) == ReturnCode::kErrorBadParameters); break;
      case 2: REQUIRE(ctx.close_session(s) == ReturnCode::kSuccess); break;
      default: {
        Session forged;
        forged.slot = 0;
        forged.session_id = 7;
        REQUIRE(ctx.invoke_command(forged, 0, op) != ReturnCode::kSuccess);
      }
    }
    rig.fabric->quiesce();
    REQUIRE(Snapshot(*rig.fabric) == before);
    REQUIRE(rig.fabric->audit().empty());
  }
}

TEST_CASE("many clients in parallel on distinct and shared TAs") {
  Rig rig(3);
  std::atomic<int> wrong{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 6; ++t) {
    threads.emplace_back([&, t] {
      Context ctx(*rig.fabric);
      for (int i = 0; i < 30; ++i) {
        Session s;
        const bool inc = t % 2 == 0;
        const ReturnCode rc = inc ? ctx.open_session(s, kIncrementTaUuid, builtin_image(ta_kind::kIncrement))
                                  : ctx.open_session(s, kShmem16TaUuid, builtin_image(ta_kind::kShmem16));
        if (rc != ReturnCode::kSuccess) {
          ++wrong;
          continue;
        }
        Operation op;
        SharedMemory shm;
        if (inc) {
          op.params[0] = Value{static_cast<uint32_t>(i), 0, Direction::kInout};
        } else {
          ctx.allocate_shared_memory(s, 16, Direction::kOut, shm);
          op.params[0] = MemRef{&shm};
        }
        if (ctx.invoke_command(s, 0, op) != ReturnCode::kSuccess) ++wrong;
        if (inc && std::get<Value>(op.params[0]).a != static_cast<uint32_t>(i) + 1) ++wrong;
        if (!inc && (shm.buffer.size() != 16 || shm.buffer[7] != 7)) ++wrong;
        ctx.close_session(s);
      }
    });
  }
  for (auto& t : threads) t.join();
  rig.fabric->quiesce();
  CHECK(wrong.load() == 0);
  CHECK(rig.fabric->audit().empty());
  CHECK(rig.fabric->loaded_tas().empty());
}
