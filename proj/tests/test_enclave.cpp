#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "support.hpp"
#include "teeod/enclave.hpp"

using namespace teeod;
using testing::test_image;
using testing::test_uuid;

namespace {

// A bare enclave driven directly through its ports, without the fabric.
struct Bench {
  explicit Bench(uint32_t kind = testing::kind::kProbe) {
    testing::register_test_tas(registry);
    enclave = std::make_unique<Enclave>(0, registry, TeeServices{}, &log, EnclaveOptions{});
    enclave->assert_reset();
    enclave->load_tcm(test_image(test_uuid(9), kind));
    enclave->release_reset();
  }

  ReplyFrame send(const MailboxFrame& f) { return decode_reply(enclave->deliver(encode_frame(f))); }

  uint32_t open() {
    MailboxFrame f;
    const ReplyFrame r = send(f);
    REQUIRE(r.code == ReturnCode::kSuccess);
    return r.session_id;
  }

  TaRegistry registry = TaRegistry::with_builtins();
  EventLog log;
  std::unique_ptr<Enclave> enclave;
};

MailboxFrame probe(uint32_t session, uint32_t cmd, uint32_t space, uint32_t at, uint8_t value,
                   uint32_t grant_off, uint32_t grant_len) {
  MailboxFrame f;
  f.operation_id = OperationId::kInvoke;
  f.session_id = session;
  f.cmd_id = cmd;
  f.param_type = ParamType::of(ParamKind::kMemref, ParamKind::kValueIn, ParamKind::kValueIn, ParamKind::kValueOut);
  f.gp = {grant_off, grant_len, at, value, space, 0, 0, 0};
  return f;
}

}  // namespace

TEST_CASE("enclave starts in reset and refuses delivery") {
  TaRegistry reg = TaRegistry::with_builtins();
  Enclave e(0, reg, TeeServices{}, nullptr, EnclaveOptions{});
  CHECK(e.state() == EnclaveState::kReset);
  const ReplyFrame r = decode_reply(e.deliver(encode_frame(MailboxFrame{})));
  CHECK(r.code == ReturnCode::kErrorGeneric);
  CHECK(e.snapshot().fully_zeroized());
}

TEST_CASE("loading is only legal in reset") {
  Bench b;
  CHECK(b.enclave->state() == EnclaveState::kWfi);
  CHECK_THROWS_AS(b.enclave->load_tcm(Bytes(32)), std::logic_error);
  b.enclave->assert_reset();
  CHECK_THROWS_AS(b.enclave->load_tcm(Bytes(kTcmSize + 1)), std::length_error);
}

TEST_CASE("session ids are per enclave and unknown ids are refused") {
  Bench b;
  CHECK(b.open() == 1);
  CHECK(b.open() == 2);
  CHECK(b.enclave->active_sessions() == 2);

  MailboxFrame inv = probe(99, 2, 0, 0, 0, 0, 0);
  CHECK(b.send(inv).code == ReturnCode::kErrorBadParameters);
  MailboxFrame close;
  close.operation_id = OperationId::kClose;
  close.session_id = 99;
  CHECK(b.send(close).code == ReturnCode::kErrorBadParameters);
  close.session_id = 1;
  CHECK(b.send(close).code == ReturnCode::kSuccess);
  CHECK(b.send(close).code == ReturnCode::kErrorBadParameters);
  CHECK(b.send(probe(1, 2, 0, 0, 0, 0, 0)).code == ReturnCode::kErrorBadParameters);
}

TEST_CASE("malformed frames get BAD_PARAMETERS and the core stays live") {
  Bench b;
  FrameWords w{};
  w[0] = 9;
  CHECK(decode_reply(b.enclave->deliver(w)).code == ReturnCode::kErrorBadParameters);
  w = FrameWords{};
  w[0] = 2;
  w[2] = 5;
  w[3] = 8000;
  w[4] = 1000;
  CHECK(decode_reply(b.enclave->deliver(w)).code == ReturnCode::kErrorBadParameters);
  CHECK(b.open() == 1);
}

TEST_CASE("unknown TA kind in TCM answers BAD_FORMAT") {
  TaRegistry reg = TaRegistry::with_builtins();
  Enclave e(0, reg, TeeServices{}, nullptr, EnclaveOptions{});
  e.load_tcm(test_image(test_uuid(1), 777));
  e.release_reset();
  CHECK(decode_reply(e.deliver(encode_frame(MailboxFrame{}))).code == ReturnCode::kErrorBadFormat);
}

TEST_CASE("faults abort the handler with ACCESS_DENIED and the reply still arrives") {
  Bench b;
  const uint32_t s = b.open();
  CHECK(b.send(probe(s, 1, 1, 100, 1, 0, 16)).code == ReturnCode::kErrorAccessDenied);
  CHECK(b.send(probe(s, 1, 0, kTcmSize, 1, 0, 16)).code == ReturnCode::kErrorAccessDenied);
  CHECK(b.send(probe(s, 2, 1, 16, 0, 0, 16)).code == ReturnCode::kErrorAccessDenied);
  CHECK(b.send(probe(s, 1, 1, 15, 0xEE, 0, 16)).code == ReturnCode::kSuccess);
  CHECK(b.enclave->shm_peek()[15] == 0xEE);
  const ReplyFrame r = b.send(probe(s, 2, 1, 15, 0, 0, 16));
  CHECK(r.code == ReturnCode::kSuccess);
  CHECK(r.gp[6] == 0xEE);
}

TEST_CASE("quarantine after a fault, cleared by reset") {
  TaRegistry reg = TaRegistry::with_builtins();
  testing::register_test_tas(reg);
  EnclaveOptions opt;
  opt.quarantine_on_fault = true;
  Enclave e(0, reg, TeeServices{}, nullptr, opt);
  auto boot = [&] {
    e.assert_reset();
    e.load_tcm(test_image(test_uuid(9), testing::kind::kProbe));
    e.release_reset();
    return decode_reply(e.deliver(encode_frame(MailboxFrame{}))).session_id;
  };
  uint32_t s = boot();
  auto send = [&](const MailboxFrame& f) { return decode_reply(e.deliver(encode_frame(f))).code; };
  CHECK(send(probe(s, 1, 1, 0, 1, 0, 0)) == ReturnCode::kErrorAccessDenied);
  CHECK(e.snapshot().quarantined);
  CHECK(send(probe(s, 1, 1, 0, 1, 0, 1)) == ReturnCode::kErrorGeneric);
  s = boot();
  CHECK_FALSE(e.snapshot().quarantined);
  CHECK(send(probe(s, 1, 1, 0, 1, 0, 1)) == ReturnCode::kSuccess);
}

TEST_CASE("property: TA memory accesses stay inside TCM and granted ranges") {
  Bench b;
  const uint32_t s = b.open();
  std::mt19937_64 g(11);
  int faults = 0;
  for (int i = 0; i < 2000; ++i) {
    const uint32_t goff = static_cast<uint32_t>(g() % kShmSize);
    const uint32_t glen = static_cast<uint32_t>(g() % (kShmSize - goff + 1) % 512);
    const uint32_t space = static_cast<uint32_t>(g() % 2);
    const uint32_t at = static_cast<uint32_t>(g() % (space ? kShmSize + 64 : kTcmSize + 64));
    const uint8_t v = static_cast<uint8_t>(g() | 1);
    const EnclaveSnapshot before = b.enclave->snapshot();
    const ReturnCode rc = b.send(probe(s, 1, space, at, v, goff, glen)).code;
    const EnclaveSnapshot after = b.enclave->snapshot();
    const bool legal = space == 0 ? at < kTcmSize : (at >= goff && at < goff + glen);
    REQUIRE(rc == (legal ? ReturnCode::kSuccess : ReturnCode::kErrorAccessDenied));
    faults += legal ? 0 : 1;
    for (std::size_t k = 0; k < kShmSize; ++k) {
      if (space == 1 && legal && k == at) continue;
      REQUIRE(before.shm[k] == after.shm[k]);
    }
    for (std::size_t k = 0; k < kTcmSize; ++k) {
      if (space == 0 && legal && k == at) continue;
      REQUIRE(before.tcm[k] == after.tcm[k]);
    }
  }
  CHECK(faults > 100);
}

TEST_CASE("reset zeroizes every store") {
  Bench b;
  const uint32_t s = b.open();
  b.send(probe(s, 1, 0, 40000, 0x5A, 0, 0));
  b.send(probe(s, 1, 1, 10, 0x5A, 0, 64));
  CHECK_FALSE(b.enclave->snapshot().fully_zeroized());
  b.enclave->assert_reset();
  const EnclaveSnapshot snap = b.enclave->snapshot();
  CHECK(snap.fully_zeroized());
  CHECK(std::all_of(snap.shm.begin(), snap.shm.end(), [](uint8_t x) { return x == 0; }));
  CHECK(snap.rst_line);
}

TEST_CASE("destroy fires once, after the last close") {
  TaRegistry reg = TaRegistry::with_builtins();
  testing::register_test_tas(reg);
  EventLog log;
  Enclave e(0, reg, TeeServices{}, &log, EnclaveOptions{});
  e.load_tcm(test_image(test_uuid(5), testing::kind::kCounting));
  e.release_reset();
  const int before = testing::counters().destroys.load();
  auto send = [&](OperationId op, uint32_t sid) {
    MailboxFrame f;
    f.operation_id = op;
    f.session_id = sid;
    return decode_reply(e.deliver(encode_frame(f)));
  };
  const uint32_t s1 = send(OperationId::kOpen, 0).session_id;
  const uint32_t s2 = send(OperationId::kOpen, 0).session_id;
  send(OperationId::kClose, s1);
  CHECK(testing::counters().destroys.load() == before);
  send(OperationId::kClose, s2);
  CHECK(testing::counters().destroys.load() == before + 1);
  CHECK(log.count(EventKind::kDestroy) == 1);
  e.assert_reset();
  CHECK(testing::counters().destroys.load() == before + 1);
}

TEST_CASE("uart lines are kept and written to the log file") {
  testing::TempDir dir;
  TaRegistry reg = TaRegistry::with_builtins();
  reg.add(200, [](const TaImage&) {
    struct Printer : TrustedApp {
      ReturnCode open_session(TaEnv& env, uint32_t) override {
        env.print("hello from the core");
        return ReturnCode::kSuccess;
      }
      ReturnCode invoke_command(TaEnv&, uint32_t, uint32_t) override { return ReturnCode::kSuccess; }
      void close_session(TaEnv&, uint32_t) override {}
      void destroy(TaEnv&) override {}
    };
    return std::make_unique<Printer>();
  });
  EnclaveOptions opt;
  opt.uart_path = dir.path() / "u" / "enclave0.log";
  Enclave e(0, reg, TeeServices{}, nullptr, opt);
  e.load_tcm(test_image(test_uuid(1), 200));
  e.release_reset();
  e.deliver(encode_frame(MailboxFrame{}));
  CHECK(e.uart_lines() == std::vector<std::string>{"hello from the core"});
  std::ifstream in(*opt.uart_path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "hello from the core");
}

TEST_CASE("builtin TAs") {
  Bench inc(ta_kind::kIncrement);
  const uint32_t s = inc.open();
  MailboxFrame f;
  f.operation_id = OperationId::kInvoke;
  f.session_id = s;
  f.param_type = ParamType::of(ParamKind::kValueInout);
  f.gp[0] = 41;
  CHECK(inc.send(f).gp[0] == 42);
  f.gp[0] = 0xFFFFFFFF;
  CHECK(inc.send(f).gp[0] == 0);
  f.param_type = ParamType::of(ParamKind::kValueIn);
  CHECK(inc.send(f).code == ReturnCode::kErrorBadParameters);

  Bench shm(ta_kind::kShmem16);
  const uint32_t s2 = shm.open();
  MailboxFrame m;
  m.operation_id = OperationId::kInvoke;
  m.session_id = s2;
  m.param_type = ParamType::of(ParamKind::kMemref);
  m.gp[0] = 100;
  m.gp[1] = 15;
  const ReplyFrame shortr = shm.send(m);
  CHECK(shortr.code == ReturnCode::kErrorShortBuffer);
  CHECK(shortr.gp[1] == 16);
  m.gp[1] = 16;
  CHECK(shm.send(m).code == ReturnCode::kSuccess);
  const Bytes window = shm.enclave->shm_peek();
  for (int i = 0; i < 16; ++i) CHECK(window[100 + i] == i);
}
