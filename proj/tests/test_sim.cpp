#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "teeod/sim.hpp"
#include "teeod/wallet.hpp"

using namespace teeod;

namespace {

std::string config_error(std::string_view text) {
  try {
    SimConfig::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

SimConfig scratch_config(const testing::TempDir& dir) {
  SimConfig c;
  c.enclave_count = 2;
  c.storage_dir = dir.path() / "storage";
  c.rng_seed = 7;
  c.dma_per_byte = false;
  return c;
}

}  // namespace

TEST_CASE("config defaults and keys") {
  const SimConfig d = SimConfig::parse("");
  CHECK(d.enclave_count == 4);
  CHECK(d.device == "ZU3EG");
  CHECK(d.dma_per_byte);
  CHECK(d.dma().ns_per_byte == kDefaultDmaNsPerByte);
  CHECK_FALSE(d.rng_seed.has_value());

  const SimConfig c = SimConfig::parse(
      "# comment\n enclave_count = 3 \nrng_seed=0x10\ndma_delay_model=none\nhuk_seed=abc\n"
      "tcm_size=65536\nshm_size=8192\nuart_dir=/tmp/u\nhuk=" +
      std::string(64, 'a') + "\n");
  CHECK(c.enclave_count == 3);
  CHECK(c.rng_seed == 16u);
  CHECK(c.dma().ns_per_byte == 0);
  CHECK(c.huk_seed == "abc");
  CHECK(c.huk == Bytes(32, 0xaa));
  CHECK(c.uart_dir == std::filesystem::path("/tmp/u"));
}

TEST_CASE("config errors name the line and field") {
  CHECK(config_error("enclave_count=0").find("line 1: enclave_count") != std::string::npos);
  CHECK(config_error("\nenclave_count=x").find("line 2: enclave_count") != std::string::npos);
  CHECK(config_error("rng_seed=-1").find("rng_seed") != std::string::npos);
  CHECK(config_error("huk=abcd").find("huk") != std::string::npos);
  CHECK(config_error("dma_delay_model=fast").find("dma_delay_model") != std::string::npos);
  CHECK(config_error("tcm_size=4096").find("tcm_size: fixed") != std::string::npos);
  CHECK(config_error("shm_size=1").find("shm_size") != std::string::npos);
  CHECK(config_error("colour=blue").find("unknown key 'colour'") != std::string::npos);
  CHECK(config_error("just words").find("expected key=value") != std::string::npos);
  CHECK_THROWS_AS(SimConfig::load("/nonexistent/teeod.cfg"), ConfigError);
}

TEST_CASE("simulator refuses designs that do not fit before touching storage") {
  testing::TempDir dir;
  SimConfig c = scratch_config(dir);
  c.enclave_count = 7;
  CHECK_THROWS_AS(Simulator{c}, ConfigError);
  CHECK_FALSE(std::filesystem::exists(c.storage_dir));
  c.enclave_count = 2;
  c.device = (dir.path() / "missing.profile").string();
  CHECK_THROWS_AS(Simulator{c}, ConfigError);
}

TEST_CASE("demos") {
  testing::TempDir dir;
  Simulator sim(scratch_config(dir));
  CHECK(demo_increment(sim.context(), 41) == 42);
  CHECK(demo_increment(sim.context(), 0xFFFFFFFF) == 0);
  CHECK(demo_shmem16(sim.context()) == testing::hex("000102030405060708090a0b0c0d0e0f"));
  sim.fabric().quiesce();
  CHECK(sim.fabric().audit().empty());
}

TEST_CASE("wallet keys persist across simulator restarts with the same device key") {
  testing::TempDir dir;
  std::string first;
  {
    Simulator sim(scratch_config(dir));
    std::ostringstream out, err;
    REQUIRE(wallet::run_client({"2", "4321"}, sim.context(), out, err) == 0);
    std::ostringstream a;
    REQUIRE(wallet::run_client({"6", "4321"}, sim.context(), a, err) == 0);
    first = a.str();
  }
  {
    Simulator sim(scratch_config(dir));
    std::ostringstream out, err;
    REQUIRE(wallet::run_client({"6", "4321"}, sim.context(), out, err) == 0);
    CHECK(out.str() == first);
  }
  {
    SimConfig other = scratch_config(dir);
    other.huk_seed = "another-device";
    Simulator sim(other);
    std::ostringstream out, err;
    CHECK(wallet::run_client({"6", "4321"}, sim.context(), out, err) == 1);
    CHECK(err.str().find("CORRUPT_OBJECT") != std::string::npos);
  }
}

TEST_CASE("bench structure") {
  testing::TempDir dir;
  SimConfig c = scratch_config(dir);
  c.dma_per_byte = true;
  c.dma_ns_per_byte = 50;
  Simulator sim(c);
  const BenchReport r = run_bench(sim.fabric(), sim.context(), 5);
  CHECK(r.violations.empty());
  CHECK(r.cold_open_loads == 5);
  CHECK(r.warm_open_loads == 0);
  for (const char* name : {"cold_open", "warm_open", "raw_invoke", "shm_invoke", "close"}) {
    CHECK(r.scenario(name).samples_ns.size() == 5);
  }
  CHECK_THROWS_AS(r.scenario("nope"), std::out_of_range);
  const auto lines = r.machine_lines();
  CHECK(lines.front().rfind("scenario=cold_open n=5 ", 0) == 0);
  CHECK(std::find(lines.begin(), lines.end(), "structure=ok") != lines.end());
  CHECK(std::find(lines.begin(), lines.end(), "loads cold_open=5 warm_open=0") != lines.end());
  CHECK_THROWS_AS(run_bench(sim.fabric(), sim.context(), 0), std::invalid_argument);
}
