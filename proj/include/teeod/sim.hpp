#pragma once

// Operator-level plumbing: the key=value simulator config, a booted
// fabric + client stack, the demo runs and the latency scenario harness.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "teeod/client_api.hpp"
#include "teeod/crypto.hpp"
#include "teeod/fabric.hpp"
#include "teeod/storage.hpp"

namespace teeod {

inline constexpr uint64_t kDefaultDmaNsPerByte = 500;

struct SimConfig {
  int enclave_count = 4;
  std::string device = "ZU3EG";  // profile name or path
  std::filesystem::path storage_dir = "teeod-storage";
  std::optional<uint64_t> rng_seed;  // host entropy when unset
  std::optional<Bytes> huk;          // 32 bytes; wins over huk_seed
  std::string huk_seed = "teeod-default-device";
  std::optional<std::filesystem::path> uart_dir;
  bool dma_per_byte = true;
  uint64_t dma_ns_per_byte = kDefaultDmaNsPerByte;

  // Keys: enclave_count, device, storage_dir, rng_seed, huk (64 hex chars),
  // huk_seed, uart_dir, dma_delay_model (none | per-byte), dma_ns_per_byte,
  // tcm_size and shm_size (accepted only at their fixed values). Throws
  // ConfigError naming the line and field.
  static SimConfig parse(std::string_view text);
  static SimConfig load(const std::filesystem::path& path);

  DmaModel dma() const { return DmaModel{dma_per_byte ? dma_ns_per_byte : 0}; }
};

// Everything one process needs: RNG, storage, fabric (with the wallet TA
// registered) and a client context.
class Simulator {
 public:
  explicit Simulator(const SimConfig& config);
  ~Simulator();

  Fabric& fabric() { return *fabric_; }
  client::Context& context() { return *context_; }
  tee::SecureStorage& storage() { return *storage_; }
  tee::Rng& rng() { return *rng_; }
  const SimConfig& config() const { return config_; }

 private:
  SimConfig config_;
  std::unique_ptr<tee::Rng> rng_;
  tee::MonotonicCounter counter_;
  std::unique_ptr<tee::SecureStorage> storage_;
  std::unique_ptr<Fabric> fabric_;
  std::unique_ptr<client::Context> context_;
};

// Full open/invoke/close cycles against the builtin TAs. Throw
// std::runtime_error carrying the return code on failure.
uint32_t demo_increment(client::Context& context, uint32_t value);
Bytes demo_shmem16(client::Context& context);

struct ScenarioStats {
  std::string name;
  std::vector<uint64_t> samples_ns;

  double mean_ns() const;
  uint64_t min_ns() const;
  uint64_t max_ns() const;
};

struct BenchReport {
  std::vector<ScenarioStats> scenarios;
  double cold_warm_ratio = 0;
  double shm_raw_ratio = 0;
  uint64_t cold_open_loads = 0;  // total loader copies over the cold opens
  uint64_t warm_open_loads = 0;  // total loader copies over the warm opens
  std::vector<std::string> violations;  // structural checks that failed

  const ScenarioStats& scenario(std::string_view name) const;
  // `scenario=<name> n=.. mean_ns=.. min_ns=.. max_ns=..` lines, then the
  // ratio and structure lines.
  std::vector<std::string> machine_lines() const;
  std::string to_text() const;
};

// Cold open, warm open (second concurrent session), raw invoke and shm invoke
// (interleaved), close; `iterations` samples each.
BenchReport run_bench(Fabric& fabric, client::Context& context, int iterations = 100);

}  // namespace teeod
