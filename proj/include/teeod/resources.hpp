#pragma once

// FPGA resource budget of the fabric: measured synthesis rows for one to four
// enclaves on the ZU3EG, linear extrapolation beyond, and the largest enclave
// count a device can hold.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace teeod::resources {

enum class Resource { kLut, kLutram, kFf, kBram, kDsp, kIo, kBufg };

inline constexpr std::size_t kResourceCount = 7;
inline constexpr std::array<Resource, kResourceCount> kAllResources = {
    Resource::kLut, Resource::kLutram, Resource::kFf,  Resource::kBram,
    Resource::kDsp, Resource::kIo,     Resource::kBufg};
// IO and BUFG are constant across the measured designs and are reported but
// not part of the fit test.
inline constexpr std::array<Resource, 5> kFitResources = {
    Resource::kLut, Resource::kLutram, Resource::kFf, Resource::kBram, Resource::kDsp};

std::string_view to_string(Resource r);
std::optional<Resource> parse_resource(std::string_view name);

class ResourceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ResourceVector {
  std::array<uint64_t, kResourceCount> values{};

  uint64_t& operator[](Resource r) { return values[static_cast<std::size_t>(r)]; }
  uint64_t operator[](Resource r) const { return values[static_cast<std::size_t>(r)]; }

  friend ResourceVector operator+(ResourceVector a, const ResourceVector& b) {
    for (std::size_t i = 0; i < kResourceCount; ++i) a.values[i] += b.values[i];
    return a;
  }
  friend ResourceVector operator*(uint64_t k, ResourceVector v) {
    for (auto& x : v.values) x *= k;
    return v;
  }
  friend bool operator==(const ResourceVector&, const ResourceVector&) = default;
};

ResourceVector make_vector(uint64_t lut, uint64_t lutram, uint64_t ff, uint64_t bram,
                           uint64_t dsp, uint64_t io, uint64_t bufg);

struct DeviceProfile {
  std::string name;
  ResourceVector capacity;

  // Zynq UltraScale+ ZU3EG (Ultra96-V2).
  static DeviceProfile zu3eg();
  // key=value lines: name, lut, lutram, ff, bram, dsp, io, bufg. '#' starts a
  // comment. Every capacity must be present and positive.
  static DeviceProfile parse(std::string_view text);
  static DeviceProfile load(const std::filesystem::path& path);
  // "ZU3EG" (case-insensitive) or a path to a profile file.
  static DeviceProfile resolve(std::string_view name_or_path);
};

// Every fit resource within capacity.
bool fits(const ResourceVector& usage, const DeviceProfile& device);

// One column of the published synthesis table, with the percentages exactly
// as printed there.
struct MeasuredDesign {
  int enclaves;
  ResourceVector counts;
  std::array<std::string_view, kResourceCount> printed_percent;
};

const std::array<MeasuredDesign, 4>& measured_designs();
// Average cost of one additional enclave.
ResourceVector per_enclave_delta();

struct Utilization {
  int enclaves = 0;
  ResourceVector counts;
  std::array<double, kResourceCount> percent{};
  bool measured = false;

  double percent_of(Resource r) const { return percent[static_cast<std::size_t>(r)]; }
};

// Measured row for n <= 4, row4 + (n - 4) * delta beyond. Throws
// ResourceError ("INVALID_N") for n < 1.
Utilization utilization(int n, const DeviceProfile& device);

struct Capacity {
  int count = 0;
  Resource binding = Resource::kBram;  // first to overflow at count + 1
};

Capacity max_enclaves(const DeviceProfile& device);

// Truncates toward zero at the given number of decimals (the published table
// truncates rather than rounds).
double truncate_to(double value, int decimals);
std::string format_percent(double value, int decimals = 2);

// Table-shaped text; for n < 1 an INVALID_N message.
std::string report(int n, const DeviceProfile& device);

}  // namespace teeod::resources
