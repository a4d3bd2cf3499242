#include "teeod/resources.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace teeod::resources {

std::string_view to_string(Resource r) {
  switch (r) {
    case Resource::kLut: return "LUT";
    case Resource::kLutram: return "LUTRAM";
    case Resource::kFf: return "FF";
    case Resource::kBram: return "BRAM";
    case Resource::kDsp: return "DSP";
    case Resource::kIo: return "IO";
    case Resource::kBufg: return "BUFG";
  }
  return "?";
}

std::optional<Resource> parse_resource(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (Resource r : kAllResources) {
    std::string n(to_string(r));
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    if (n == lower) return r;
  }
  return std::nullopt;
}

ResourceVector make_vector(uint64_t lut, uint64_t lutram, uint64_t ff, uint64_t bram,
                           uint64_t dsp, uint64_t io, uint64_t bufg) {
  return ResourceVector{{lut, lutram, ff, bram, dsp, io, bufg}};
}

DeviceProfile DeviceProfile::zu3eg() {
  // IO and BUFG totals are the denominators implied by the published
  // percentages (2 -> 2.43%, 3 -> 1.53%).
  return {"ZU3EG", make_vector(70560, 28800, 141120, 216, 360, 82, 196)};
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

DeviceProfile DeviceProfile::parse(std::string_view text) {
  DeviceProfile p;
  std::array<bool, kResourceCount> seen{};
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ResourceError("device profile line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "name") {
      p.name = value;
      continue;
    }
    auto r = parse_resource(key);
    if (!r) throw ResourceError("device profile: unknown key '" + key + "'");
    uint64_t v = 0;
    try {
      std::size_t used = 0;
      v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ResourceError("device profile: '" + key + "' is not a number");
    }
    if (v == 0) throw ResourceError("device profile: '" + key + "' must be positive");
    p.capacity[*r] = v;
    seen[static_cast<std::size_t>(*r)] = true;
  }
  if (p.name.empty()) throw ResourceError("device profile: missing name");
  for (Resource r : kAllResources) {
    if (!seen[static_cast<std::size_t>(r)])
      throw ResourceError("device profile: missing capacity '" + std::string(to_string(r)) + "'");
  }
  return p;
}

DeviceProfile DeviceProfile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot read device profile " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

DeviceProfile DeviceProfile::resolve(std::string_view name_or_path) {
  std::string upper(name_or_path);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "ZU3EG") return zu3eg();
  return load(std::filesystem::path(name_or_path));
}

bool fits(const ResourceVector& usage, const DeviceProfile& device) {
  return std::all_of(kFitResources.begin(), kFitResources.end(),
                     [&](Resource r) { return usage[r] <= device.capacity[r]; });
}

const std::array<MeasuredDesign, 4>& measured_designs() {
  static const std::array<MeasuredDesign, 4> kTable = {{
      {1, make_vector(9845, 807, 11532, 34, 3, 2, 3),
       {"13.95", "2.80", "8.17", "15.7", "0.83", "2.4", "1.53"}},
      {2, make_vector(14844, 987, 17034, 68, 6, 2, 4),
       {"21.0", "3.4", "12", "31", "1.6", "2.4", "2."}},
      {3, make_vector(20146, 1171, 22735, 102, 9, 2, 4),
       {"28.55", "4.0", "16.11", "47.22", "2.5", "2.43", "2."}},
      {4, make_vector(24963, 1355, 28026, 136, 12, 2, 4),
       {"35.37", "4.7", "19.85", "62.96", "3.3", "2.4", "2"}},
  }};
  return kTable;
}

ResourceVector per_enclave_delta() { return make_vector(5000, 180, 5500, 34, 3, 0, 0); }

Utilization utilization(int n, const DeviceProfile& device) {
  if (n < 1) throw ResourceError("INVALID_N: enclave count must be at least 1");
  Utilization u;
  u.enclaves = n;
  const auto& table = measured_designs();
  if (n <= static_cast<int>(table.size())) {
    u.counts = table[static_cast<std::size_t>(n - 1)].counts;
    u.measured = true;
  } else {
    u.counts = table.back().counts + static_cast<uint64_t>(n - 4) * per_enclave_delta();
  }
  for (Resource r : kAllResources) {
    u.percent[static_cast<std::size_t>(r)] =
        100.0 * static_cast<double>(u.counts[r]) / static_cast<double>(device.capacity[r]);
  }
  return u;
}

Capacity max_enclaves(const DeviceProfile& device) {
  // Bounded because the BRAM delta is nonzero; the cap guards pathological
  // profiles.
  constexpr int kSearchLimit = 1 << 16;
  int n = 0;
  while (n < kSearchLimit && fits(utilization(n + 1, device).counts, device)) ++n;

  const Utilization over = utilization(n + 1, device);
  Capacity c;
  c.count = n;
  double worst = -1.0;
  for (Resource r : kFitResources) {
    if (over.counts[r] <= device.capacity[r]) continue;
    const double ratio = over.percent_of(r);
    if (ratio > worst) {
      worst = ratio;
      c.binding = r;
    }
  }
  return c;
}

double truncate_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Nudge by a few ulps so exact decimal values are not truncated down.
  return std::trunc(value * scale * (1.0 + 1e-12)) / scale;
}

std::string format_percent(double value, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, truncate_to(value, decimals));
  return buf;
}

std::string report(int n, const DeviceProfile& device) {
  if (n < 1) return "INVALID_N: enclave count must be at least 1 (got " + std::to_string(n) + ")\n";
  const Utilization u = utilization(n, device);
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-10s %d Enclave%s (%s, %s)\n", "Resources", n, n == 1 ? "" : "s",
                device.name.c_str(), u.measured ? "measured" : "extrapolated");
  out << line;
  for (Resource r : kAllResources) {
    const std::string pct = format_percent(u.percent_of(r)) + "%";
    std::snprintf(line, sizeof(line), "%-10s %llu (%s)\n", std::string(to_string(r)).c_str(),
                  static_cast<unsigned long long>(u.counts[r]), pct.c_str());
    out << line;
  }
  out << "note: IO and BUFG are constant across measured designs and excluded from the fit test\n";
  const Capacity cap = max_enclaves(device);
  out << "fits " << device.name << ": " << (fits(u.counts, device) ? "yes" : "no") << "\n";
  out << "max enclaves on " << device.name << ": " << cap.count << " (bound by "
      << to_string(cap.binding) << ")\n";
  if (cap.count < 2) out << "warning: fewer than two concurrent TAs fit this device\n";
  return out.str();
}

}  // namespace teeod::resources
