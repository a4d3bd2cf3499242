#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "teeod/protocol.hpp"

namespace teeod {

enum class EventKind { kOpen, kLoad, kDispatch, kClose, kDestroy };

std::string_view to_string(EventKind kind);

// One state transition. Rendered as a single key=value line:
//   event=LOAD slot=0 uuid=<uuid> size=32 dur_ns=1834 t_ns=90211
// dur_ns and t_ns are the only wall-clock fields and always come last.
struct Event {
  EventKind kind = EventKind::kOpen;
  int slot = -1;
  Uuid uuid;
  std::vector<std::pair<std::string, std::string>> fields;
  uint64_t dur_ns = 0;
  uint64_t t_ns = 0;

  std::string to_line(bool with_timing = true) const;
  // Value of a field, or "" if absent.
  std::string field(std::string_view key) const;
};

class EventLog {
 public:
  using Sink = std::function<void(const std::string&)>;

  EventLog();

  void record(Event event);
  std::vector<Event> events() const;
  std::size_t count(EventKind kind) const;
  void clear();
  // Called with every rendered line, outside the log lock.
  void set_sink(Sink sink);

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
  Sink sink_;
  std::chrono::steady_clock::time_point start_;
};

// Latency model for transfers over the PS/PL interconnect. With
// ns_per_byte == 0 transfers are free.
struct DmaModel {
  uint64_t ns_per_byte = 0;

  void charge(std::size_t bytes) const;
};

}  // namespace teeod
