#include "teeod/events.hpp"

namespace teeod {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kOpen: return "OPEN";
    case EventKind::kLoad: return "LOAD";
    case EventKind::kDispatch: return "DISPATCH";
    case EventKind::kClose: return "CLOSE";
    case EventKind::kDestroy: return "DESTROY";
  }
  return "?";
}

std::string Event::to_line(bool with_timing) const {
  std::string line = "event=";
  line += to_string(kind);
  line += " slot=" + std::to_string(slot);
  line += " uuid=" + uuid.to_string();
  for (const auto& [k, v] : fields) line += " " + k + "=" + v;
  if (with_timing) {
    line += " dur_ns=" + std::to_string(dur_ns);
    line += " t_ns=" + std::to_string(t_ns);
  }
  return line;
}

std::string Event::field(std::string_view key) const {
  for (const auto& [k, v] : fields)
    if (k == key) return v;
  return {};
}

EventLog::EventLog() : start_(std::chrono::steady_clock::now()) {}

void EventLog::record(Event event) {
  event.t_ns = static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                         std::chrono::steady_clock::now() - start_)
                                         .count());
  Sink sink;
  std::string line;
  {
    std::lock_guard lock(mu_);
    sink = sink_;
    if (sink) line = event.to_line();
    events_.push_back(std::move(event));
  }
  if (sink) sink(line);
}

std::vector<Event> EventLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::size_t EventLog::count(EventKind kind) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& e : events_) n += (e.kind == kind);
  return n;
}

void EventLog::clear() {
  std::lock_guard lock(mu_);
  events_.clear();
}

void EventLog::set_sink(Sink sink) {
  std::lock_guard lock(mu_);
  sink_ = std::move(sink);
}

void DmaModel::charge(std::size_t bytes) const {
  if (ns_per_byte == 0 || bytes == 0) return;
  // Busy-wait: sleep granularity is far coarser than the modeled costs.
  const auto until = std::chrono::steady_clock::now() +
                     std::chrono::nanoseconds(ns_per_byte * static_cast<uint64_t>(bytes));
  while (std::chrono::steady_clock::now() < until) {
  }
}

}  // namespace teeod
