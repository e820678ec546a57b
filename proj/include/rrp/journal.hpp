#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrp/util.hpp"

namespace rrp {

enum class EventKind { Status, BuildLog, RunLog, ResultsChanged, Error, Share, Upload, Archive };

std::string_view to_string(EventKind kind) noexcept;
/// InvalidArgument for unknown names.
EventKind event_kind_from_string(std::string_view name);

struct LogEvent {
  std::uint64_t sequence = 0;  // starts at 1, gapless per journal
  Timestamp timestamp;
  EventKind kind = EventKind::Status;
  std::string payload;
};

void to_json(nlohmann::json& j, const LogEvent& e);
void from_json(const nlohmann::json& j, LogEvent& e);

/// Live feed of one journal. Replayed history is delivered first, then live
/// events. A subscriber that falls `capacity` events behind is cut off: it
/// receives the events it holds, then one Gap item carrying the first
/// missing sequence, then Closed.
class Subscription {
 public:
  enum class ItemType { Event, Gap, Timeout, Closed };
  struct Item {
    ItemType type = ItemType::Closed;
    LogEvent event;
    std::uint64_t gapFrom = 0;
  };

  Item next(std::chrono::milliseconds timeout);
  /// Stops delivery; next() returns Closed once the queue is drained.
  void close();

 private:
  friend class Journal;
  /// False when the subscriber overflowed (and is now detached).
  bool offer(const LogEvent& e);

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<LogEvent> queue_;
  std::size_t capacity_ = 0;
  std::optional<std::uint64_t> gap_;
  bool gapDelivered_ = false;
  bool closed_ = false;
};

/// Append-only, per-project event log persisted as JSON lines.
class Journal {
 public:
  /// Loads any existing events from `file` and appends after them.
  explicit Journal(fs::path file, std::size_t subscriberCapacity = 1024);

  LogEvent append(EventKind kind, std::string payload);
  /// Events with sequence >= fromSequence.
  std::vector<LogEvent> read(std::uint64_t fromSequence = 0) const;
  std::uint64_t head() const;
  /// Atomically replays events with sequence >= fromSequence and attaches
  /// for live delivery.
  std::shared_ptr<Subscription> subscribe(std::uint64_t fromSequence);
  /// Closes every attached subscription.
  void close_all();

 private:
  fs::path file_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::vector<LogEvent> events_;
  std::ofstream out_;
  std::vector<std::weak_ptr<Subscription>> subscribers_;
};

}  // namespace rrp
