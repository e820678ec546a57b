#include "rrp/journal.hpp"

#include <array>

#include "rrp/error.hpp"

namespace rrp {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 8> kKindNames{{
    {EventKind::Status, "Status"},
    {EventKind::BuildLog, "BuildLog"},
    {EventKind::RunLog, "RunLog"},
    {EventKind::ResultsChanged, "ResultsChanged"},
    {EventKind::Error, "Error"},
    {EventKind::Share, "Share"},
    {EventKind::Upload, "Upload"},
    {EventKind::Archive, "Archive"},
}};

}  // namespace

std::string_view to_string(EventKind kind) noexcept {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

EventKind event_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  fail(ErrorCode::InvalidArgument, "unknown event kind " + std::string(name));
}

void to_json(json& j, const LogEvent& e) {
  j = json{{"sequence", e.sequence}, {"timestamp", iso8601(e.timestamp)}, {"kind", to_string(e.kind)},
           {"payload", e.payload}};
}

void from_json(const json& j, LogEvent& e) {
  j.at("sequence").get_to(e.sequence);
  e.timestamp = parse_iso8601(j.at("timestamp").get<std::string>());
  e.kind = event_kind_from_string(j.at("kind").get<std::string>());
  j.at("payload").get_to(e.payload);
}

// ---- subscription ----------------------------------------------------------

Subscription::Item Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || gap_ || closed_; });
  if (!queue_.empty()) {
    Item item{ItemType::Event, std::move(queue_.front()), 0};
    queue_.pop_front();
    return item;
  }
  if (gap_ && !gapDelivered_) {
    gapDelivered_ = true;
    return {ItemType::Gap, {}, *gap_};
  }
  if (gap_ || closed_) return {ItemType::Closed, {}, 0};
  return {ItemType::Timeout, {}, 0};
}

void Subscription::close() {
  {
    std::lock_guard g(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Subscription::offer(const LogEvent& e) {
  {
    std::lock_guard g(mu_);
    if (closed_ || gap_) return false;
    if (queue_.size() >= capacity_) {
      gap_ = e.sequence;
    } else {
      queue_.push_back(e);
    }
  }
  cv_.notify_all();
  return !gap_.has_value();
}

// ---- journal ---------------------------------------------------------------

Journal::Journal(fs::path file, std::size_t subscriberCapacity)
    : file_(std::move(file)), capacity_(subscriberCapacity) {
  std::error_code ec;
  if (fs::exists(file_, ec)) {
    for (const auto& line : split_lines(read_file(file_))) {
      if (trim(line).empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      // A torn final line (crash mid-write) is dropped; sequences stay gapless.
      if (j.is_discarded()) break;
      auto e = j.get<LogEvent>();
      if (e.sequence != events_.size() + 1) break;
      events_.push_back(std::move(e));
    }
  }
  fs::create_directories(file_.parent_path(), ec);
  // Rewrite so a torn tail never precedes new events.
  std::string clean;
  for (const auto& e : events_) clean += json(e).dump() + "\n";
  write_file(file_, clean);
  out_.open(file_, std::ios::app | std::ios::binary);
  if (!out_) fail(ErrorCode::TargetNotWritable, file_.string());
}

LogEvent Journal::append(EventKind kind, std::string payload) {
  std::lock_guard g(mu_);
  LogEvent e{events_.size() + 1, Clock::now(), kind, std::move(payload)};
  out_ << json(e).dump() << '\n';
  out_.flush();
  events_.push_back(e);
  std::erase_if(subscribers_, [&](const std::weak_ptr<Subscription>& w) {
    const auto s = w.lock();
    return !s || !s->offer(e);
  });
  return e;
}

std::vector<LogEvent> Journal::read(std::uint64_t fromSequence) const {
  std::lock_guard g(mu_);
  const auto start = fromSequence <= 1 ? 0 : std::min<std::size_t>(fromSequence - 1, events_.size());
  return {events_.begin() + static_cast<std::ptrdiff_t>(start), events_.end()};
}

std::uint64_t Journal::head() const {
  std::lock_guard g(mu_);
  return events_.size();
}

std::shared_ptr<Subscription> Journal::subscribe(std::uint64_t fromSequence) {
  auto sub = std::make_shared<Subscription>();
  std::lock_guard g(mu_);
  const auto start = fromSequence <= 1 ? 0 : std::min<std::size_t>(fromSequence - 1, events_.size());
  sub->queue_.assign(events_.begin() + static_cast<std::ptrdiff_t>(start), events_.end());
  sub->capacity_ = sub->queue_.size() + capacity_;
  subscribers_.push_back(sub);
  return sub;
}

void Journal::close_all() {
  std::vector<std::shared_ptr<Subscription>> subs;
  {
    std::lock_guard g(mu_);
    for (const auto& w : subscribers_) {
      if (auto s = w.lock()) subs.push_back(std::move(s));
    }
    subscribers_.clear();
  }
  for (const auto& s : subs) s->close();
}

}  // namespace rrp
