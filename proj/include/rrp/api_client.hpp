#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "rrp/runtime.hpp"

namespace rrp {

struct SseFrame {
  std::string eventType;
  std::optional<std::uint64_t> id;
  std::string data;
};

/// Thin HTTP client of the REST surface. Error responses are rethrown as
/// rrp::Error with the server's code; transport failures as ServerUnreachable.
class ApiClient {
 public:
  explicit ApiClient(std::string baseUrl, std::string token = {});

  const std::string& token() const { return token_; }
  void set_token(std::string token) { token_ = std::move(token); }

  nlohmann::json health();
  /// Stores the minted token on success.
  nlohmann::json login(const std::string& user, const std::string& password);

  nlohmann::json projects();
  nlohmann::json create_project(const std::string& repoUrl, const std::string& ref, const std::string& name,
                                const std::optional<std::string>& credentials = std::nullopt);
  nlohmann::json project(const std::string& id);
  /// Polls until the project leaves the pipeline states.
  nlohmann::json wait_until_settled(const std::string& id, std::chrono::milliseconds timeout = std::chrono::minutes(30));
  nlohmann::json start(const std::string& id, const ResourceLimits& limits);
  nlohmann::json stop(const std::string& id);
  nlohmann::json remove(const std::string& id);
  nlohmann::json results(const std::string& id);
  std::string result(const std::string& id, const std::string& path);
  nlohmann::json upload(const std::string& id, const std::string& path,
                        const std::map<std::string, std::string>& metadata);
  nlohmann::json archive(const std::string& id);
  nlohmann::json share(const std::string& id);
  nlohmann::json open_share(const std::string& shareId, const std::optional<std::string>& name = std::nullopt);
  /// kind: "bundle" or "script"; returns the archive bytes.
  std::string bundle(const std::string& id, const std::string& kind = "bundle");

  /// Streams events; `onFrame` returns false to disconnect. `lastSeen` = 0
  /// replays from the start. With `untilHead` the stream ends once the
  /// journal head reported at connect time has been delivered.
  void events(const std::string& id, std::uint64_t lastSeen, const std::function<bool(const SseFrame&)>& onFrame,
              bool untilHead = false);

  /// Raw request for conformance checks: returns (status, body).
  std::pair<int, std::string> raw(const std::string& method, const std::string& path, const std::string& body = {},
                                  bool withToken = true);

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json* body = nullptr);
  std::string call_raw(const std::string& method, const std::string& path, const std::string& body);

  std::string baseUrl_;
  std::string token_;
};

}  // namespace rrp
