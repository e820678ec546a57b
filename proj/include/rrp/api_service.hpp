#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "rrp/journal.hpp"
#include "rrp/orchestrator.hpp"

namespace rrp {

inline constexpr int kDefaultApiPort = 7443;
inline constexpr std::string_view kApiPrefix = "/api/v1";
inline constexpr std::string_view kTokenCookie = "rrp_token";

struct ApiToken {
  std::string token;
  std::string userId;
  Timestamp issuedAt;
  Timestamp expiresAt;
};

void to_json(nlohmann::json& j, const ApiToken& t);
void from_json(const nlohmann::json& j, ApiToken& t);

/// HTTP status an error code is reported with.
int http_status(ErrorCode code) noexcept;

/// SSE event name for a journal kind: status, build-log, run-log,
/// results-changed, error, share, upload, archive.
std::string sse_event_name(EventKind kind);

struct ApiConfig {
  std::string host = "127.0.0.1";
  int port = kDefaultApiPort;  // 0 = ephemeral
  std::chrono::seconds tokenTtl = std::chrono::hours(12);
  std::chrono::milliseconds heartbeat = std::chrono::seconds(15);
  /// Served under `/` when set; a built-in landing page otherwise.
  fs::path staticDir;
  std::size_t workerThreads = 64;
};

/// REST + SSE front of an orchestrator, with the `/session/` reverse proxy.
/// Every route except login, health and the static UI requires a token
/// (Bearer header, `rrp_token` cookie, or `token` query parameter). Projects
/// are visible only to their owner; other ids answer 404.
class ApiService {
 public:
  /// Binds and serves on a background thread. PortInUse.
  ApiService(std::shared_ptr<Orchestrator> orchestrator, ApiConfig config);
  ~ApiService();
  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  /// Mints a token iff the RDMS accepts the credentials.
  /// AuthFailed; RdmsUnreachable when the RDMS cannot be reached.
  ApiToken authenticate(const std::string& user, const std::string& password);
  /// userId for a live token; AuthFailed otherwise.
  std::string user_for(const std::string& token) const;

  std::string url() const;
  int port() const { return port_; }
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace rrp
