#include "rrp/api_service.hpp"

#include <httplib.h>
#include <sys/socket.h>

#include <atomic>
#include <mutex>

#include "rrp/bundler.hpp"
#include "rrp/error.hpp"

namespace rrp {

using nlohmann::json;

void to_json(json& j, const ApiToken& t) {
  j = json{{"token", t.token},
           {"userId", t.userId},
           {"issuedAt", iso8601(t.issuedAt)},
           {"expiresAt", iso8601(t.expiresAt)}};
}

void from_json(const json& j, ApiToken& t) {
  j.at("token").get_to(t.token);
  j.at("userId").get_to(t.userId);
  t.issuedAt = parse_iso8601(j.at("issuedAt").get<std::string>());
  t.expiresAt = parse_iso8601(j.at("expiresAt").get<std::string>());
}

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::AuthFailed:
      return 401;
    case ErrorCode::UnknownProject:
    case ErrorCode::ResultNotFound:
    case ErrorCode::ShareNotFound:
    case ErrorCode::DatasetNotFound:
    case ErrorCode::ObjectNotFound:
    case ErrorCode::ImageNotFound:
    case ErrorCode::UnknownSession:
      return 404;
    case ErrorCode::NameTaken:
    case ErrorCode::InvalidState:
    case ErrorCode::RepositoryDirty:
    case ErrorCode::NoActiveSession:
    case ErrorCode::UnpublishedDatasets:
    case ErrorCode::ImageNotPublished:
      return 409;
    case ErrorCode::InvalidArgument:
    case ErrorCode::EmptyName:
    case ErrorCode::ResourceDenied:
    case ErrorCode::ManifestSyntax:
    case ErrorCode::InvalidFolderName:
    case ErrorCode::DuplicateMountTarget:
    case ErrorCode::EmptyDataset:
    case ErrorCode::UnsupportedRuntime:
    case ErrorCode::ConflictingInputs:
    case ErrorCode::NoEnvironmentFound:
    case ErrorCode::RefNotFound:
      return 400;
    case ErrorCode::RdmsUnreachable:
    case ErrorCode::ServerUnreachable:
    case ErrorCode::RdmsError:
    case ErrorCode::DaemonUnavailable:
    case ErrorCode::RegistryUnreachable:
    case ErrorCode::FetchFailed:
      return 502;
    default:
      return 500;
  }
}

std::string sse_event_name(EventKind kind) {
  switch (kind) {
    case EventKind::Status: return "status";
    case EventKind::BuildLog: return "build-log";
    case EventKind::RunLog: return "run-log";
    case EventKind::ResultsChanged: return "results-changed";
    case EventKind::Error: return "error";
    case EventKind::Share: return "share";
    case EventKind::Upload: return "upload";
    case EventKind::Archive: return "archive";
  }
  return "message";
}

namespace {

constexpr auto kPollSlice = std::chrono::milliseconds(250);

constexpr std::string_view kLandingPage =
    "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>RRP</title></head>\n"
    "<body><h1>RRP</h1><p>The REST API is served under <code>/api/v1</code>; "
    "running sessions under <code>/session/&lt;projectId&gt;/</code>.</p></body></html>\n";

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, json{{"error", to_string(code)}, {"message", message}}, http_status(code));
}

json body_of(const httplib::Request& req) {
  if (trim(req.body).empty()) return json::object();
  const auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::InvalidArgument, "request body must be a JSON object");
  return j;
}

std::string cookie_value(const std::string& header, std::string_view name) {
  std::size_t pos = 0;
  while (pos < header.size()) {
    auto end = header.find(';', pos);
    if (end == std::string::npos) end = header.size();
    const auto part = trim(std::string_view(header).substr(pos, end - pos));
    const auto eq = part.find('=');
    if (eq != std::string::npos && part.substr(0, eq) == name) return std::string(part.substr(eq + 1));
    pos = end + 1;
  }
  return {};
}

std::string token_of(const httplib::Request& req) {
  const auto auth = req.get_header_value("Authorization");
  if (starts_with(auth, "Bearer ")) return std::string(trim(std::string_view(auth).substr(7)));
  if (auto c = cookie_value(req.get_header_value("Cookie"), kTokenCookie); !c.empty()) return c;
  return req.get_param_value("token");
}

std::uint64_t parse_u64(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::InvalidArgument, std::string(what) + " must be a non-negative integer");
}

/// First sequence to deliver: `from`, else one past `lastSeenSequence` or
/// the Last-Event-ID header.
std::uint64_t first_sequence(const httplib::Request& req) {
  if (req.has_param("from")) return parse_u64(req.get_param_value("from"), "from");
  if (req.has_param("lastSeenSequence")) return parse_u64(req.get_param_value("lastSeenSequence"), "lastSeenSequence") + 1;
  if (req.has_header("Last-Event-ID")) return parse_u64(req.get_header_value("Last-Event-ID"), "Last-Event-ID") + 1;
  return 1;
}

std::string default_name(const std::string& repoUrl) {
  std::string_view s = repoUrl;
  while (!s.empty() && s.back() == '/') s.remove_suffix(1);
  if (const auto slash = s.find_last_of("/:"); slash != std::string_view::npos) s = s.substr(slash + 1);
  if (s.ends_with(".git")) s.remove_suffix(4);
  return std::string(s);
}

std::string project_id_in(std::string_view publicPath) {
  auto rest = publicPath.substr(kSessionPrefix.size());
  return std::string(rest.substr(0, rest.find('/')));
}

}  // namespace

struct ApiService::Impl {
  std::shared_ptr<Orchestrator> orch;
  ApiConfig config;
  httplib::Server server;
  std::atomic<bool> stopping{false};
  mutable std::mutex tokenMu;
  std::map<std::string, ApiToken> tokens;

  using Handler = std::function<void(const httplib::Request&, httplib::Response&, const std::string& user)>;

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      send_error(res, e.code(), e.detail());
    } catch (const json::exception& e) {
      send_error(res, ErrorCode::InvalidArgument, e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::Internal, e.what());
    }
  }

  httplib::Server::Handler authed(Handler h) {
    return [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { h(req, res, user_for(token_of(req))); });
    };
  }

  std::string user_for(const std::string& token) const {
    if (token.empty()) fail(ErrorCode::AuthFailed, "missing token");
    std::lock_guard g(tokenMu);
    const auto it = tokens.find(token);
    if (it == tokens.end()) fail(ErrorCode::AuthFailed, "unknown token");
    if (Clock::now() >= it->second.expiresAt) fail(ErrorCode::AuthFailed, "token expired");
    return it->second.userId;
  }

  ApiToken authenticate(const std::string& user, const std::string& password) {
    try {
      orch->rdms().login(user, password);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::AuthFailed) throw;
      fail(ErrorCode::RdmsUnreachable, e.what());
    }
    const auto now = Clock::now();
    ApiToken t{to_lower(base32_encode(random_bytes(20))), user, now,
               now + std::chrono::duration_cast<Clock::duration>(config.tokenTtl)};
    std::lock_guard g(tokenMu);
    std::erase_if(tokens, [&](const auto& kv) { return now >= kv.second.expiresAt; });
    tokens[t.token] = t;
    return t;
  }

  /// Projects of other owners do not exist for the caller.
  ProjectRecord visible(const std::string& id, const std::string& user) const {
    auto rec = orch->project(id);
    if (rec.owner != user) fail(ErrorCode::UnknownProject, id);
    return rec;
  }

  void routes();
  void events(const httplib::Request& req, httplib::Response& res, const std::string& user);
  void proxy(const httplib::Request& req, httplib::Response& res, const std::string& user);
};

void ApiService::Impl::routes() {
  auto& srv = server;
  const std::string api(kApiPrefix);
  const std::string id = "([^/]+)";

  srv.Get(api + "/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, {{"status", "ok"}, {"runtime", orch->runtime().backend_name()}});
  });

  srv.Post(api + "/login", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_of(req);
      const auto user = body.contains("user") ? body.at("user").get<std::string>() : body.value("username", "");
      const auto token = authenticate(user, body.value("password", ""));
      res.set_header("Set-Cookie",
                     std::string(kTokenCookie) + "=" + token.token + "; Path=/; HttpOnly; SameSite=Strict");
      send_json(res, token);
    });
  });

  srv.Get(api + "/projects", authed([this](const auto&, auto& res, const std::string& user) {
            json out = json::array();
            for (const auto& r : orch->projects()) {
              if (r.owner == user && r.status != ProjectStatus::Deleted) out.push_back(r);
            }
            send_json(res, out);
          }));

  srv.Post(api + "/projects", authed([this](const auto& req, auto& res, const std::string& user) {
             const auto body = body_of(req);
             ProjectSource src;
             src.repoUrl = body.value("repoUrl", "");
             if (src.repoUrl.empty()) fail(ErrorCode::InvalidArgument, "repoUrl is required");
             src.ref = body.value("ref", "");
             if (body.contains("credentials") && body["credentials"].is_string()) {
               src.credentials = body["credentials"].template get<std::string>();
             }
             const auto name = body.value("name", default_name(src.repoUrl));
             send_json(res, orch->create_project(user, src, name), 202);
           }));

  srv.Get(api + "/projects/" + id, authed([this](const auto& req, auto& res, const std::string& user) {
            send_json(res, visible(req.matches[1], user));
          }));

  srv.Post(api + "/projects/" + id + "/start", authed([this](const auto& req, auto& res, const std::string& user) {
             visible(req.matches[1], user);
             const auto body = body_of(req);
             ResourceLimits limits;
             limits.cpuCores = body.value("cpuCores", limits.cpuCores);
             limits.memoryBytes = body.value("memoryBytes", limits.memoryBytes);
             const auto info = orch->start_project(req.matches[1], limits);
             send_json(res, {{"project", orch->project(req.matches[1])}, {"publicPath", info.publicPath}});
           }));

  srv.Post(api + "/projects/" + id + "/stop", authed([this](const auto& req, auto& res, const std::string& user) {
             visible(req.matches[1], user);
             send_json(res, orch->stop_project(req.matches[1]));
           }));

  srv.Delete(api + "/projects/" + id, authed([this](const auto& req, auto& res, const std::string& user) {
               visible(req.matches[1], user);
               send_json(res, orch->delete_project(req.matches[1]));
             }));

  srv.Get(api + "/projects/" + id + "/results", authed([this](const auto& req, auto& res, const std::string& user) {
            visible(req.matches[1], user);
            send_json(res, orch->list_results(req.matches[1]));
          }));

  srv.Get(api + "/projects/" + id + "/results/(.+)",
          authed([this](const auto& req, auto& res, const std::string& user) {
            visible(req.matches[1], user);
            res.set_content(orch->read_result(req.matches[1], req.matches[2]), "application/octet-stream");
          }));

  srv.Post(api + "/projects/" + id + "/upload", authed([this](const auto& req, auto& res, const std::string& user) {
             visible(req.matches[1], user);
             const auto body = body_of(req);
             const auto path = body.value("path", "");
             if (path.empty()) fail(ErrorCode::InvalidArgument, "path is required");
             const auto metadata = body.value("metadata", std::map<std::string, std::string>{});
             send_json(res, {{"permId", orch->upload_result(req.matches[1], path, metadata)}}, 201);
           }));

  srv.Post(api + "/projects/" + id + "/archive", authed([this](const auto& req, auto& res, const std::string& user) {
             visible(req.matches[1], user);
             send_json(res, {{"permId", orch->archive_project(req.matches[1])}}, 201);
           }));

  srv.Post(api + "/projects/" + id + "/share", authed([this](const auto& req, auto& res, const std::string& user) {
             visible(req.matches[1], user);
             send_json(res, orch->create_share(req.matches[1]), 201);
           }));

  srv.Post(api + "/shares/" + id + "/open", authed([this](const auto& req, auto& res, const std::string& user) {
             const auto body = body_of(req);
             std::optional<std::string> name;
             if (body.contains("name") && body["name"].is_string()) name = body["name"].template get<std::string>();
             send_json(res, orch->open_share(req.matches[1], user, name), 201);
           }));

  srv.Get(api + "/projects/" + id + "/events", authed([this](const auto& req, auto& res, const std::string& user) {
            events(req, res, user);
          }));

  srv.Get(api + "/projects/" + id + "/bundle", authed([this](const auto& req, auto& res, const std::string& user) {
            const auto rec = visible(req.matches[1], user);
            const auto kind = req.has_param("kind") ? req.get_param_value("kind") : std::string("bundle");
            if (kind != "bundle" && kind != "script") fail(ErrorCode::InvalidArgument, "kind must be bundle or script");
            TempDir tmp("rrp-export");
            const auto file = tmp.path() / "player.tar.gz";
            const auto result = kind == "script" ? export_player_script(*orch, rec.projectId, file)
                                                 : export_player_bundle(*orch, rec.projectId, file);
            for (const auto& w : result.warnings) res.set_header("X-RRP-Warning", w);
            res.set_header("Content-Disposition",
                           "attachment; filename=\"" + slugify(rec.name) + "-" + kind + ".tar.gz\"");
            res.set_content(read_file(file), "application/gzip");
          }));

  const auto sessionPattern = std::string(kSessionPrefix) + ".*";
  const auto forward = authed([this](const auto& req, auto& res, const std::string& user) { proxy(req, res, user); });
  srv.Get(sessionPattern, forward);
  srv.Post(sessionPattern, forward);
  srv.Put(sessionPattern, forward);
  srv.Delete(sessionPattern, forward);
  srv.Patch(sessionPattern, forward);
  srv.Options(sessionPattern, forward);

  if (!config.staticDir.empty()) {
    srv.set_mount_point("/", config.staticDir);
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(std::string(kLandingPage), "text/html; charset=utf-8");
    });
  }
}

void ApiService::Impl::events(const httplib::Request& req, httplib::Response& res, const std::string& user) {
  const std::string id = req.matches[1];
  visible(id, user);
  const auto from = first_sequence(req);
  auto sub = orch->project_events(id, from);
  const auto replay = orch->journal(id, 0);
  res.set_header("X-Journal-Head", std::to_string(replay.empty() ? 0 : replay.back().sequence));
  const auto heartbeat = config.heartbeat;
  res.set_header("Cache-Control", "no-cache");
  res.set_header("X-Accel-Buffering", "no");
  res.set_chunked_content_provider(
      "text/event-stream",
      [this, sub, heartbeat](std::size_t, httplib::DataSink& sink) {
        auto idle = std::chrono::milliseconds(0);
        while (!stopping) {
          const auto item = sub->next(std::min(kPollSlice, heartbeat));
          switch (item.type) {
            case Subscription::ItemType::Event: {
              const auto frame = "id: " + std::to_string(item.event.sequence) + "\nevent: " +
                                 sse_event_name(item.event.kind) + "\ndata: " + json(item.event).dump() + "\n\n";
              return sink.write(frame.data(), frame.size());
            }
            case Subscription::ItemType::Gap: {
              const auto frame = "event: gap\ndata: " +
                                 json{{"firstMissing", item.gapFrom}, {"sequence", item.gapFrom}}.dump() + "\n\n";
              return sink.write(frame.data(), frame.size());
            }
            case Subscription::ItemType::Closed:
              sink.done();
              return true;
            case Subscription::ItemType::Timeout:
              if (!sink.is_writable()) return false;
              idle += std::min(kPollSlice, heartbeat);
              if (idle >= heartbeat) {
                constexpr std::string_view beat = ": heartbeat\n\n";
                return sink.write(beat.data(), beat.size());
              }
              break;
          }
        }
        sink.done();
        return true;
      },
      [sub](bool) { sub->close(); });
}

void ApiService::Impl::proxy(const httplib::Request& req, httplib::Response& res, const std::string& user) {
  visible(project_id_in(req.path), user);
  const auto handle = orch->route(req.path);
  ProxyRequest pr;
  pr.method = req.method;
  pr.path = req.path;
  if (const auto q = req.target.find('?'); q != std::string::npos) pr.query = req.target.substr(q + 1);
  for (const auto& [k, v] : req.headers) pr.headers.emplace(k, v);
  pr.body = req.body;
  const auto out = orch->runtime().forward(handle, pr);
  res.status = out.status;
  for (const auto& [k, v] : out.headers) {
    const auto key = to_lower(k);
    if (key != "content-length" && key != "transfer-encoding" && key != "content-type") res.set_header(k, v);
  }
  res.set_content(out.body, out.contentType);
}

ApiService::ApiService(std::shared_ptr<Orchestrator> orchestrator, ApiConfig config)
    : impl_(std::make_unique<Impl>()) {
  impl_->orch = std::move(orchestrator);
  impl_->config = std::move(config);
  auto& srv = impl_->server;
  const auto threads = impl_->config.workerThreads;
  srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  impl_->routes();
  const auto& host = impl_->config.host;
  if (impl_->config.port == 0) {
    port_ = srv.bind_to_any_port(host);
    if (port_ < 0) fail(ErrorCode::PortInUse, host + ": no ephemeral port available");
  } else {
    if (!srv.bind_to_port(host, impl_->config.port)) {
      fail(ErrorCode::PortInUse, host + ":" + std::to_string(impl_->config.port));
    }
    port_ = impl_->config.port;
  }
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
}

ApiService::~ApiService() {
  stop();
  if (thread_.joinable()) thread_.join();
}

ApiToken ApiService::authenticate(const std::string& user, const std::string& password) {
  return impl_->authenticate(user, password);
}

std::string ApiService::user_for(const std::string& token) const { return impl_->user_for(token); }

std::string ApiService::url() const { return "http://" + impl_->config.host + ":" + std::to_string(port_); }

void ApiService::wait() {
  if (thread_.joinable()) thread_.join();
}

void ApiService::stop() {
  impl_->stopping = true;
  impl_->server.stop();
}

}  // namespace rrp
