#include <httplib.h>

#include "rrp/error.hpp"
#include "rrp/rdms.hpp"

namespace rrp {

using nlohmann::json;

namespace {

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::AuthFailed: return 401;
    case ErrorCode::DatasetNotFound:
    case ErrorCode::ObjectNotFound: return 404;
    case ErrorCode::EmptyDataset:
    case ErrorCode::InvalidArgument: return 400;
    default: return 500;
  }
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  res.status = http_status_for(code);
  res.set_content(json{{"error", to_string(code)}, {"message", message}}.dump(), "application/json");
}

std::string encode_path(std::string_view path) {
  std::string out;
  for (unsigned char c : path) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto pathStart = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (pathStart == std::string::npos) return {url, ""};
  auto prefix = url.substr(pathStart);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, pathStart), prefix};
}

class Wire {
 public:
  explicit Wire(const std::string& baseUrl) : ep_(split_url(baseUrl)), cli_(ep_.origin) {
    cli_.set_connection_timeout(5);
    cli_.set_read_timeout(120);
    cli_.set_write_timeout(120);
  }

  httplib::Result get(const std::string& path, httplib::Headers headers = {}) {
    return cli_.Get(ep_.prefix + path, headers);
  }
  httplib::Result post(const std::string& path, const json& body, httplib::Headers headers = {}) {
    return cli_.Post(ep_.prefix + path, headers, body.dump(), "application/json");
  }

  /// Maps transport failures and error bodies to rrp errors.
  const httplib::Response& check(const httplib::Result& res) {
    if (!res) fail(ErrorCode::ServerUnreachable, ep_.origin + ": " + httplib::to_string(res.error()));
    if (res->status >= 200 && res->status < 300) return *res;
    const auto body = json::parse(res->body, nullptr, false);
    if (body.is_object() && body.contains("error")) {
      fail(error_code_from_string(body["error"].get<std::string>()), body.value("message", std::string{}));
    }
    fail(ErrorCode::ServerUnreachable, "unexpected HTTP " + std::to_string(res->status) + " from " + ep_.origin);
  }

 private:
  Endpoint ep_;
  httplib::Client cli_;
};

httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

}  // namespace

// ---- client ----------------------------------------------------------------

HttpRdmsClient::HttpRdmsClient(std::string baseUrl) : baseUrl_(std::move(baseUrl)) {
  while (!baseUrl_.empty() && baseUrl_.back() == '/') baseUrl_.pop_back();
}

SessionToken HttpRdmsClient::login(const std::string& user, const std::string& password) {
  Wire w(baseUrl_);
  const auto body = json::parse(w.check(w.post("/login", {{"user", user}, {"password", password}})).body);
  return {body.at("token"), body.at("userId"), parse_iso8601(body.at("expiresAt").get<std::string>())};
}

DatasetDescriptor HttpRdmsClient::resolve_dataset(const std::string& token, const std::string& permId) {
  Wire w(baseUrl_);
  return json::parse(w.check(w.get("/datasets/" + encode_path(permId), bearer(token))).body).get<DatasetDescriptor>();
}

std::string HttpRdmsClient::read_file(const std::string& token, const std::string& permId, const std::string& path,
                                      std::optional<ByteRange> range) {
  Wire w(baseUrl_);
  auto headers = bearer(token);
  if (range) {
    if (range->length == 0) return {};
    headers.emplace("Range", "bytes=" + std::to_string(range->offset) + "-" +
                                 std::to_string(range->offset + range->length - 1));
  }
  const auto res = w.get("/datasets/" + encode_path(permId) + "/files/" + encode_path(path), headers);
  if (res && res->status == 416) return {};  // range starts past the end
  return w.check(res).body;
}

std::string HttpRdmsClient::register_dataset(const std::string& token, const std::vector<DatasetFile>& files,
                                             const std::map<std::string, std::string>& metadata) {
  Wire w(baseUrl_);
  json jf = json::array();
  for (const auto& f : files) jf.push_back({{"path", f.path}, {"data", base64_encode(f.bytes)}});
  const auto body = json::parse(w.check(w.post("/datasets", {{"files", jf}, {"metadata", metadata}}, bearer(token))).body);
  return body.at("permId");
}

DoiRecord HttpRdmsClient::publish(const std::string& token, const std::string& objectRef) {
  Wire w(baseUrl_);
  return json::parse(w.check(w.post("/publish", {{"objectRef", objectRef}}, bearer(token))).body).get<DoiRecord>();
}

std::optional<DoiRecord> HttpRdmsClient::find_publication(const std::string& token, const std::string& objectRef) {
  Wire w(baseUrl_);
  try {
    return json::parse(w.check(w.get("/datasets/" + encode_path(objectRef) + "/doi", bearer(token))).body)
        .get<DoiRecord>();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ObjectNotFound) return std::nullopt;
    throw;
  }
}

// ---- server ----------------------------------------------------------------

struct ReferenceRdmsServer::Impl {
  httplib::Server server;
};

namespace {

/// Runs `body`, translating rrp errors into JSON error responses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    send_error(res, e.code(), e.detail());
  } catch (const json::exception& e) {
    send_error(res, ErrorCode::InvalidArgument, e.what());
  } catch (const std::exception& e) {
    send_error(res, ErrorCode::Internal, e.what());
  }
}

std::string bearer_token(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view kBearer = "Bearer ";
  if (!starts_with(h, kBearer)) fail(ErrorCode::AuthFailed, "missing bearer token");
  return h.substr(kBearer.size());
}

/// httplib applies any requested Range to the content but rejects a last
/// position past the end, which RFC 9110 says to clamp; clamp it here.
void serve_file(const httplib::Request& req, httplib::Response& res, std::string bytes) {
  auto& ranges = const_cast<httplib::Ranges&>(req.ranges);
  const auto size = static_cast<ssize_t>(bytes.size());
  for (auto& [first, last] : ranges) {
    if (first >= 0 && last >= size) last = size - 1;
  }
  res.set_content(std::move(bytes), "application/octet-stream");
}

}  // namespace

ReferenceRdmsServer::ReferenceRdmsServer(Config config) : impl_(std::make_unique<Impl>()), host_(config.host) {
  store_ = std::make_shared<RdmsStore>(RdmsStore::Options{config.dataDir, "", config.tokenTtl, {}});
  auto& srv = impl_->server;
  auto store = store_;

  srv.Post("/login", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto t = store->login(body.at("user"), body.at("password"));
      res.set_content(json{{"token", t.token}, {"userId", t.userId}, {"expiresAt", iso8601(t.expiresAt)}}.dump(),
                      "application/json");
    });
  });
  srv.Get(R"(/datasets/([^/]+))", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      store->authenticate(bearer_token(req));
      res.set_content(json(store->resolve(req.matches[1])).dump(), "application/json");
    });
  });
  srv.Get(R"(/datasets/([^/]+)/doi)", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      store->authenticate(bearer_token(req));
      const auto rec = store->find_publication(req.matches[1]);
      if (!rec) fail(ErrorCode::ObjectNotFound, "no DOI issued for " + std::string(req.matches[1]));
      res.set_content(json(*rec).dump(), "application/json");
    });
  });
  srv.Get(R"(/datasets/([^/]+)/files/(.+))", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      store->authenticate(bearer_token(req));
      serve_file(req, res, store->read_file(req.matches[1], req.matches[2], std::nullopt));
    });
  });
  srv.Post("/datasets", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      store->authenticate(bearer_token(req));
      const auto body = json::parse(req.body);
      std::vector<DatasetFile> files;
      for (const auto& f : body.value("files", json::array())) {
        files.push_back({f.at("path"), base64_decode(f.at("data").get<std::string>())});
      }
      const auto permId =
          store->register_dataset(files, body.value("metadata", std::map<std::string, std::string>{}));
      res.status = 201;
      res.set_content(json{{"permId", permId}}.dump(), "application/json");
    });
  });
  srv.Post("/publish", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      store->authenticate(bearer_token(req));
      const auto body = json::parse(req.body);
      res.set_content(json(store->publish(body.at("objectRef"))).dump(), "application/json");
    });
  });
  // DOI landing endpoints are public, like a resolver target.
  srv.Get(R"(/objects/([^/]+))", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto rec = store->publication_by_suffix(req.matches[1]);
      res.set_content(json(store->resolve(rec.objectRef)).dump(), "application/json");
    });
  });
  srv.Get(R"(/objects/([^/]+)/files/(.+))", [store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto rec = store->publication_by_suffix(req.matches[1]);
      serve_file(req, res, store->read_file(rec.objectRef, req.matches[2], std::nullopt));
    });
  });

  // Exclusive bind: a second server on the same port must fail.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  srv.set_payload_max_length(std::numeric_limits<std::size_t>::max());
  if (config.port == 0) {
    port_ = srv.bind_to_any_port(config.host);
    if (port_ < 0) fail(ErrorCode::PortInUse, config.host + ": no ephemeral port available");
  } else {
    if (!srv.bind_to_port(config.host, config.port)) {
      fail(ErrorCode::PortInUse, config.host + ":" + std::to_string(config.port));
    }
    port_ = config.port;
  }
  store_->set_base_url(url());
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
}

ReferenceRdmsServer::~ReferenceRdmsServer() {
  stop();
  if (thread_.joinable()) thread_.join();
}

std::string ReferenceRdmsServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void ReferenceRdmsServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void ReferenceRdmsServer::stop() { impl_->server.stop(); }

}  // namespace rrp
