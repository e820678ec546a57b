#include "rrp/docker_runtime.hpp"

#include <httplib.h>
#include <json.hpp>

#include <deque>

#include "rrp/archive.hpp"
#include "rrp/demo.hpp"
#include "rrp/error.hpp"
#include "rrp/sim_runtime.hpp"

namespace rrp {

using nlohmann::json;

namespace {

constexpr std::size_t kLogTail = 50;

std::string url_encode(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

/// Docker streams newline-delimited JSON progress objects.
std::vector<json> json_lines(std::string_view body) {
  std::vector<json> out;
  for (const auto& line : split_lines(body)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    auto j = json::parse(t, nullptr, false);
    if (!j.is_discarded()) out.push_back(std::move(j));
  }
  return out;
}

std::string strip_scheme(std::string url) {
  for (std::string_view scheme : {"https://", "http://"}) {
    if (starts_with(url, scheme)) url.erase(0, scheme.size());
  }
  while (!url.empty() && url.back() == '/') url.pop_back();
  return url;
}

}  // namespace

DockerRuntime::DockerRuntime(Options options) : options_(std::move(options)), nextPort_(options_.firstPort) {}

DockerRuntime::Response DockerRuntime::request(const std::string& method, const std::string& path,
                                               const std::string& body, const std::string& contentType,
                                               const std::multimap<std::string, std::string>& headers) {
  std::unique_ptr<httplib::Client> cli;
  if (starts_with(options_.endpoint, "unix://")) {
    cli = std::make_unique<httplib::Client>(options_.endpoint.substr(7));
    cli->set_address_family(AF_UNIX);
  } else {
    cli = std::make_unique<httplib::Client>(options_.endpoint);
  }
  cli->set_connection_timeout(5);
  cli->set_read_timeout(1800);
  cli->set_write_timeout(600);

  httplib::Headers h(headers.begin(), headers.end());
  const auto full = "/" + options_.apiVersion + path;
  httplib::Result res;
  if (method == "GET") {
    res = cli->Get(full, h);
  } else if (method == "POST") {
    res = cli->Post(full, h, body, contentType);
  } else if (method == "PUT") {
    res = cli->Put(full, h, body, contentType);
  } else if (method == "DELETE") {
    res = cli->Delete(full, h);
  } else {
    fail(ErrorCode::Internal, "unsupported method " + method);
  }
  if (!res) fail(ErrorCode::DaemonUnavailable, "container daemon at " + options_.endpoint + ": " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

bool DockerRuntime::ping() {
  try {
    return request("GET", "/_ping").status == 200;
  } catch (const Error&) {
    return false;
  }
}

BuildResult DockerRuntime::build_image(std::string_view recipe, const fs::path& context, const ImageRef& ref,
                                       const LineSink& logSink) {
  std::shared_ptr<std::mutex> lock;
  {
    std::lock_guard g(mu_);
    auto& slot = buildLocks_[ref];
    if (!slot) slot = std::make_shared<std::mutex>();
    lock = slot;
  }
  std::lock_guard serial(*lock);

  std::vector<archive::TarEntry> entries;
  archive::append_tree(entries, context, "");
  std::erase_if(entries, [](const archive::TarEntry& e) { return starts_with(e.path, ".git/") || e.path == ".git"; });
  entries.push_back({.path = "Dockerfile.rrp", .data = std::string(recipe)});
  const auto tar = archive::write_tar(entries);

  const auto res = request("POST", "/build?dockerfile=Dockerfile.rrp&rm=1&t=" + url_encode(ref.str()), tar,
                           "application/x-tar");
  std::deque<std::string> tail;
  std::size_t count = 0;
  std::optional<std::string> error;
  auto emit = [&](std::string line) {
    ++count;
    if (logSink) logSink(line);
    tail.push_back(std::move(line));
    if (tail.size() > kLogTail) tail.pop_front();
  };
  for (const auto& msg : json_lines(res.body)) {
    if (msg.contains("stream")) {
      for (const auto& line : split_lines(msg["stream"].get<std::string>())) {
        if (!trim(line).empty()) emit(std::string(rtrim(line)));
      }
    }
    if (msg.contains("error")) {
      error = msg["error"].get<std::string>();
      emit(*error);
    }
  }
  if (res.status != 200 || error) {
    throw BuildError(error.value_or("daemon returned HTTP " + std::to_string(res.status)), {tail.begin(), tail.end()});
  }
  return {image_id(ref), count, true};
}

bool DockerRuntime::has_image(const ImageRef& ref) {
  return request("GET", "/images/" + url_encode(ref.str()) + "/json").status == 200;
}

std::string DockerRuntime::image_id(const ImageRef& ref) {
  const auto res = request("GET", "/images/" + url_encode(ref.str()) + "/json");
  if (res.status == 404) fail(ErrorCode::ImageNotFound, ref.str());
  return json::parse(res.body).at("Id").get<std::string>();
}

int DockerRuntime::allocate_port() {
  // Monotonic within the configured range, wrapping around.
  const int port = nextPort_;
  nextPort_ = nextPort_ >= options_.lastPort ? options_.firstPort : nextPort_ + 1;
  return port;
}

SessionHandle DockerRuntime::create_session(const SessionRequest& req) {
  req.limits.validate();
  if (!has_image(req.image)) fail(ErrorCode::ImageNotFound, req.image.str());

  int port = 0;
  std::string name;
  {
    std::lock_guard g(mu_);
    port = allocate_port();
    name = "rrp-session-" + std::to_string(nextSession_++) + "-" + hex_encode(random_bytes(4));
  }
  const auto portKey = std::to_string(kSessionPort) + "/tcp";
  json binds = json::array();
  for (const auto& m : req.mounts) {
    binds.push_back(fs::absolute(m.hostPath).string() + ":" + m.containerPath + (m.readOnly ? ":ro" : ""));
  }
  json env = json::array();
  for (const auto& [k, v] : req.env) env.push_back(k + "=" + v);
  json body = {
      {"Image", req.image.str()},
      {"Env", env},
      {"ExposedPorts", {{portKey, json::object()}}},
      {"HostConfig",
       {{"NanoCpus", static_cast<std::int64_t>(req.limits.cpuCores * 1e9)},
        {"Memory", req.limits.memoryBytes},
        {"Binds", binds},
        {"PortBindings", {{portKey, {{{"HostIp", "127.0.0.1"}, {"HostPort", std::to_string(port)}}}}}}}},
  };
  if (req.command) body["Cmd"] = *req.command;

  const auto created = request("POST", "/containers/create?name=" + name, body.dump());
  if (created.status == 404) fail(ErrorCode::ImageNotFound, req.image.str());
  if (created.status != 201) fail(ErrorCode::StartFailed, created.body);
  const auto containerId = json::parse(created.body).at("Id").get<std::string>();
  const auto started = request("POST", "/containers/" + containerId + "/start");
  if (started.status != 204 && started.status != 304) {
    request("DELETE", "/containers/" + containerId + "?force=1");
    fail(ErrorCode::StartFailed, started.body);
  }

  Session s;
  s.containerId = containerId;
  s.mounts = req.mounts;
  s.handle.sessionId = name;
  s.handle.imageRef = req.image;
  s.handle.internalEndpoint = "127.0.0.1:" + std::to_string(port);
  s.handle.status = SessionStatus::Up;
  std::lock_guard g(mu_);
  sessions_[name] = s;
  return s.handle;
}

DockerRuntime::Session& DockerRuntime::known(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, id);
  return it->second;
}

SessionHandle DockerRuntime::stop_session(const std::string& sessionId) {
  std::string container;
  {
    std::lock_guard g(mu_);
    auto& s = known(sessionId);
    if (s.handle.status == SessionStatus::Stopped) return s.handle;
    container = s.containerId;
  }
  request("POST", "/containers/" + container + "/stop?t=5");
  std::lock_guard g(mu_);
  auto& s = known(sessionId);
  s.handle.status = SessionStatus::Stopped;
  return s.handle;
}

void DockerRuntime::destroy_session(const std::string& sessionId) {
  std::string container;
  {
    std::lock_guard g(mu_);
    container = known(sessionId).containerId;
    sessions_.erase(sessionId);
  }
  request("DELETE", "/containers/" + container + "?force=1");
}

SessionHandle DockerRuntime::session(const std::string& sessionId) {
  std::lock_guard g(mu_);
  return known(sessionId).handle;
}

std::string DockerRuntime::export_image(const ImageRef& ref) {
  const auto res = request("GET", "/images/" + url_encode(ref.str()) + "/get");
  if (res.status == 404) fail(ErrorCode::ImageNotFound, ref.str());
  if (res.status != 200) fail(ErrorCode::Internal, "image export failed: " + res.body);
  return res.body;
}

ImageRef DockerRuntime::import_image(std::string_view archive) {
  const auto res = request("POST", "/images/load?quiet=1", std::string(archive), "application/x-tar");
  if (res.status != 200) fail(ErrorCode::CorruptArchive, res.body);
  for (const auto& msg : json_lines(res.body)) {
    if (msg.contains("error")) fail(ErrorCode::CorruptArchive, msg["error"].get<std::string>());
    if (msg.contains("stream")) {
      const auto text = msg["stream"].get<std::string>();
      constexpr std::string_view kLoaded = "Loaded image: ";
      if (const auto pos = text.find(kLoaded); pos != std::string::npos) {
        return ImageRef::parse(trim(std::string_view(text).substr(pos + kLoaded.size())));
      }
    }
  }
  fail(ErrorCode::CorruptArchive, "daemon did not report a loaded image");
}

PushReceipt DockerRuntime::push_image(const ImageRef& ref, const std::string& registryUrl,
                                      const std::optional<std::string>& credentials) {
  const auto host = strip_scheme(registryUrl);
  const auto remoteRepo = host + "/" + ref.repository;
  const auto tagged = request("POST", "/images/" + url_encode(ref.str()) + "/tag?repo=" + url_encode(remoteRepo) +
                                          "&tag=" + url_encode(ref.tag));
  if (tagged.status == 404) fail(ErrorCode::ImageNotFound, ref.str());

  json auth = json::object();
  if (credentials) {
    const auto colon = credentials->find(':');
    auth = {{"username", credentials->substr(0, colon)},
            {"password", colon == std::string::npos ? "" : credentials->substr(colon + 1)},
            {"serveraddress", host}};
  }
  const auto res = request("POST", "/images/" + url_encode(remoteRepo) + "/push?tag=" + url_encode(ref.tag), {},
                           "application/json", {{"X-Registry-Auth", base64_encode(auth.dump())}});
  for (const auto& msg : json_lines(res.body)) {
    if (!msg.contains("error")) continue;
    const auto err = msg["error"].get<std::string>();
    if (to_lower(err).find("unauthorized") != std::string::npos || to_lower(err).find("denied") != std::string::npos) {
      fail(ErrorCode::AuthFailed, err);
    }
    fail(ErrorCode::RegistryUnreachable, err);
  }
  if (res.status == 401 || res.status == 403) fail(ErrorCode::AuthFailed, res.body);
  if (res.status != 200) fail(ErrorCode::RegistryUnreachable, res.body);
  return {remoteRepo + ":" + ref.tag, registryUrl};
}

ImageRef DockerRuntime::pull_image(const std::string& remoteReference) {
  const auto remote = ImageRef::parse(remoteReference);
  const auto res = request("POST", "/images/create?fromImage=" + url_encode(remote.repository) +
                                       "&tag=" + url_encode(remote.tag));
  if (res.status != 200) fail(ErrorCode::ImagePullFailed, remoteReference + ": " + res.body);
  for (const auto& msg : json_lines(res.body)) {
    if (msg.contains("error")) fail(ErrorCode::ImagePullFailed, remoteReference + ": " + msg["error"].get<std::string>());
  }
  return remote;
}

int DockerRuntime::exec(const std::string& sessionId, const std::vector<std::string>& argv, const LineSink& sink) {
  std::string container;
  {
    std::lock_guard g(mu_);
    container = known(sessionId).containerId;
  }
  const json create = {{"AttachStdout", true}, {"AttachStderr", true}, {"Tty", true}, {"Cmd", argv}};
  const auto created = request("POST", "/containers/" + container + "/exec", create.dump());
  if (created.status != 201) fail(ErrorCode::ExecFailed, created.body);
  const auto execId = json::parse(created.body).at("Id").get<std::string>();
  const auto out = request("POST", "/exec/" + execId + "/start", json{{"Detach", false}, {"Tty", true}}.dump());
  for (const auto& line : split_lines(out.body)) {
    if (sink) sink(rtrim(line));
  }
  const auto inspect = request("GET", "/exec/" + execId + "/json");
  return json::parse(inspect.body).value("ExitCode", -1);
}

void DockerRuntime::write_file(const std::string& sessionId, const std::string& containerPath, std::string_view bytes) {
  std::string container;
  {
    std::lock_guard g(mu_);
    const auto& s = known(sessionId);
    container = s.containerId;
    for (const auto& m : s.mounts) {
      if (m.readOnly && (containerPath == m.containerPath || starts_with(containerPath, m.containerPath + "/"))) {
        fail(ErrorCode::AccessDenied, "read-only mount: " + containerPath);
      }
    }
  }
  const fs::path p(containerPath);
  const auto tar = archive::write_tar({{.path = p.filename().string(), .data = std::string(bytes)}});
  const auto res = request("PUT", "/containers/" + container + "/archive?path=" + url_encode(p.parent_path().string()),
                           tar, "application/x-tar");
  if (res.status == 403 || res.body.find("read-only") != std::string::npos) fail(ErrorCode::AccessDenied, res.body);
  if (res.status != 200) fail(ErrorCode::Internal, "write failed: " + res.body);
}

std::string DockerRuntime::read_file(const std::string& sessionId, const std::string& containerPath) {
  std::string container;
  {
    std::lock_guard g(mu_);
    container = known(sessionId).containerId;
  }
  const auto res = request("GET", "/containers/" + container + "/archive?path=" + url_encode(containerPath));
  if (res.status != 200) fail(ErrorCode::UnreadableFile, containerPath);
  for (auto& e : archive::read_tar(res.body)) {
    if (!e.directory) return std::move(e.data);
  }
  fail(ErrorCode::UnreadableFile, containerPath);
}

ProxyResponse DockerRuntime::forward(const SessionHandle& session, const ProxyRequest& req) {
  httplib::Client cli("http://" + session.internalEndpoint);
  cli.set_connection_timeout(5);
  cli.set_read_timeout(60);
  httplib::Headers h;
  for (const auto& [k, v] : req.headers) {
    if (to_lower(k) != "host" && to_lower(k) != "content-length") h.emplace(k, v);
  }
  httplib::Request r;
  r.method = req.method;
  r.path = req.query.empty() ? req.path : req.path + "?" + req.query;
  r.headers = h;
  r.body = req.body;
  auto res = cli.send(r);
  if (!res) return {502, "text/plain", "session unreachable: " + httplib::to_string(res.error()) + "\n", {}};
  ProxyResponse out;
  out.status = res->status;
  out.contentType = res->get_header_value("Content-Type");
  out.body = res->body;
  for (const auto& [k, v] : res->headers) {
    const auto lk = to_lower(k);
    if (lk != "content-length" && lk != "transfer-encoding" && lk != "content-type" && lk != "connection") {
      out.headers.emplace(k, v);
    }
  }
  return out;
}

std::shared_ptr<RuntimeAdapter> make_runtime_from_env(std::optional<std::string> endpoint) {
  if (endpoint && !endpoint->empty()) {
    DockerRuntime::Options opts;
    opts.endpoint = *endpoint;
    return std::make_shared<DockerRuntime>(opts);
  }
  auto sim = std::make_shared<SimRuntime>(SimRuntime::Options{.registry = std::make_shared<SimRegistry>()});
  demo::register_programs(*sim);
  return sim;
}

}  // namespace rrp
