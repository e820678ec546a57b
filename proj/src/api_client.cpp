#include "rrp/api_client.hpp"

#include <httplib.h>

#include <thread>

#include "rrp/error.hpp"

namespace rrp {

using nlohmann::json;

namespace {

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

bool settled(const json& project) {
  const auto s = project.value("status", "");
  return s != "New" && s != "Cloning" && s != "Planning" && s != "Building";
}

}  // namespace

ApiClient::ApiClient(std::string baseUrl, std::string token) : baseUrl_(std::move(baseUrl)), token_(std::move(token)) {
  while (!baseUrl_.empty() && baseUrl_.back() == '/') baseUrl_.pop_back();
}

std::pair<int, std::string> ApiClient::raw(const std::string& method, const std::string& path,
                                           const std::string& body, bool withToken) {
  httplib::Client cli(baseUrl_);
  cli.set_connection_timeout(5);
  cli.set_read_timeout(600);
  cli.set_write_timeout(600);
  httplib::Headers headers;
  if (withToken && !token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
  httplib::Result res{nullptr, httplib::Error::Unknown};
  if (method == "GET") {
    res = cli.Get(path, headers);
  } else if (method == "POST") {
    res = cli.Post(path, headers, body, "application/json");
  } else if (method == "PUT") {
    res = cli.Put(path, headers, body, "application/json");
  } else if (method == "DELETE") {
    res = cli.Delete(path, headers, body, "application/json");
  } else {
    fail(ErrorCode::InvalidArgument, "unsupported method " + method);
  }
  if (!res) fail(ErrorCode::ServerUnreachable, baseUrl_ + ": " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

std::string ApiClient::call_raw(const std::string& method, const std::string& path, const std::string& body) {
  auto [status, text] = raw(method, path, body);
  if (status >= 200 && status < 300) return text;
  const auto err = json::parse(text, nullptr, false);
  if (err.is_object() && err.contains("error")) {
    fail(error_code_from_string(err["error"].get<std::string>()), err.value("message", std::string{}));
  }
  fail(ErrorCode::Internal, "unexpected HTTP " + std::to_string(status) + " for " + method + " " + path);
}

json ApiClient::call(const std::string& method, const std::string& path, const json* body) {
  const auto text = call_raw(method, path, body ? body->dump() : std::string{});
  return text.empty() ? json() : json::parse(text);
}

json ApiClient::health() { return call("GET", "/api/v1/health"); }

json ApiClient::login(const std::string& user, const std::string& password) {
  const json body{{"user", user}, {"password", password}};
  auto out = call("POST", "/api/v1/login", &body);
  token_ = out.at("token").get<std::string>();
  return out;
}

json ApiClient::projects() { return call("GET", "/api/v1/projects"); }

json ApiClient::create_project(const std::string& repoUrl, const std::string& ref, const std::string& name,
                               const std::optional<std::string>& credentials) {
  json body{{"repoUrl", repoUrl}, {"ref", ref}};
  if (!name.empty()) body["name"] = name;
  if (credentials) body["credentials"] = *credentials;
  return call("POST", "/api/v1/projects", &body);
}

json ApiClient::project(const std::string& id) { return call("GET", "/api/v1/projects/" + id); }

json ApiClient::wait_until_settled(const std::string& id, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  auto delay = std::chrono::milliseconds(20);
  while (true) {
    auto p = project(id);
    if (settled(p) || std::chrono::steady_clock::now() >= deadline) return p;
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, std::chrono::milliseconds(500));
  }
}

json ApiClient::start(const std::string& id, const ResourceLimits& limits) {
  const json body{{"cpuCores", limits.cpuCores}, {"memoryBytes", limits.memoryBytes}};
  return call("POST", "/api/v1/projects/" + id + "/start", &body);
}

json ApiClient::stop(const std::string& id) { return call("POST", "/api/v1/projects/" + id + "/stop"); }

json ApiClient::remove(const std::string& id) { return call("DELETE", "/api/v1/projects/" + id); }

json ApiClient::results(const std::string& id) { return call("GET", "/api/v1/projects/" + id + "/results"); }

std::string ApiClient::result(const std::string& id, const std::string& path) {
  return call_raw("GET", "/api/v1/projects/" + id + "/results/" + encode_path(path), {});
}

json ApiClient::upload(const std::string& id, const std::string& path,
                       const std::map<std::string, std::string>& metadata) {
  const json body{{"path", path}, {"metadata", metadata}};
  return call("POST", "/api/v1/projects/" + id + "/upload", &body);
}

json ApiClient::archive(const std::string& id) { return call("POST", "/api/v1/projects/" + id + "/archive"); }

json ApiClient::share(const std::string& id) { return call("POST", "/api/v1/projects/" + id + "/share"); }

json ApiClient::open_share(const std::string& shareId, const std::optional<std::string>& name) {
  json body = json::object();
  if (name) body["name"] = *name;
  return call("POST", "/api/v1/shares/" + shareId + "/open", &body);
}

std::string ApiClient::bundle(const std::string& id, const std::string& kind) {
  return call_raw("GET", "/api/v1/projects/" + id + "/bundle?kind=" + kind, {});
}

void ApiClient::events(const std::string& id, std::uint64_t lastSeen,
                       const std::function<bool(const SseFrame&)>& onFrame, bool untilHead) {
  httplib::Client cli(baseUrl_);
  cli.set_connection_timeout(5);
  cli.set_read_timeout(120);
  httplib::Headers headers{{"Accept", "text/event-stream"}};
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  std::string buffer;
  std::string errorBody;
  int status = 0;
  bool stopped = false;
  std::optional<std::uint64_t> head;
  SseFrame frame;
  const auto path = "/api/v1/projects/" + id + "/events?lastSeenSequence=" + std::to_string(lastSeen);
  auto res = cli.Get(
      path, headers,
      [&](const httplib::Response& r) {
        status = r.status;
        if (status == 200 && untilHead && r.has_header("X-Journal-Head")) {
          head = std::stoull(r.get_header_value("X-Journal-Head"));
          if (*head <= lastSeen) {
            stopped = true;
            return false;
          }
        }
        return true;
      },
      [&](const char* data, std::size_t len) {
        if (status != 200) {
          errorBody.append(data, len);
          return true;
        }
        buffer.append(data, len);
        std::size_t nl;
        while ((nl = buffer.find('\n')) != std::string::npos) {
          auto line = buffer.substr(0, nl);
          buffer.erase(0, nl + 1);
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (line.empty()) {
            if (!frame.eventType.empty() || !frame.data.empty()) {
              if (frame.eventType.empty()) frame.eventType = "message";
              const bool atHead = head && frame.id && *frame.id >= *head;
              if (!onFrame(frame) || atHead) {
                stopped = true;
                return false;
              }
            }
            frame = {};
          } else if (line.front() == ':') {
            continue;
          } else if (starts_with(line, "event:")) {
            frame.eventType = std::string(trim(std::string_view(line).substr(6)));
          } else if (starts_with(line, "data:")) {
            if (!frame.data.empty()) frame.data += '\n';
            frame.data += std::string(trim(std::string_view(line).substr(5)));
          } else if (starts_with(line, "id:")) {
            frame.id = std::stoull(std::string(trim(std::string_view(line).substr(3))));
          }
        }
        return true;
      });
  if (stopped) return;
  if (status != 0 && status != 200) {
    const auto err = json::parse(errorBody, nullptr, false);
    if (err.is_object() && err.contains("error")) {
      fail(error_code_from_string(err["error"].get<std::string>()), err.value("message", std::string{}));
    }
    fail(ErrorCode::Internal, "unexpected HTTP " + std::to_string(status));
  }
  if (!res) fail(ErrorCode::ServerUnreachable, baseUrl_ + ": " + httplib::to_string(res.error()));
}

}  // namespace rrp
