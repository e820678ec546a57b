#pragma once

#include <map>
#include <mutex>
#include <string>

#include "rrp/runtime.hpp"

namespace rrp {

/// Backend speaking the Docker Engine HTTP API, over a unix socket
/// (`unix:///var/run/docker.sock`) or TCP (`http://host:port`).
class DockerRuntime final : public RuntimeAdapter {
 public:
  struct Options {
    std::string endpoint = "unix:///var/run/docker.sock";
    int firstPort = 41000;
    int lastPort = 41999;
    std::string apiVersion = "v1.43";
  };

  explicit DockerRuntime(Options options);

  /// True when the daemon answers GET /_ping.
  bool ping();

  BuildResult build_image(std::string_view recipe, const fs::path& context, const ImageRef& ref,
                          const LineSink& logSink) override;
  bool has_image(const ImageRef& ref) override;
  std::string image_id(const ImageRef& ref) override;
  SessionHandle create_session(const SessionRequest& request) override;
  SessionHandle stop_session(const std::string& sessionId) override;
  void destroy_session(const std::string& sessionId) override;
  SessionHandle session(const std::string& sessionId) override;
  std::string export_image(const ImageRef& ref) override;
  ImageRef import_image(std::string_view archive) override;
  PushReceipt push_image(const ImageRef& ref, const std::string& registryUrl,
                         const std::optional<std::string>& credentials) override;
  ImageRef pull_image(const std::string& remoteReference) override;
  int exec(const std::string& sessionId, const std::vector<std::string>& argv, const LineSink& sink) override;
  void write_file(const std::string& sessionId, const std::string& containerPath, std::string_view bytes) override;
  std::string read_file(const std::string& sessionId, const std::string& containerPath) override;
  ProxyResponse forward(const SessionHandle& session, const ProxyRequest& request) override;
  std::string backend_name() const override { return "docker"; }

 private:
  struct Response {
    int status = 0;
    std::string body;
  };
  struct Session {
    SessionHandle handle;
    std::string containerId;
    std::vector<MountSpec> mounts;
  };

  Response request(const std::string& method, const std::string& path, const std::string& body = {},
                   const std::string& contentType = "application/json",
                   const std::multimap<std::string, std::string>& headers = {});
  Session& known(const std::string& id);
  int allocate_port();

  Options options_;
  std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::map<ImageRef, std::shared_ptr<std::mutex>> buildLocks_;
  std::uint64_t nextSession_ = 1;
  int nextPort_;
};

}  // namespace rrp
