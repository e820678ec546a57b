#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrp/build_planner.hpp"
#include "rrp/util.hpp"

namespace rrp {

inline constexpr std::uint64_t kMiB = 1024ull * 1024ull;
inline constexpr std::uint64_t kGiB = 1024ull * kMiB;

struct ResourceLimits {
  double cpuCores = 1.0;
  std::uint64_t memoryBytes = 2 * kGiB;

  /// ResourceDenied unless cpuCores > 0 and memoryBytes >= 64 MiB.
  void validate() const;
  bool operator==(const ResourceLimits&) const = default;
};

struct MountSpec {
  fs::path hostPath;
  std::string containerPath;  // absolute
  bool readOnly = false;
};

enum class SessionStatus { Starting, Up, Stopped, Failed };
std::string_view to_string(SessionStatus status) noexcept;

struct SessionHandle {
  std::string sessionId;
  ImageRef imageRef;
  std::string internalEndpoint;  // host:port
  SessionStatus status = SessionStatus::Starting;
};

struct BuildResult {
  std::optional<std::string> imageId;
  std::size_t logLineCount = 0;
  bool success = false;
};

struct PushReceipt {
  std::string remoteReference;
  std::string registryUrl;
};

struct SessionRequest {
  ImageRef image;
  ResourceLimits limits;
  std::vector<MountSpec> mounts;
  std::optional<std::vector<std::string>> command;
  std::map<std::string, std::string> env;
};

struct ProxyRequest {
  std::string method = "GET";
  std::string path;  // full public path, prefix included
  std::string query;
  std::multimap<std::string, std::string> headers;
  std::string body;
};

struct ProxyResponse {
  int status = 502;
  std::string contentType = "text/plain";
  std::string body;
  std::multimap<std::string, std::string> headers;
};

using LineSink = std::function<void(std::string_view)>;

/// Narrow container-runtime surface. Implementations must be safe for
/// concurrent use; concurrent builds of the same ImageRef coalesce.
class RuntimeAdapter {
 public:
  virtual ~RuntimeAdapter() = default;

  /// Throws BuildError (BuildFailed) with the log tail, DaemonUnavailable.
  virtual BuildResult build_image(std::string_view recipe, const fs::path& context, const ImageRef& ref,
                                  const LineSink& logSink) = 0;
  virtual bool has_image(const ImageRef& ref) = 0;
  /// ImageNotFound when absent.
  virtual std::string image_id(const ImageRef& ref) = 0;

  /// ImageNotFound, ResourceDenied, StartFailed.
  virtual SessionHandle create_session(const SessionRequest& request) = 0;
  /// Idempotent; UnknownSession.
  virtual SessionHandle stop_session(const std::string& sessionId) = 0;
  virtual void destroy_session(const std::string& sessionId) = 0;
  virtual SessionHandle session(const std::string& sessionId) = 0;

  /// OCI image layout tarball. ImageNotFound.
  virtual std::string export_image(const ImageRef& ref) = 0;
  /// CorruptArchive.
  virtual ImageRef import_image(std::string_view archive) = 0;
  /// AuthFailed, RegistryUnreachable.
  virtual PushReceipt push_image(const ImageRef& ref, const std::string& registryUrl,
                                 const std::optional<std::string>& credentials) = 0;
  /// ImagePullFailed.
  virtual ImageRef pull_image(const std::string& remoteReference) = 0;

  /// Runs a command inside an Up session; output lines go to `sink`.
  virtual int exec(const std::string& sessionId, const std::vector<std::string>& argv, const LineSink& sink) = 0;
  /// File access through the session's view of its mounts. Writes to a
  /// read-only mount fail with AccessDenied.
  virtual void write_file(const std::string& sessionId, const std::string& containerPath, std::string_view bytes) = 0;
  virtual std::string read_file(const std::string& sessionId, const std::string& containerPath) = 0;

  /// Forwards an HTTP request to the session's front-end.
  virtual ProxyResponse forward(const SessionHandle& session, const ProxyRequest& request) = 0;

  virtual std::string backend_name() const = 0;
};

/// Selects the daemon backend when `endpoint` is set, else the simulator.
std::shared_ptr<RuntimeAdapter> make_runtime_from_env(std::optional<std::string> endpoint);

}  // namespace rrp
