#pragma once

#include <condition_variable>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rrp/runtime.hpp"

namespace rrp {

/// Shared stand-in for a remote OCI registry, so an image pushed from one
/// simulated machine can be pulled on another.
class SimRegistry {
 public:
  /// Registry URLs the simulator treats as reachable; empty set = all.
  std::set<std::string> reachable;
  /// When set, pushes must present exactly these credentials.
  std::optional<std::string> requiredCredentials;

  void put(const std::string& remoteReference, std::string archive);
  std::optional<std::string> get(const std::string& remoteReference) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> images_;
};

struct SimFaults {
  std::optional<std::size_t> failAtStep;  // build fails after this many log lines
  bool authFault = false;
  bool importFault = false;
  bool startFault = false;
  bool pullFault = false;
};

struct SimLedgerEntry {
  std::string op;      // build, push, pull, import, export, create, stop, destroy, exec
  std::string detail;  // op-specific
  bool operator==(const SimLedgerEntry&) const = default;
};

/// View of a simulated session's filesystem: container paths resolve
/// through the session mounts; everything else lives in an in-memory layer.
class SimSessionFs {
 public:
  virtual ~SimSessionFs() = default;
  virtual std::string read(const std::string& containerPath) = 0;
  virtual void write(const std::string& containerPath, std::string_view bytes) = 0;
  /// Regular files below `containerDir`, as container paths, sorted.
  virtual std::vector<std::string> list(const std::string& containerDir) = 0;
};

/// A simulated program: the sim "executes" commands by looking them up here.
using SimProgram = std::function<int(SimSessionFs& fs, const std::vector<std::string>& argv, const LineSink& out)>;

/// Deterministic in-memory runtime. imageId = sha256 of the recipe bytes; one
/// synthetic log line per recipe step; sessions get monotonically allocated
/// loopback ports.
class SimRuntime final : public RuntimeAdapter {
 public:
  struct Options {
    int firstPort = 40000;
    std::shared_ptr<SimRegistry> registry;
  };

  SimRuntime();
  explicit SimRuntime(Options options);

  void set_faults(const SimFaults& faults);
  void register_program(const std::vector<std::string>& argv, SimProgram program);

  std::vector<SimLedgerEntry> ledger() const;
  std::size_t build_count() const;
  std::vector<std::pair<ImageRef, std::string>> pushes() const;
  /// Status trace of a session (Starting, Up, Stopped...).
  std::vector<SessionStatus> status_trace(const std::string& sessionId) const;
  /// Recorded limits of a live session.
  ResourceLimits recorded_limits(const std::string& sessionId) const;
  std::vector<MountSpec> recorded_mounts(const std::string& sessionId) const;
  std::size_t live_sessions() const;

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
  std::string backend_name() const override { return "sim"; }

 private:
  struct Image {
    std::string recipe;
    std::string id;
  };
  struct Session {
    SessionHandle handle;
    SessionRequest request;
    std::vector<SessionStatus> trace;
    std::map<std::string, std::string> overlay;  // unmounted container paths
  };
  class SessionFs;

  Session& live_session(const std::string& id);
  void record(std::string op, std::string detail);

  Options options_;
  mutable std::mutex mu_;
  SimFaults faults_;
  std::map<ImageRef, Image> images_;
  std::map<ImageRef, std::shared_future<BuildResult>> inflight_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::vector<SessionStatus>> finishedTraces_;
  std::map<std::string, SimProgram> programs_;
  std::vector<SimLedgerEntry> ledger_;
  std::vector<std::pair<ImageRef, std::string>> pushes_;
  std::uint64_t nextSession_ = 1;
  int nextPort_;
};

/// Builds an OCI image-layout tarball whose config blob carries `recipe`.
std::string make_oci_archive(const ImageRef& ref, std::string_view recipe);
struct OciContents {
  ImageRef ref;
  std::string recipe;
};
/// Validates layout and blob digests; CorruptArchive on any inconsistency.
OciContents read_oci_archive(std::string_view archive);

}  // namespace rrp
