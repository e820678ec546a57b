#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rrp/build_planner.hpp"
#include "rrp/journal.hpp"
#include "rrp/project_spec.hpp"
#include "rrp/rdms.hpp"
#include "rrp/runtime.hpp"

namespace rrp {

enum class ProjectStatus { New, Cloning, Planning, Building, Ready, Running, Stopped, Failed, Deleted };
std::string_view to_string(ProjectStatus status) noexcept;
ProjectStatus project_status_from_string(std::string_view name);

/// The declared lifecycle edges. Every status change the orchestrator makes
/// is one of these.
bool is_declared_transition(ProjectStatus from, ProjectStatus to) noexcept;

struct ProjectRecord {
  std::string projectId;
  std::string name;
  std::string owner;
  ProjectSpec spec;
  ProjectStatus status = ProjectStatus::New;
  std::optional<ImageRef> imageRef;
  std::optional<SessionHandle> session;
  ResourceLimits resources;
  fs::path workspace;
  std::optional<std::string> failure;
  Timestamp createdAt;
  /// Registry reference once the image has been pushed.
  std::optional<std::string> publishedImage;
};

struct SessionInfo {
  SessionHandle handle;
  std::string publicPath;  // /session/<projectId>/
};

struct ShareRecord {
  std::string shareId;  // 26 base32 chars (128 random bits)
  std::string sourceProjectId;
  std::string projectName;
  std::string commitId;
  std::string specDigest;
  ImageRef imageRef;
  Timestamp createdAt;
};

struct ResultEntry {
  std::string relativePath;
  std::uint64_t byteSize = 0;
  Timestamp modifiedAt;
  std::string contentHash;
};

void to_json(nlohmann::json& j, const ProjectRecord& r);
void to_json(nlohmann::json& j, const ShareRecord& s);
void from_json(const nlohmann::json& j, ShareRecord& s);
void to_json(nlohmann::json& j, const ResultEntry& r);

struct OrchestratorConfig {
  fs::path dataRoot;
  std::shared_ptr<RuntimeAdapter> runtime;
  std::shared_ptr<RdmsClient> rdms;
  std::string rdmsUser = std::string(kDemoUser);
  std::string rdmsPassword = std::string(kDemoPassword);
  std::size_t maxConcurrentBuilds = 2;
  std::size_t subscriberCapacity = 1024;
  BaseImageTable baseImages = BaseImageTable::defaults();
};

inline constexpr std::string_view kSessionPrefix = "/session/";

/// Owns the project registry, workspaces and journals under
/// `<dataRoot>/projects/<projectId>/{project,openbis,results,journal.log}`.
/// Mutations of one project are serialized; builds are limited to
/// maxConcurrentBuilds and queue FIFO.
class Orchestrator {
 public:
  /// Reloads persisted records; projects caught mid-pipeline become Failed
  /// and Running projects become Stopped.
  explicit Orchestrator(OrchestratorConfig config);
  ~Orchestrator();
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  /// Returns the New record; the pipeline runs on a background thread.
  /// NameTaken when the owner already has a live project with this name.
  ProjectRecord create_project(const std::string& owner, const ProjectSource& source, const std::string& name);
  /// Blocks until the project leaves the pipeline states (or the timeout hits).
  ProjectRecord wait_until_settled(const std::string& projectId,
                                   std::chrono::milliseconds timeout = std::chrono::minutes(30));

  ProjectRecord project(const std::string& projectId) const;
  std::vector<ProjectRecord> projects() const;

  SessionInfo start_project(const std::string& projectId, const ResourceLimits& resources);
  ProjectRecord stop_project(const std::string& projectId);
  ProjectRecord delete_project(const std::string& projectId);

  std::vector<ResultEntry> list_results(const std::string& projectId) const;
  std::string read_result(const std::string& projectId, const std::string& relativePath) const;
  std::string upload_result(const std::string& projectId, const std::string& relativePath,
                            const std::map<std::string, std::string>& metadata);
  std::string archive_project(const std::string& projectId);

  ShareRecord create_share(const std::string& projectId);
  ProjectRecord open_share(const std::string& shareId, const std::string& newOwner,
                           const std::optional<std::string>& name = std::nullopt);
  std::optional<ShareRecord> share(const std::string& shareId) const;

  /// Journal access works for Deleted projects too.
  std::vector<LogEvent> journal(const std::string& projectId, std::uint64_t fromSequence = 0) const;
  std::shared_ptr<Subscription> project_events(const std::string& projectId, std::uint64_t fromSequence);

  /// `/session/<projectId>/...` to the project's live session.
  SessionHandle route(std::string_view publicPath) const;

  /// Runs a command in the project's session; output is journaled as
  /// RunLog, a changed results tree as ResultsChanged.
  int exec_in_session(const std::string& projectId, const std::vector<std::string>& argv);

  /// Pushes the project image; the remote reference is recorded.
  PushReceipt publish_image(const std::string& projectId, const std::string& registryUrl,
                            const std::optional<std::string>& credentials);

  /// Checks status, a clean working copy, and that the environment still
  /// matches the built image; refreshes commitId/specDigest to HEAD.
  /// InvalidState, RepositoryDirty.
  ProjectRecord prepare_snapshot(const std::string& projectId, std::initializer_list<ProjectStatus> allowed);

  const OrchestratorConfig& config() const { return config_; }
  RuntimeAdapter& runtime() const { return *config_.runtime; }
  RdmsClient& rdms() const { return *config_.rdms; }
  /// A valid RDMS token for the configured service account.
  std::string rdms_token();

 private:
  struct Entry;

  std::shared_ptr<Entry> entry(const std::string& projectId) const;
  std::shared_ptr<Entry> new_entry(const std::string& owner, const std::string& name,
                                   const ProjectSource& source);
  void transition(Entry& e, ProjectStatus to);
  void fail_project(Entry& e, const std::string& message);
  void persist(const Entry& e) const;
  void run_pipeline(const std::shared_ptr<Entry>& e);
  void run_share_pipeline(const std::shared_ptr<Entry>& e, const ShareRecord& share);
  std::vector<MountReport> mount_all(Entry& e, const std::vector<DatasetBinding>& bindings);
  void acquire_build_slot();
  void release_build_slot();
  void spawn(std::function<void()> job);
  void notify_settled();
  template <typename F>
  auto with_rdms(F&& f) -> decltype(f(std::string{}));

  OrchestratorConfig config_;
  mutable std::shared_mutex registryMu_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;

  std::mutex settleMu_;
  std::condition_variable settled_;

  std::mutex buildMu_;
  std::condition_variable buildCv_;
  std::size_t activeBuilds_ = 0;
  std::uint64_t nextTicket_ = 0;
  std::uint64_t servingTicket_ = 0;

  std::mutex tokenMu_;
  std::optional<SessionToken> token_;

  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::mutex workerMu_;
  std::vector<Worker> workers_;
};

}  // namespace rrp
