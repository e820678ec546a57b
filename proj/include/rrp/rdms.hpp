#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rrp/project_spec.hpp"
#include "rrp/util.hpp"

namespace rrp {

inline constexpr std::string_view kDemoUser = "rrp-demo";
inline constexpr std::string_view kDemoPassword = "rrp-demo";

struct SessionToken {
  std::string token;
  std::string userId;
  Timestamp expiresAt;
};

struct FileEntry {
  std::string relativePath;
  std::uint64_t byteSize = 0;
  std::string contentHash;
  bool operator==(const FileEntry&) const = default;
};

/// Immutable once registered. totalBytes == sum of byteSize; paths unique
/// and confined.
struct DatasetDescriptor {
  std::string permId;
  std::vector<FileEntry> files;  // sorted by relativePath
  std::uint64_t totalBytes = 0;
  std::map<std::string, std::string> metadata;
  bool operator==(const DatasetDescriptor&) const = default;
};

struct MountReport {
  DatasetBinding binding;
  fs::path localPath;
  std::size_t filesMaterialized = 0;
  std::uint64_t bytes = 0;
  bool verified = false;
};

struct DoiRecord {
  std::string doi;  // 10.5281/rrp-sim.<n>
  std::string objectRef;
  std::string resolvedUrl;
  bool operator==(const DoiRecord&) const = default;
};

struct DatasetFile {
  std::string path;
  std::string bytes;
};

struct ByteRange {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

void to_json(nlohmann::json& j, const FileEntry& f);
void from_json(const nlohmann::json& j, FileEntry& f);
void to_json(nlohmann::json& j, const DatasetDescriptor& d);
void from_json(const nlohmann::json& j, DatasetDescriptor& d);
void to_json(nlohmann::json& j, const DoiRecord& d);
void from_json(const nlohmann::json& j, DoiRecord& d);

/// permId layout: `yyyyMMddHHmmssSSS-<sequence>`; returns the sequence.
std::uint64_t perm_id_sequence(std::string_view permId);

/// Client side of the RDMS protocol. Errors: AuthFailed, ServerUnreachable,
/// DatasetNotFound, EmptyDataset, ObjectNotFound.
class RdmsClient {
 public:
  virtual ~RdmsClient() = default;
  virtual SessionToken login(const std::string& user, const std::string& password) = 0;
  virtual DatasetDescriptor resolve_dataset(const std::string& token, const std::string& permId) = 0;
  virtual std::string read_file(const std::string& token, const std::string& permId, const std::string& path,
                                std::optional<ByteRange> range = std::nullopt) = 0;
  virtual std::string register_dataset(const std::string& token, const std::vector<DatasetFile>& files,
                                       const std::map<std::string, std::string>& metadata) = 0;
  virtual DoiRecord publish(const std::string& token, const std::string& objectRef) = 0;
  /// The DOI previously issued for objectRef, if any.
  virtual std::optional<DoiRecord> find_publication(const std::string& token, const std::string& objectRef) = 0;
  virtual std::string server_url() const = 0;
};

/// Materializes a dataset under `<workspaceRoot>/openbis/<folder>/`,
/// verifying every file hash, then marks the subtree read-only. An existing
/// subtree for the same folder is replaced.
MountReport mount_dataset(RdmsClient& client, const std::string& token, const DatasetBinding& binding,
                          const fs::path& workspaceRoot);

/// Server-side state: datasets on disk under `<dataDir>/datasets/<permId>/`,
/// counters and DOIs in `<dataDir>/state.json`. Thread-safe; registration is
/// serialized so permId sequences are strictly increasing.
class RdmsStore {
 public:
  struct Options {
    fs::path dataDir;
    std::string baseUrl = "http://127.0.0.1";
    std::chrono::seconds tokenTtl = std::chrono::hours(12);
    std::function<Timestamp()> clock;  // defaults to system_clock::now
  };

  /// DataDirUnwritable when the directory cannot be created or written.
  explicit RdmsStore(Options options);

  SessionToken login(const std::string& user, const std::string& password);
  /// userId for a live token; AuthFailed for unknown or expired tokens.
  std::string authenticate(const std::string& token) const;
  std::vector<std::string> accounts() const;

  DatasetDescriptor resolve(const std::string& permId) const;
  std::string read_file(const std::string& permId, const std::string& path, std::optional<ByteRange> range) const;
  std::string register_dataset(const std::vector<DatasetFile>& files, const std::map<std::string, std::string>& metadata);
  DoiRecord publish(const std::string& objectRef);
  std::optional<DoiRecord> find_publication(const std::string& objectRef) const;
  /// Lookup by the DOI suffix (`rrp-sim.<n>`); ObjectNotFound.
  DoiRecord publication_by_suffix(const std::string& suffix) const;

  /// On-disk location of a stored file (lets tests inject corruption).
  fs::path stored_file(const std::string& permId, const std::string& path) const;

  void set_base_url(std::string url);
  std::string base_url() const;

 private:
  void persist_state() const;
  Timestamp now() const;

  Options options_;
  mutable std::mutex mu_;
  std::uint64_t datasetSeq_ = 0;
  std::uint64_t doiSeq_ = 0;
  std::map<std::string, DoiRecord> doisByRef_;
  std::map<std::string, SessionToken> tokens_;
  std::map<std::string, DatasetDescriptor> datasets_;
};

/// In-process client over a store (no wire hop).
class LocalRdmsClient final : public RdmsClient {
 public:
  explicit LocalRdmsClient(std::shared_ptr<RdmsStore> store) : store_(std::move(store)) {}
  SessionToken login(const std::string& user, const std::string& password) override;
  DatasetDescriptor resolve_dataset(const std::string& token, const std::string& permId) override;
  std::string read_file(const std::string& token, const std::string& permId, const std::string& path,
                        std::optional<ByteRange> range) override;
  std::string register_dataset(const std::string& token, const std::vector<DatasetFile>& files,
                               const std::map<std::string, std::string>& metadata) override;
  DoiRecord publish(const std::string& token, const std::string& objectRef) override;
  std::optional<DoiRecord> find_publication(const std::string& token, const std::string& objectRef) override;
  std::string server_url() const override { return store_->base_url(); }

  /// Simulates an outage: every call fails with ServerUnreachable.
  void set_offline(bool offline) { offline_ = offline; }

 private:
  void check_online() const;
  std::shared_ptr<RdmsStore> store_;
  std::atomic<bool> offline_{false};
};

/// HTTP/JSON client for the reference server protocol.
class HttpRdmsClient final : public RdmsClient {
 public:
  explicit HttpRdmsClient(std::string baseUrl);
  SessionToken login(const std::string& user, const std::string& password) override;
  DatasetDescriptor resolve_dataset(const std::string& token, const std::string& permId) override;
  std::string read_file(const std::string& token, const std::string& permId, const std::string& path,
                        std::optional<ByteRange> range) override;
  std::string register_dataset(const std::string& token, const std::vector<DatasetFile>& files,
                               const std::map<std::string, std::string>& metadata) override;
  DoiRecord publish(const std::string& token, const std::string& objectRef) override;
  std::optional<DoiRecord> find_publication(const std::string& token, const std::string& objectRef) override;
  std::string server_url() const override { return baseUrl_; }

 private:
  std::string baseUrl_;
};

/// Reference RDMS server speaking HTTP/JSON:
///   POST /login, GET /datasets/{permId}, GET /datasets/{permId}/files/{path}
///   (Range supported), POST /datasets, POST /publish,
///   GET /datasets/{permId}/doi, and the public DOI landing endpoints
///   GET /objects/{suffix}, GET /objects/{suffix}/files/{path}.
class ReferenceRdmsServer {
 public:
  struct Config {
    fs::path dataDir;
    std::string host = "127.0.0.1";
    int port = 0;  // 0 = ephemeral
    std::chrono::seconds tokenTtl = std::chrono::hours(12);
  };

  /// Binds and starts serving on a background thread. PortInUse, DataDirUnwritable.
  explicit ReferenceRdmsServer(Config config);
  ~ReferenceRdmsServer();
  ReferenceRdmsServer(const ReferenceRdmsServer&) = delete;
  ReferenceRdmsServer& operator=(const ReferenceRdmsServer&) = delete;

  std::string url() const;
  int port() const { return port_; }
  const std::shared_ptr<RdmsStore>& store() const { return store_; }
  /// Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<RdmsStore> store_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace rrp
