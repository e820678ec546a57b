#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrp/orchestrator.hpp"
#include "rrp/runtime.hpp"

namespace rrp {

inline constexpr std::string_view kGenerator = "rrp 0.1.0";
inline constexpr int kBundleVersion = 1;
inline constexpr std::uint64_t kEmbeddedDataWarnBytes = 4 * kGiB;

enum class BundleKind { Bundle, Script };

struct BundleDataset {
  std::string permId;
  std::string folder;
  std::uint64_t byteSize = 0;
  /// tree_digest over (relative path, sha256) of the dataset files.
  std::string contentHash;
  std::string source;  // "embedded" or "url"
  std::optional<std::string> url;
  bool operator==(const BundleDataset&) const = default;
};

struct BundleManifest {
  int bundleVersion = kBundleVersion;
  BundleKind kind = BundleKind::Bundle;
  std::string projectName;
  std::string commitId;
  std::string specDigest;
  std::string imageRef;
  /// "image.tar" for bundles, a registry reference for scripts.
  std::string image;
  std::vector<BundleDataset> datasets;
  std::string createdAt;
  std::string generator = std::string(kGenerator);
  bool operator==(const BundleManifest&) const = default;
};

/// Stable key order, in field declaration order.
nlohmann::ordered_json manifest_to_json(const BundleManifest& m);
/// CorruptArchive on schema violations.
BundleManifest manifest_from_json(const nlohmann::json& j);

struct VerificationFailure {
  std::string path;
  std::string expectedHash;
  std::string actualHash;  // "missing" when the file is absent
};

struct VerificationReport {
  bool ok = true;
  std::vector<VerificationFailure> failures;
};

struct ExportResult {
  fs::path file;
  std::uint64_t bytes = 0;
  BundleManifest manifest;
  std::vector<std::string> warnings;
};

/// Layout: manifest.json (first), image.tar, project/, data/<folder>/...,
/// checksums.txt, start.sh, start.bat; gzip-compressed tar.
/// InvalidState unless Ready or Stopped; RepositoryDirty; ExportFailed.
ExportResult export_player_bundle(Orchestrator& orchestrator, const std::string& projectId, const fs::path& output,
                                  std::uint64_t warnThreshold = kEmbeddedDataWarnBytes);

/// manifest.json (kind Script, urls populated), start.sh, start.bat.
/// UnpublishedDatasets (names every unpublished permId), ImageNotPublished.
ExportResult export_player_script(Orchestrator& orchestrator, const std::string& projectId, const fs::path& output);

/// CorruptArchive when unreadable or structurally invalid (including a
/// bundle without checksums.txt).
VerificationReport verify_bundle(const fs::path& archive);
VerificationReport verify_bundle_bytes(std::string_view archiveBytes);

BundleManifest read_bundle_manifest(const fs::path& archive);

struct PlayResult {
  SessionHandle session;
  std::string localUrl;
  fs::path workDir;
  BundleManifest manifest;
};

/// Verifies before any side effect (VerificationFailed), imports the image
/// (ImportFailed), unpacks data read-only and the project writable, then
/// starts a session with the platform's mount layout (StartFailed).
PlayResult play_bundle(const fs::path& archive, RuntimeAdapter& runtime, const fs::path& workDir,
                       const ResourceLimits& limits = {});

/// Retrieves published bytes by URL. FetchFailed naming the URL.
class Fetcher {
 public:
  virtual ~Fetcher() = default;
  virtual std::string fetch(const std::string& url) = 0;
};

class HttpFetcher final : public Fetcher {
 public:
  std::string fetch(const std::string& url) override;
};

/// Downloads and verifies every dataset (FetchFailed, ChecksumMismatch),
/// pulls the image (ImagePullFailed), then starts like play_bundle.
PlayResult play_script(const fs::path& scriptBundle, Fetcher& fetcher, RuntimeAdapter& runtime,
                       const fs::path& workDir, const ResourceLimits& limits = {});

}  // namespace rrp
