#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rrp/error.hpp"
#include "rrp/util.hpp"

namespace rrp {

struct ProjectSource {
  std::string repoUrl;
  std::string ref;                          // empty: default branch
  std::optional<std::string> credentials;  // "user:secret", passed to git as HTTP basic auth
};

struct WorkingTree {
  fs::path rootPath;
  std::string commitId;  // 40-hex
  bool dirty = false;
};

struct DatasetBinding {
  std::string serverUrl;
  std::string permId;
  std::string folder;  // mount target, a single path segment

  bool operator==(const DatasetBinding&) const = default;
};

struct SourceFile {
  std::string path;         // relative to the repository root, '/'-separated
  std::string contentHash;  // sha256 hex of the file bytes

  bool operator==(const SourceFile&) const = default;
};

/// The recognized environment files of one location (`.binder/`, `binder/`
/// or the repository root).
struct EnvironmentSpec {
  std::optional<std::string> runtime;
  std::vector<std::string> aptPackages;  // sorted, unique
  std::string pipRequirements;
  std::string condaEnvironment;
  std::string rInstallScript;
  std::string juliaProject;
  std::string postBuild;
  std::string startCommand;
  std::string location;  // ".binder", "binder" or "" for the root
  std::vector<SourceFile> sourceFiles;

  bool populated() const;
  /// Repository-relative path of a recognized file inside `location`.
  std::string path_of(std::string_view filename) const;

  bool operator==(const EnvironmentSpec&) const = default;
};

struct ProjectSpec {
  ProjectSource source;
  WorkingTree tree;
  EnvironmentSpec environment;
  std::vector<DatasetBinding> datasets;
  std::string specDigest;
};

enum class Severity { Error, Warning };

struct Finding {
  Severity severity;
  std::string code;  // MissingEnvironment, MissingDatasetManifest, LegacyManifestName, ...
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool ok() const;
  bool has(std::string_view code) const;
};

/// Recognized REES files, in no particular precedence.
inline constexpr std::string_view kEnvironmentFiles[] = {
    "runtime.txt", "requirements.txt", "environment.yml", "apt.txt",
    "install.R",   "Project.toml",     "postBuild",       "start",
};

/// Location precedence: the first location holding any recognized file wins.
inline constexpr std::string_view kEnvironmentLocations[] = {".binder", "binder", ""};

inline constexpr std::string_view kManifestPath = ".rrp/datasets.yaml";
inline constexpr std::string_view kLegacyManifestPath = ".rrp/dataset.yaml";

/// Clones `source` into `destination` (must be empty or absent) and checks
/// out source.ref: branches as a local branch, tags and commits detached.
/// Submodules are initialized recursively.
WorkingTree load_project_source(const ProjectSource& source, const fs::path& destination);

/// Parses `.rrp/datasets.yaml`. Unknown keys are reported through `warnings`.
std::vector<DatasetBinding> parse_datasets_manifest(std::string_view text,
                                                    std::vector<std::string>* warnings = nullptr);
std::string serialize_datasets_manifest(std::span<const DatasetBinding> bindings);

/// Locates the dataset manifest, preferring the canonical name.
std::optional<fs::path> find_datasets_manifest(const fs::path& root);

EnvironmentSpec parse_environment(const WorkingTree& tree);
ValidationReport validate_layout(const WorkingTree& tree);
std::string spec_digest(const EnvironmentSpec& environment, std::string_view commitId);

/// Strict cleanliness: no tracked modifications and no untracked, non-ignored files.
bool is_clean(const WorkingTree& tree);
std::string head_commit(const fs::path& root);

/// validate_layout + parse_environment + manifest + digest for a checked-out tree.
ProjectSpec load_project_spec(const ProjectSource& source, const WorkingTree& tree);

bool is_valid_folder_name(std::string_view folder);

namespace git {

/// Runs git with a fixed identity and the file protocol enabled (local
/// fixtures use submodules by path). Throws `onError` with stderr on failure.
std::string run(const std::vector<std::string>& args, const std::optional<fs::path>& cwd, ErrorCode onError);

}  // namespace git

}  // namespace rrp
