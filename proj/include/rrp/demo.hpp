#pragma once

#include <string>
#include <vector>

#include "rrp/project_spec.hpp"
#include "rrp/rdms.hpp"

namespace rrp {
class SimRuntime;
class SimSessionFs;
}  // namespace rrp

/// The bundled demo project: a tiny repository with a `.binder/` environment,
/// a dataset manifest and a script that hashes the mounted data into
/// `/results/out.csv`.
namespace rrp::demo {

inline constexpr std::string_view kDatasetFolder = "raw_data";
inline constexpr std::string_view kResultFile = "out.csv";

/// Command the session runs to produce the result file.
std::vector<std::string> analyze_command();

/// Python implementation of the workload (shipped in the fixture repo).
std::string analyze_script();

/// Dataset payload: a small CSV and 256 KiB of seeded pseudo-random bytes.
std::vector<DatasetFile> dataset_files();

struct FixtureOptions {
  std::vector<DatasetBinding> datasets;
  /// Replaces the generated `.rrp/datasets.yaml` verbatim when set.
  std::optional<std::string> manifestOverride;
  std::string branch = "main";
};

struct Fixture {
  fs::path repo;
  std::string commitId;
};

/// Creates and commits the fixture repository at `dir`. Commits carry fixed
/// dates, so equal options give equal commit ids.
Fixture make_fixture_repo(const fs::path& dir, const FixtureOptions& options);

/// Commits every change in `repo` with a fixed date; returns the new HEAD.
std::string commit_all(const fs::path& repo, const std::string& message);

/// Native workload: lists every file under `openbisDir` as
/// `path,bytes,sha256` rows (paths relative to openbisDir, sorted).
std::string analyze_output(SimSessionFs& fs, const std::string& openbisDir = "/openbis");

/// Registers the workload under analyze_command().
void register_programs(SimRuntime& sim);

}  // namespace rrp::demo
