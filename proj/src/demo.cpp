#include "rrp/demo.hpp"

#include <algorithm>
#include <random>

#include "rrp/error.hpp"
#include "rrp/sim_runtime.hpp"

namespace rrp::demo {

namespace {

constexpr std::size_t kSignalBytes = 256 * 1024;
constexpr std::uint32_t kSignalSeed = 20240515;
constexpr std::string_view kFixedDate = "2024-05-15T12:00:00+00:00";

constexpr std::string_view kAnalyzePy = R"PY(import hashlib
import os

OPENBIS = os.environ.get("RRP_OPENBIS_DIR", "/openbis")
RESULTS = os.environ.get("RRP_RESULTS_DIR", "/results")

rows = []
for root, _dirs, files in os.walk(OPENBIS):
    for name in files:
        path = os.path.join(root, name)
        with open(path, "rb") as fh:
            data = fh.read()
        rel = os.path.relpath(path, OPENBIS).replace(os.sep, "/")
        rows.append((rel, len(data), hashlib.sha256(data).hexdigest()))
rows.sort()

os.makedirs(RESULTS, exist_ok=True)
with open(os.path.join(RESULTS, "out.csv"), "w", newline="") as fh:
    fh.write("path,bytes,sha256\n")
    for row in rows:
        fh.write("%s,%d,%s\n" % row)
)PY";

constexpr std::string_view kSamplesCsv =
    "sample,condition,value\n"
    "s01,control,0.512\n"
    "s02,control,0.498\n"
    "s03,treated,0.731\n"
    "s04,treated,0.754\n";

constexpr std::string_view kReadme =
    "# rrp demo\n\n"
    "`analyze.py` hashes every file mounted under /openbis into results/out.csv.\n";

std::string git_commit(const fs::path& repo, const std::string& message) {
  ProcessOptions opts;
  opts.cwd = repo;
  opts.env = {
      {"GIT_AUTHOR_NAME", "rrp demo"},     {"GIT_AUTHOR_EMAIL", "demo@rrp.invalid"},
      {"GIT_COMMITTER_NAME", "rrp demo"},  {"GIT_COMMITTER_EMAIL", "demo@rrp.invalid"},
      {"GIT_AUTHOR_DATE", std::string(kFixedDate)}, {"GIT_COMMITTER_DATE", std::string(kFixedDate)},
  };
  for (const std::vector<std::string>& argv :
       {std::vector<std::string>{"git", "add", "-A"},
        std::vector<std::string>{"git", "commit", "-q", "--allow-empty", "-m", message}}) {
    const auto r = run_process(argv, opts);
    if (r.exitCode != 0) fail(ErrorCode::Internal, "fixture git failed: " + r.err);
  }
  return head_commit(repo);
}

}  // namespace

std::vector<std::string> analyze_command() { return {"python3", "/project/analyze.py"}; }

std::string analyze_script() { return std::string(kAnalyzePy); }

std::vector<DatasetFile> dataset_files() {
  std::mt19937 rng(kSignalSeed);
  std::string signal(kSignalBytes, '\0');
  for (auto& c : signal) c = static_cast<char>(rng() & 0xFF);
  return {{"samples.csv", std::string(kSamplesCsv)}, {"signal.bin", std::move(signal)}};
}

Fixture make_fixture_repo(const fs::path& dir, const FixtureOptions& options) {
  fs::create_directories(dir);
  const auto init = run_process({"git", "init", "-q", "-b", options.branch}, {.cwd = dir});
  if (init.exitCode != 0) fail(ErrorCode::Internal, "git init failed: " + init.err);
  write_file(dir / ".binder" / "runtime.txt", "python-3.10\n");
  write_file(dir / ".binder" / "requirements.txt", "jupyterlab==4.2.1\n");
  write_file(dir / kManifestPath,
             options.manifestOverride ? *options.manifestOverride : serialize_datasets_manifest(options.datasets));
  write_file(dir / "analyze.py", kAnalyzePy);
  write_file(dir / "README.md", kReadme);
  write_file(dir / ".gitignore", "__pycache__/\n");
  return {dir, git_commit(dir, "demo project")};
}

std::string commit_all(const fs::path& repo, const std::string& message) { return git_commit(repo, message); }

std::string analyze_output(SimSessionFs& fs, const std::string& openbisDir) {
  const auto prefix = openbisDir + "/";
  auto paths = fs.list(openbisDir);
  std::sort(paths.begin(), paths.end());  // byte order == the Python script's code point order
  std::string out = "path,bytes,sha256\n";
  for (const auto& path : paths) {
    const auto bytes = fs.read(path);
    out += path.substr(prefix.size()) + "," + std::to_string(bytes.size()) + "," + sha256_hex(bytes) + "\n";
  }
  return out;
}

void register_programs(SimRuntime& sim) {
  sim.register_program(analyze_command(), [](SimSessionFs& fs, const std::vector<std::string>&, const LineSink& out) {
    const auto csv = analyze_output(fs);
    fs.write("/results/" + std::string(kResultFile), csv);
    if (out) out("wrote /results/" + std::string(kResultFile));
    return 0;
  });
}

}  // namespace rrp::demo
