#include <gtest/gtest.h>

#include <random>

#include "rrp/demo.hpp"
#include "rrp/error.hpp"
#include "rrp/project_spec.hpp"

namespace rrp {
namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

WorkingTree tree_at(const fs::path& root) { return {root, std::string(40, '0'), false}; }

TEST(ProjectSpec, LoadsSourceAtRef) {
  TempDir dir;
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  const auto tree = load_project_source({.repoUrl = fx.repo.string(), .ref = "main"}, dir.path() / "clone");
  EXPECT_EQ(tree.commitId, fx.commitId);
  EXPECT_FALSE(tree.dirty);
  EXPECT_TRUE(is_clean(tree));
  EXPECT_EQ(head_commit(tree.rootPath), fx.commitId);

  run_process({"git", "-C", fx.repo.string(), "tag", "v1"});
  write_file(fx.repo / "later.txt", "later\n");
  demo::commit_all(fx.repo, "later");
  EXPECT_EQ(load_project_source({.repoUrl = fx.repo.string(), .ref = "v1"}, dir.path() / "tagged").commitId,
            fx.commitId);
  EXPECT_EQ(load_project_source({.repoUrl = fx.repo.string(), .ref = fx.commitId}, dir.path() / "pinned").commitId,
            fx.commitId);
}

TEST(ProjectSpec, SourceErrors) {
  TempDir dir;
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  EXPECT_EQ(code_of([&] { load_project_source({.repoUrl = (dir.path() / "nope").string()}, dir.path() / "a"); }),
            ErrorCode::CloneFailed);
  EXPECT_EQ(code_of([&] { load_project_source({.repoUrl = fx.repo.string(), .ref = "no-such-tag"}, dir.path() / "b"); }),
            ErrorCode::RefNotFound);
}

TEST(ProjectSpec, SubmodulesAreCheckedOut) {
  TempDir dir;
  const auto sub = demo::make_fixture_repo(dir.path() / "sub", {});
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  git::run({"submodule", "add", "-q", sub.repo.string(), "vendor/sub"}, fx.repo, ErrorCode::Internal);
  demo::commit_all(fx.repo, "add submodule");
  const auto tree = load_project_source({.repoUrl = fx.repo.string()}, dir.path() / "clone");
  EXPECT_TRUE(fs::exists(tree.rootPath / "vendor" / "sub" / "analyze.py"));
  EXPECT_TRUE(is_clean(tree));
}

TEST(ProjectSpec, CleanlinessIsStrict) {
  TempDir dir;
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  const auto tree = tree_at(fx.repo);
  EXPECT_TRUE(is_clean(tree));
  write_file(fx.repo / "__pycache__" / "x.pyc", "ignored");
  EXPECT_TRUE(is_clean(tree));
  write_file(fx.repo / "new.txt", "untracked");
  EXPECT_FALSE(is_clean(tree));
  fs::remove(fx.repo / "new.txt");
  write_file(fx.repo / "README.md", "modified");
  EXPECT_FALSE(is_clean(tree));
  EXPECT_EQ(code_of([&] { is_clean(tree_at(dir.path())); }), ErrorCode::NotARepository);
}

TEST(ProjectSpec, ManifestParsing) {
  EXPECT_TRUE(parse_datasets_manifest("datasets: []\n").empty());
  const auto one = parse_datasets_manifest(
      "datasets:\n  - server: https://openbis.example.org\n    permId: 20240101-1\n    folder: raw_data\n");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], (DatasetBinding{"https://openbis.example.org", "20240101-1", "raw_data"}));

  std::vector<std::string> warnings;
  parse_datasets_manifest("datasets:\n  - {server: s, permId: p, folder: f, colour: red}\n", &warnings);
  EXPECT_EQ(warnings.size(), 1u);

  EXPECT_EQ(code_of([] { parse_datasets_manifest("datasets: [\n"); }), ErrorCode::ManifestSyntax);
  EXPECT_EQ(code_of([] { parse_datasets_manifest("datasets:\n  - {server: s, permId: p}\n"); }),
            ErrorCode::ManifestSyntax);
  EXPECT_EQ(code_of([] {
              parse_datasets_manifest("datasets:\n  - {server: s, permId: a, folder: raw}\n"
                                      "  - {server: s, permId: b, folder: raw}\n");
            }),
            ErrorCode::DuplicateMountTarget);
  for (const auto* folder : {"a/b", "..", ".", ""}) {
    EXPECT_FALSE(is_valid_folder_name(folder)) << folder;
    EXPECT_EQ(code_of([&] {
                parse_datasets_manifest("datasets:\n  - {server: s, permId: p, folder: \"" + std::string(folder) +
                                        "\"}\n");
              }),
              ErrorCode::InvalidFolderName)
        << folder;
  }
}

TEST(ProjectSpec, ManifestRoundTrip) {
  const std::vector<DatasetBinding> bindings = {{"https://a.example/", "p:1", "raw data"},
                                                {"http://b", "20240101-2", "x.y"}};
  EXPECT_EQ(parse_datasets_manifest(serialize_datasets_manifest(bindings)), bindings);
  EXPECT_TRUE(parse_datasets_manifest(serialize_datasets_manifest({})).empty());
}

TEST(ProjectSpec, EnvironmentFromBinderFolder) {
  TempDir dir;
  write_file(dir.path() / ".binder" / "runtime.txt", "python-3.10\n");
  const auto env = parse_environment(tree_at(dir.path()));
  EXPECT_EQ(env.runtime, "python-3.10");
  EXPECT_EQ(env.location, ".binder");
  EXPECT_TRUE(env.pipRequirements.empty());
  EXPECT_TRUE(env.aptPackages.empty());
  ASSERT_EQ(env.sourceFiles.size(), 1u);
  EXPECT_EQ(env.sourceFiles[0], (SourceFile{".binder/runtime.txt", sha256_hex("python-3.10\n")}));
}

TEST(ProjectSpec, FirstPopulatedLocationWinsWholesale) {
  TempDir dir;
  write_file(dir.path() / ".binder" / "apt.txt", "zlib1g\ngit\ngit\n");
  write_file(dir.path() / "apt.txt", "curl\n");
  write_file(dir.path() / "requirements.txt", "numpy\n");
  write_file(dir.path() / "binder" / "postBuild", "echo\n");
  const auto env = parse_environment(tree_at(dir.path()));
  EXPECT_EQ(env.aptPackages, (std::vector<std::string>{"git", "zlib1g"}));
  EXPECT_TRUE(env.pipRequirements.empty());
  EXPECT_TRUE(env.postBuild.empty());
  ASSERT_EQ(env.sourceFiles.size(), 1u);
  EXPECT_EQ(env.sourceFiles[0].path, ".binder/apt.txt");

  fs::remove_all(dir.path() / ".binder");
  EXPECT_EQ(parse_environment(tree_at(dir.path())).location, "binder");
  fs::remove_all(dir.path() / "binder");
  const auto root = parse_environment(tree_at(dir.path()));
  EXPECT_EQ(root.location, "");
  EXPECT_EQ(root.sourceFiles.size(), 2u);
}

TEST(ProjectSpec, NoEnvironmentIsAnError) {
  TempDir dir;
  write_file(dir.path() / "README.md", "x");
  EXPECT_EQ(code_of([&] { parse_environment(tree_at(dir.path())); }), ErrorCode::NoEnvironmentFound);
}

TEST(ProjectSpec, LayoutValidation) {
  TempDir dir;
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  const auto ok = validate_layout(tree_at(fx.repo));
  EXPECT_TRUE(ok.ok());
  EXPECT_TRUE(ok.findings.empty());

  const auto empty = validate_layout(tree_at(dir.path() / "empty"));
  EXPECT_FALSE(empty.ok());
  EXPECT_TRUE(empty.has("MissingEnvironment"));

  fs::rename(fx.repo / kManifestPath, fx.repo / kLegacyManifestPath);
  const auto legacy = validate_layout(tree_at(fx.repo));
  EXPECT_TRUE(legacy.ok());
  EXPECT_TRUE(legacy.has("LegacyManifestName"));
  EXPECT_EQ(find_datasets_manifest(fx.repo), fx.repo / kLegacyManifestPath);

  fs::remove_all(fx.repo / ".rrp");
  const auto none = validate_layout(tree_at(fx.repo));
  EXPECT_TRUE(none.ok());
  EXPECT_TRUE(none.has("MissingDatasetManifest"));
}

// Frozen from Python: hashlib.sha256(b"0" * 40 + b"\n").hexdigest().
TEST(ProjectSpec, DigestGoldenForEmptyEnvironment) {
  EXPECT_EQ(spec_digest({}, std::string(40, '0')),
            "3ef4d655ed1629fe130e2db4fc2f8c81db29f4d724bcb84859139844e76e0df2");
}

// Cross-checked with Python over the canonical serialization of the fixture.
TEST(ProjectSpec, DigestOfFixtureMatchesIndependentComputation) {
  TempDir dir;
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  const auto spec = load_project_spec({.repoUrl = fx.repo.string()}, {fx.repo, fx.commitId, false});
  EXPECT_EQ(fx.commitId, "fc82e83b63821e4f236300dcc34cf5ce37006d8e");
  EXPECT_EQ(spec.specDigest, "e4a66504181f85e4c28cd5e252e81be5b8861c17ec865304342f7447e56fbb30");
  EXPECT_EQ(spec.specDigest, spec_digest(spec.environment, spec.tree.commitId));
  EXPECT_TRUE(spec.datasets.empty());
}

TEST(ProjectSpec, DigestIsIndependentOfSourceFileOrder) {
  EnvironmentSpec a;
  a.sourceFiles = {{"b", "1"}, {"a", "2"}};
  EnvironmentSpec b;
  b.sourceFiles = {{"a", "2"}, {"b", "1"}};
  EXPECT_EQ(spec_digest(a, "c"), spec_digest(b, "c"));
  EXPECT_NE(spec_digest(a, "c"), spec_digest(a, "d"));
}

TEST(ProjectSpec, EverySingleByteMutationChangesTheDigest) {
  TempDir dir;
  write_file(dir.path() / ".binder" / "runtime.txt", "python-3.10\n");
  write_file(dir.path() / ".binder" / "requirements.txt", "numpy==1.26.4\npandas==2.2.2\n");
  write_file(dir.path() / ".binder" / "apt.txt", "git\nzlib1g\n");
  write_file(dir.path() / ".binder" / "postBuild", "#!/bin/sh\necho ready\n");
  const auto tree = tree_at(dir.path());
  const auto env = parse_environment(tree);
  const auto baseline = spec_digest(env, tree.commitId);
  EXPECT_EQ(spec_digest(parse_environment(tree), tree.commitId), baseline);

  std::mt19937 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto& file = env.sourceFiles[rng() % env.sourceFiles.size()];
    const auto path = dir.path() / file.path;
    const auto original = read_file(path);
    auto mutated = original;
    const auto pos = rng() % mutated.size();
    mutated[pos] = static_cast<char>(mutated[pos] ^ (1 + rng() % 255));
    write_file(path, mutated);
    std::string digest;
    try {
      digest = spec_digest(parse_environment(tree), tree.commitId);
    } catch (const Error&) {
      digest = "unparseable";
    }
    EXPECT_NE(digest, baseline) << file.path << " @" << pos;
    write_file(path, original);
  }
}

}  // namespace
}  // namespace rrp
