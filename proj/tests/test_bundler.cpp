#include <gtest/gtest.h>

#include <random>

#include "rrp/archive.hpp"
#include "rrp/bundler.hpp"
#include "rrp/error.hpp"
#include "support.hpp"

namespace rrp {
namespace {

using testing::Platform;

template <typename F>
Error error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  return Error(ErrorCode::Internal, "no error thrown");
}

std::string run_ok(const std::vector<std::string>& argv, const fs::path& cwd) {
  const auto r = run_process(argv, {.cwd = cwd});
  EXPECT_EQ(r.exitCode, 0) << argv[0] << ": " << r.err;
  return r.out;
}

/// A runtime on a different machine: no shared images, registry offline.
std::shared_ptr<SimRuntime> offline_player() {
  auto registry = std::make_shared<SimRegistry>();
  registry->reachable = {"registry.invalid"};
  auto player = std::make_shared<SimRuntime>(SimRuntime::Options{.firstPort = 50000, .registry = registry});
  demo::register_programs(*player);
  return player;
}

std::string run_player_workload(SimRuntime& player, const PlayResult& played) {
  EXPECT_EQ(player.exec(played.session.sessionId, demo::analyze_command(), {}), 0);
  return read_file(played.workDir / "results" / "out.csv");
}

std::string retar_with(std::string_view gz, const std::function<void(std::vector<archive::TarEntry>&)>& edit) {
  auto entries = archive::read_tar(archive::gzip_decompress(gz));
  edit(entries);
  return archive::gzip_compress(archive::write_tar(entries));
}

TEST(Bundler, ExportLayoutIsReadableByStandardTools) {
  Platform p;
  const auto rec = p.ready_project();
  const auto out = p.root() / "demo.tar.gz";
  const auto result = export_player_bundle(*p.orch, rec.projectId, out);
  EXPECT_EQ(result.bytes, fs::file_size(out));
  const auto listing = split_lines(run_ok({"tar", "-tzf", out.string()}, p.root()));
  ASSERT_FALSE(listing.empty());
  EXPECT_EQ(listing.front(), "manifest.json");
  std::set<std::string> names(listing.begin(), listing.end());
  for (const auto* required : {"image.tar", "project/analyze.py", "project/.binder/runtime.txt",
                               "data/raw_data/samples.csv", "data/raw_data/signal.bin", "checksums.txt", "start.sh",
                               "start.bat"}) {
    EXPECT_TRUE(names.contains(required)) << required;
  }
  const auto unpacked = p.root() / "unpacked";
  fs::create_directories(unpacked);
  run_ok({"tar", "-xzf", out.string(), "-C", unpacked.string()}, p.root());
  run_ok({"sha256sum", "--quiet", "-c", "checksums.txt"}, unpacked);
  EXPECT_EQ(run_ok({"sh", "-n", "start.sh"}, unpacked), "");
}

TEST(Bundler, ManifestDescribesTheSnapshot) {
  Platform p;
  const auto rec = p.ready_project();
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  const auto m = read_bundle_manifest(out);
  EXPECT_EQ(m.kind, BundleKind::Bundle);
  EXPECT_EQ(m.commitId, rec.spec.tree.commitId);
  EXPECT_EQ(m.specDigest, rec.spec.specDigest);
  EXPECT_EQ(m.imageRef, rec.imageRef->str());
  ASSERT_EQ(m.datasets.size(), 1u);
  EXPECT_EQ(m.datasets[0].permId, p.permId);
  EXPECT_EQ(m.datasets[0].source, "embedded");
  std::vector<std::pair<std::string, std::string>> files;
  std::uint64_t bytes = 0;
  for (const auto& f : demo::dataset_files()) {
    files.emplace_back(f.path, sha256_hex(f.bytes));
    bytes += f.bytes.size();
  }
  EXPECT_EQ(m.datasets[0].contentHash, tree_digest(files));
  EXPECT_EQ(m.datasets[0].byteSize, bytes);
  EXPECT_EQ(manifest_from_json(manifest_to_json(m)), m);
}

TEST(Bundler, ManifestKeysKeepDeclarationOrder) {
  BundleManifest m;
  m.datasets.push_back({"p-1", "raw", 1, "h", "embedded", std::nullopt});
  const auto j = manifest_to_json(m);
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"bundleVersion", "kind", "projectName", "commitId", "specDigest",
                                            "imageRef", "image", "datasets", "createdAt", "generator"}));
}

TEST(Bundler, LargeEmbeddedDataWarns) {
  Platform p;
  const auto rec = p.ready_project();
  EXPECT_TRUE(export_player_bundle(*p.orch, rec.projectId, p.root() / "a.tar.gz").warnings.empty());
  EXPECT_EQ(export_player_bundle(*p.orch, rec.projectId, p.root() / "b.tar.gz", 1024).warnings.size(), 1u);
}

TEST(Bundler, ExportRequiresCleanRepository) {
  Platform p;
  const auto rec = p.ready_project();
  write_file(rec.workspace / "project" / "analyze.py", "print('changed')\n");
  EXPECT_EQ(error_of([&] { export_player_bundle(*p.orch, rec.projectId, p.root() / "x.tar.gz"); }).code(),
            ErrorCode::RepositoryDirty);
  EXPECT_FALSE(fs::exists(p.root() / "x.tar.gz"));
  demo::commit_all(rec.workspace / "project", "change");
  EXPECT_NO_THROW(export_player_bundle(*p.orch, rec.projectId, p.root() / "x.tar.gz"));
}

TEST(Bundler, ExportRequiresSettledProject) {
  Platform p;
  const auto rec = p.ready_project();
  p.orch->start_project(rec.projectId, {});
  EXPECT_EQ(error_of([&] { export_player_bundle(*p.orch, rec.projectId, p.root() / "x.tar.gz"); }).code(),
            ErrorCode::InvalidState);
}

TEST(Bundler, HermeticPlaybackReproducesResults) {
  Platform p;
  const auto rec = p.ready_project();
  const auto original = p.run_workload(rec.projectId);
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  p.rdmsServer->stop();

  auto player = offline_player();
  const auto played = play_bundle(out, *player, p.root() / "player");
  EXPECT_EQ(played.localUrl, "http://" + played.session.internalEndpoint + "/");
  EXPECT_EQ(played.session.imageRef, *rec.imageRef);
  EXPECT_EQ(run_player_workload(*player, played), original);
  EXPECT_EQ(player->build_count(), 0u);
  EXPECT_EQ(error_of([&] { player->write_file(played.session.sessionId, "/openbis/raw_data/samples.csv", "x"); })
                .code(),
            ErrorCode::AccessDenied);
}

TEST(Bundler, EverySingleByteTamperIsNamed) {
  Platform p;
  const auto rec = p.ready_project();
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  const auto original = read_file(out);
  ASSERT_TRUE(verify_bundle_bytes(original).ok);

  std::mt19937 rng(7);
  for (const auto& entry : archive::read_tar(archive::gzip_decompress(original))) {
    if (entry.directory || entry.data.empty() || entry.path == "checksums.txt") continue;
    for (int trial = 0; trial < 3; ++trial) {
      const auto pos = std::uniform_int_distribution<std::size_t>(0, entry.data.size() - 1)(rng);
      const auto tampered = retar_with(original, [&](auto& entries) {
        for (auto& e : entries) {
          if (e.path == entry.path) e.data[pos] = static_cast<char>(e.data[pos] ^ 0x01);
        }
      });
      VerificationReport report;
      try {
        report = verify_bundle_bytes(tampered);
      } catch (const Error& e) {
        // A damaged manifest may no longer parse; that is still a detection.
        EXPECT_EQ(entry.path, "manifest.json") << e.what();
        continue;
      }
      EXPECT_FALSE(report.ok) << entry.path;
      ASSERT_FALSE(report.failures.empty());
      EXPECT_EQ(report.failures[0].path, entry.path);
    }
  }
}

TEST(Bundler, MissingAndExtraFilesAreReported) {
  Platform p;
  const auto rec = p.ready_project();
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  const auto original = read_file(out);

  const auto removed = retar_with(original, [](auto& entries) {
    std::erase_if(entries, [](const auto& e) { return e.path == "data/raw_data/signal.bin"; });
  });
  const auto r1 = verify_bundle_bytes(removed);
  ASSERT_FALSE(r1.ok);
  EXPECT_EQ(r1.failures[0].path, "data/raw_data/signal.bin");
  EXPECT_EQ(r1.failures[0].actualHash, "missing");

  const auto added = retar_with(original, [](auto& entries) { entries.push_back({.path = "data/raw_data/extra"}); });
  const auto r2 = verify_bundle_bytes(added);
  ASSERT_FALSE(r2.ok);
  EXPECT_EQ(r2.failures[0].path, "data/raw_data/extra");

  const auto noSums = retar_with(original, [](auto& entries) {
    std::erase_if(entries, [](const auto& e) { return e.path == "checksums.txt"; });
  });
  EXPECT_EQ(error_of([&] { verify_bundle_bytes(noSums); }).code(), ErrorCode::CorruptArchive);
  EXPECT_EQ(error_of([&] { verify_bundle_bytes(original.substr(0, original.size() / 2)); }).code(),
            ErrorCode::CorruptArchive);
}

TEST(Bundler, TamperedBundleIsNotPlayed) {
  Platform p;
  const auto rec = p.ready_project();
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  const auto tampered = retar_with(read_file(out), [](auto& entries) {
    for (auto& e : entries) {
      if (e.path == "data/raw_data/samples.csv") e.data[0] ^= 0x20;
    }
  });
  write_file(out, tampered);
  auto player = offline_player();
  const auto err = error_of([&] { play_bundle(out, *player, p.root() / "player"); });
  EXPECT_EQ(err.code(), ErrorCode::VerificationFailed);
  EXPECT_NE(std::string(err.what()).find("data/raw_data/samples.csv"), std::string::npos);
  EXPECT_EQ(player->live_sessions(), 0u);
  EXPECT_TRUE(player->ledger().empty());
}

TEST(Bundler, ImportFailureIsReported) {
  Platform p;
  const auto rec = p.ready_project();
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  auto player = offline_player();
  player->set_faults({.importFault = true});
  EXPECT_EQ(error_of([&] { play_bundle(out, *player, p.root() / "player"); }).code(), ErrorCode::ImportFailed);
}

struct Published {
  Platform p;
  ProjectRecord rec;
  std::string original;
};

void publish_everything(Published& s) {
  s.rec = s.p.ready_project();
  s.original = s.p.run_workload(s.rec.projectId);
  s.p.store->publish(s.p.permId);
  s.p.orch->publish_image(s.rec.projectId, "registry.example.org", std::nullopt);
}

TEST(Bundler, PlayerScriptReproducesResults) {
  Published s;
  publish_everything(s);
  const auto out = s.p.root() / "script.tar.gz";
  const auto result = export_player_script(*s.p.orch, s.rec.projectId, out);
  const auto& m = result.manifest;
  EXPECT_EQ(m.kind, BundleKind::Script);
  EXPECT_EQ(m.image, "registry.example.org/" + s.rec.imageRef->str());
  ASSERT_EQ(m.datasets.size(), 1u);
  EXPECT_EQ(m.datasets[0].source, "url");
  ASSERT_TRUE(m.datasets[0].url);
  EXPECT_TRUE(verify_bundle(out).ok);

  std::set<std::string> names;
  for (const auto& line : split_lines(run_ok({"tar", "-tzf", out.string()}, s.p.root()))) names.insert(line);
  EXPECT_EQ(names, (std::set<std::string>{"manifest.json", "start.sh", "start.bat"}));

  auto player = std::make_shared<SimRuntime>(SimRuntime::Options{.firstPort = 50000, .registry = s.p.registry});
  demo::register_programs(*player);
  HttpFetcher fetcher;
  const auto played = play_script(out, fetcher, *player, s.p.root() / "player");
  EXPECT_EQ(run_player_workload(*player, played), s.original);
  EXPECT_EQ(player->build_count(), 0u);
}

TEST(Bundler, PlayerScriptNamesUnpublishedDatasets) {
  Published s;
  s.rec = s.p.ready_project();
  s.p.orch->publish_image(s.rec.projectId, "registry.example.org", std::nullopt);
  const auto err = error_of([&] { export_player_script(*s.p.orch, s.rec.projectId, s.p.root() / "s.tar.gz"); });
  EXPECT_EQ(err.code(), ErrorCode::UnpublishedDatasets);
  EXPECT_NE(std::string(err.what()).find(s.p.permId), std::string::npos);
}

TEST(Bundler, PlayerScriptNeedsPublishedImage) {
  Published s;
  s.rec = s.p.ready_project();
  s.p.store->publish(s.p.permId);
  EXPECT_EQ(error_of([&] { export_player_script(*s.p.orch, s.rec.projectId, s.p.root() / "s.tar.gz"); }).code(),
            ErrorCode::ImageNotPublished);
}

TEST(Bundler, ScriptPlaybackRejectsChangedData) {
  Published s;
  publish_everything(s);
  const auto out = s.p.root() / "script.tar.gz";
  export_player_script(*s.p.orch, s.rec.projectId, out);
  write_file(s.p.store->stored_file(s.p.permId, "signal.bin"), "changed after publication");
  auto player = std::make_shared<SimRuntime>(SimRuntime::Options{.registry = s.p.registry});
  HttpFetcher fetcher;
  const auto err = error_of([&] { play_script(out, fetcher, *player, s.p.root() / "player"); });
  EXPECT_EQ(err.code(), ErrorCode::ChecksumMismatch);
  EXPECT_NE(std::string(err.what()).find("signal.bin"), std::string::npos);
  EXPECT_EQ(player->live_sessions(), 0u);
}

TEST(Bundler, ScriptPlaybackReportsUnreachableData) {
  Published s;
  publish_everything(s);
  const auto out = s.p.root() / "script.tar.gz";
  export_player_script(*s.p.orch, s.rec.projectId, out);
  s.p.rdmsServer->stop();
  auto player = std::make_shared<SimRuntime>(SimRuntime::Options{.registry = s.p.registry});
  HttpFetcher fetcher;
  const auto err = error_of([&] { play_script(out, fetcher, *player, s.p.root() / "player"); });
  EXPECT_EQ(err.code(), ErrorCode::FetchFailed);
  EXPECT_NE(std::string(err.what()).find("/objects/"), std::string::npos);
}

}  // namespace
}  // namespace rrp
