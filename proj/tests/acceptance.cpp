// Acceptance runner: one PASS/FAIL/SKIP line per primary criterion.
// Exit status is non-zero when any criterion fails; SKIP is reserved for
// checks that need a container daemon and none is reachable.

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "rrp/api_client.hpp"
#include "rrp/api_service.hpp"
#include "rrp/archive.hpp"
#include "rrp/build_planner.hpp"
#include "rrp/bundler.hpp"
#include "rrp/docker_runtime.hpp"
#include "rrp/error.hpp"
#include "support.hpp"

namespace rrp {
namespace {

using testing::Platform;
using Seconds = std::chrono::duration<double>;

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Pass;
  std::string detail;
};

/// Collects violations; the first few are kept verbatim for the report.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (notes_.size() < 3) notes_.push_back(what);
  }
  bool ok() const { return failures_ == 0; }
  Outcome outcome(const std::string& passDetail) const {
    if (ok()) return {Verdict::Pass, passDetail};
    std::string d = std::to_string(failures_) + " violation(s): ";
    for (std::size_t i = 0; i < notes_.size(); ++i) d += (i ? "; " : "") + notes_[i];
    return {Verdict::Fail, d};
  }

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> notes_;
};

template <typename F>
std::optional<Error> error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  return std::nullopt;
}

bool fails_with(ErrorCode code, const std::function<void()>& f) {
  const auto e = error_of(f);
  return e && e->code() == code;
}

std::shared_ptr<SimRuntime> offline_player(int firstPort) {
  auto registry = std::make_shared<SimRegistry>();
  registry->reachable = {"registry.invalid"};
  auto player = std::make_shared<SimRuntime>(SimRuntime::Options{.firstPort = firstPort, .registry = registry});
  demo::register_programs(*player);
  return player;
}

std::string player_workload(SimRuntime& player, const PlayResult& played) {
  if (player.exec(played.session.sessionId, demo::analyze_command(), {}) != 0) return "workload failed";
  return read_file(played.workDir / "results" / std::string(demo::kResultFile));
}

std::string retar_with(std::string_view gz, const std::function<void(std::vector<archive::TarEntry>&)>& edit) {
  auto entries = archive::read_tar(archive::gzip_decompress(gz));
  edit(entries);
  return archive::gzip_compress(archive::write_tar(entries));
}

// ---- lifecycle -------------------------------------------------------------

Outcome lifecycle() {
  Check c;
  const auto expected = testing::python_reference_output();
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    Platform p;
    const auto created = p.orch->create_project("rrp-demo", {.repoUrl = p.repo().string()}, "demo");
    const auto ready = p.orch->wait_until_settled(created.projectId, std::chrono::seconds(30));
    c.expect(ready.status == ProjectStatus::Ready, "rep " + std::to_string(rep) + " settled as " +
                                                       std::string(to_string(ready.status)));
    if (ready.status != ProjectStatus::Ready) continue;
    p.orch->start_project(ready.projectId, {});
    c.expect(p.orch->exec_in_session(ready.projectId, demo::analyze_command()) == 0, "workload exit status");
    p.orch->stop_project(ready.projectId);
    const auto ledgerBefore = p.sim->ledger().size();
    const auto results = p.orch->list_results(ready.projectId);
    c.expect(p.sim->ledger().size() == ledgerBefore, "listing results touched the runtime");
    c.expect(p.orch->project(ready.projectId).status == ProjectStatus::Stopped, "listing changed the status");
    c.expect(results.size() == 1 && results[0].relativePath == demo::kResultFile &&
                 results[0].contentHash == sha256_hex(expected) && results[0].byteSize == expected.size(),
             "rep " + std::to_string(rep) + " results listing differs from the reference output");
    const double took = Seconds(std::chrono::steady_clock::now() - t0).count();
    worst = std::max(worst, took);
    c.expect(took < 10.0, "rep " + std::to_string(rep) + " took " + std::to_string(took) + " s");
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "50/50 runs, slowest %.2f s", worst);
  return c.outcome(buf);
}

// ---- determinism -----------------------------------------------------------

Outcome determinism() {
  Check c;
  TempDir dir("rrp-acc-det");
  const auto fx = demo::make_fixture_repo(dir.path() / "repo", {});
  const WorkingTree tree{fx.repo, fx.commitId, false};
  const ProjectSource source{.repoUrl = fx.repo.string()};

  const auto first = load_project_spec(source, tree);
  const auto firstRecipe = render_recipe(plan_build(first.environment, first.specDigest));
  const auto firstRef = image_reference("demo", first.specDigest);
  for (int i = 0; i < 100; ++i) {
    const auto spec = load_project_spec(source, tree);
    c.expect(render_recipe(plan_build(spec.environment, spec.specDigest)) == firstRecipe,
             "cycle " + std::to_string(i) + " rendered a different recipe");
    c.expect(image_reference("demo", spec.specDigest) == firstRef, "cycle " + std::to_string(i) + " changed ImageRef");
  }

  const auto& files = first.environment.sourceFiles;
  c.expect(!files.empty(), "fixture consumes no environment files");
  std::mt19937 rng(20240719);
  int unparseable = 0;
  for (int trial = 0; trial < 1000 && !files.empty(); ++trial) {
    const auto& file = files[rng() % files.size()];
    const auto path = fx.repo / file.path;
    const auto original = read_file(path);
    auto mutated = original;
    const auto pos = rng() % mutated.size();
    mutated[pos] = static_cast<char>(mutated[pos] ^ (1 + rng() % 255));
    write_file(path, mutated);
    // A mutation that no longer parses cannot yield the old digest.
    try {
      c.expect(spec_digest(parse_environment(tree), tree.commitId) != first.specDigest,
               file.path + " @" + std::to_string(pos) + " kept the digest");
    } catch (const Error&) {
      ++unparseable;
    }
    write_file(path, original);
  }
  c.expect(spec_digest(parse_environment(tree), tree.commitId) == first.specDigest, "restored tree digest differs");
  return c.outcome("100 identical renders, 1000/1000 mutations changed the digest (" + std::to_string(unparseable) +
                   " no longer parsed)");
}

// ---- share -----------------------------------------------------------------

Outcome share_semantics() {
  Check c;
  Platform p;
  const auto src = p.ready_project();
  const auto builds = p.sim->build_count();
  const auto share = p.orch->create_share(src.projectId);
  const auto opened = p.orch->open_share(share.shareId, "second-user");
  const auto settled = p.orch->wait_until_settled(opened.projectId, std::chrono::seconds(30));
  c.expect(settled.status == ProjectStatus::Ready, "opened project is " + std::string(to_string(settled.status)));
  c.expect(settled.owner == "second-user", "owner not transferred");
  c.expect(settled.spec.tree.commitId == share.commitId && share.commitId == src.spec.tree.commitId, "commitId differs");
  c.expect(settled.spec.specDigest == share.specDigest && share.specDigest == src.spec.specDigest,
           "specDigest differs");
  c.expect(settled.imageRef && *settled.imageRef == share.imageRef && share.imageRef == *src.imageRef,
           "imageRef differs");
  c.expect(p.sim->build_count() == builds, "open_share invoked build_image");
  c.expect(head_commit(settled.workspace / "project") == share.commitId, "workspace not at the shared commit");
  return c.outcome("equal commitId/specDigest/imageRef, 0 extra builds");
}

// ---- clean-repo gate -------------------------------------------------------

Outcome clean_repo_gate() {
  Check c;
  Platform p;
  const auto rec = p.ready_project();
  const auto project = rec.workspace / "project";
  write_file(project / "analyze.py", read_file(project / "analyze.py") + "# local edit\n");
  const auto bundle = p.root() / "gate.tar.gz";
  c.expect(fails_with(ErrorCode::RepositoryDirty, [&] { p.orch->create_share(rec.projectId); }),
           "create_share accepted a dirty repository");
  c.expect(fails_with(ErrorCode::RepositoryDirty, [&] { p.orch->archive_project(rec.projectId); }),
           "archive_project accepted a dirty repository");
  c.expect(fails_with(ErrorCode::RepositoryDirty, [&] { export_player_bundle(*p.orch, rec.projectId, bundle); }),
           "export_player_bundle accepted a dirty repository");
  c.expect(!fs::exists(bundle), "a refused export left a file behind");

  demo::commit_all(project, "local edit");
  const auto ok = [&](const char* what, const std::function<void()>& f) {
    const auto e = error_of(f);
    c.expect(!e, std::string(what) + " failed after commit: " + (e ? e->what() : ""));
  };
  ok("create_share", [&] { p.orch->create_share(rec.projectId); });
  ok("archive_project", [&] { p.orch->archive_project(rec.projectId); });
  ok("export_player_bundle", [&] { export_player_bundle(*p.orch, rec.projectId, bundle); });
  return c.outcome("3/3 refused while dirty, 3/3 succeed after commit");
}

// ---- bundle ----------------------------------------------------------------

Outcome bundle_round_trip() {
  Check c;
  Platform p;
  const auto rec = p.ready_project();
  const auto original = p.run_workload(rec.projectId);
  const auto out = p.root() / "demo.tar.gz";
  export_player_bundle(*p.orch, rec.projectId, out);
  c.expect(verify_bundle(out).ok, "fresh bundle does not verify");

  // Hermetic: fresh runtime, no shared images, registry and RDMS offline.
  p.rdmsServer->stop();
  auto player = offline_player(50000);
  const auto played = play_bundle(out, *player, p.root() / "player");
  c.expect(sha256_hex(player_workload(*player, played)) == sha256_hex(original), "replayed result hash differs");
  c.expect(player->build_count() == 0, "playback rebuilt the image");

  const auto bytes = read_file(out);
  std::mt19937 rng(11);
  std::size_t trials = 0;
  for (const auto& entry : archive::read_tar(archive::gzip_decompress(bytes))) {
    if (entry.directory || entry.data.empty()) continue;
    const std::size_t n = std::min<std::size_t>(entry.data.size(), 8);
    for (std::size_t t = 0; t < n; ++t) {
      const auto pos = std::uniform_int_distribution<std::size_t>(0, entry.data.size() - 1)(rng);
      const auto tampered = retar_with(bytes, [&](auto& entries) {
        for (auto& e : entries) {
          if (e.path == entry.path) e.data[pos] = static_cast<char>(e.data[pos] ^ (1 + rng() % 255));
        }
      });
      ++trials;
      const auto where = entry.path + " @" + std::to_string(pos);
      try {
        const auto report = verify_bundle_bytes(tampered);
        c.expect(!report.ok, "tamper not detected: " + where);
        if (report.ok) continue;
        bool named = false;
        for (const auto& f : report.failures) named = named || f.path == entry.path;
        // A byte of checksums.txt changes a recorded hash, so the entry it
        // describes is reported instead; detection is what counts there.
        c.expect(named || entry.path == "checksums.txt", "tamper of " + where + " reported as " +
                                                             report.failures[0].path);
      } catch (const Error& e) {
        c.expect(std::string(e.what()).find(entry.path) != std::string::npos,
                 "tamper of " + where + " raised an error not naming it: " + e.what());
      }
    }
  }
  return c.outcome("hermetic replay hash-identical, " + std::to_string(trials) + " tampers all detected and located");
}

Outcome player_script() {
  Check c;
  Platform p;
  const auto rec = p.ready_project();
  const auto original = p.run_workload(rec.projectId);
  p.store->publish(p.permId);
  p.orch->publish_image(rec.projectId, "registry.example.org", std::nullopt);
  const auto out = p.root() / "script.tar.gz";
  export_player_script(*p.orch, rec.projectId, out);
  auto player = std::make_shared<SimRuntime>(SimRuntime::Options{.firstPort = 51000, .registry = p.registry});
  demo::register_programs(*player);
  HttpFetcher fetcher;
  const auto played = play_script(out, fetcher, *player, p.root() / "player");
  c.expect(sha256_hex(player_workload(*player, played)) == sha256_hex(original), "replayed result hash differs");
  c.expect(player->build_count() == 0, "script playback rebuilt the image");

  // Second dataset left unpublished.
  const auto extra = p.store->register_dataset({{"extra.csv", "k,v\n1,2\n"}}, {{"name", "extra"}});
  const auto url = p.rdmsServer->url();
  const auto fx = demo::make_fixture_repo(
      p.root() / "repo2", {.datasets = {{url, p.permId, "raw_data"}, {url, extra, "extra_data"}}});
  const auto two = p.orch->wait_until_settled(
      p.orch->create_project("rrp-demo", {.repoUrl = fx.repo.string()}, "two-datasets").projectId);
  c.expect(two.status == ProjectStatus::Ready, "two-dataset project did not build");
  p.orch->publish_image(two.projectId, "registry.example.org", std::nullopt);
  const auto err = error_of([&] { export_player_script(*p.orch, two.projectId, p.root() / "s2.tar.gz"); });
  c.expect(err && err->code() == ErrorCode::UnpublishedDatasets, "export with an unpublished dataset did not fail");
  if (err) {
    const std::string msg = err->what();
    c.expect(msg.find(extra) != std::string::npos, "error does not name " + extra);
    c.expect(msg.find(p.permId) == std::string::npos, "error names the published dataset too");
  }
  return c.outcome("script replay hash-identical; unpublished permId named");
}

// ---- read-only mounts ------------------------------------------------------

std::optional<std::shared_ptr<DockerRuntime>> container_daemon() {
  const char* endpoint = std::getenv("RRP_RUNTIME_ENDPOINT");
  DockerRuntime::Options opts;
  if (endpoint && *endpoint) opts.endpoint = endpoint;
  auto runtime = std::make_shared<DockerRuntime>(opts);
  try {
    if (runtime->ping()) return runtime;
  } catch (const Error&) {
  }
  return std::nullopt;
}

Outcome read_only_mounts() {
  Check c;
  {
    Platform p;
    const auto rec = p.ready_project();
    const auto info = p.orch->start_project(rec.projectId, {});
    const auto& sid = info.handle.sessionId;
    const auto dataFile = rec.workspace / "openbis" / "raw_data" / "samples.csv";
    const auto before = read_file(dataFile);
    for (const auto* target : {"/openbis/raw_data/samples.csv", "/openbis/raw_data/new.csv", "/openbis/new.csv"}) {
      c.expect(fails_with(ErrorCode::AccessDenied, [&] { p.sim->write_file(sid, target, "x"); }),
               std::string("sim write to ") + target + " was not denied");
    }
    c.expect(read_file(dataFile) == before, "mounted data changed");
    c.expect(!fs::exists(rec.workspace / "openbis" / "raw_data" / "new.csv"), "new file appeared under openbis/");
    c.expect((fs::status(dataFile).permissions() & (fs::perms::owner_write | fs::perms::group_write |
                                                   fs::perms::others_write)) == fs::perms::none,
             "host copy of mounted data is writable");
  }
  if (!c.ok()) return c.outcome("");

  auto daemon = container_daemon();
  if (!daemon) {
    return {Verdict::Skip, "sim file API denies writes (passed); real-backend half needs a container daemon "
                           "(none at RRP_RUNTIME_ENDPOINT or /var/run/docker.sock)"};
  }
  Platform p;
  OrchestratorConfig cfg;
  cfg.dataRoot = p.root() / "docker-platform";
  cfg.runtime = *daemon;
  cfg.rdms = p.rdms;
  Orchestrator orch(cfg);
  const auto rec = orch.wait_until_settled(orch.create_project("rrp-demo", {.repoUrl = p.repo().string()}, "ro").projectId);
  c.expect(rec.status == ProjectStatus::Ready, "docker build did not reach Ready: " + rec.failure.value_or(""));
  if (rec.status == ProjectStatus::Ready) {
    orch.start_project(rec.projectId, {});
    const auto code = orch.exec_in_session(rec.projectId, {"sh", "-c", "echo x > /openbis/raw_data/samples.csv"});
    c.expect(code != 0, "container write under /openbis succeeded");
    c.expect(orch.exec_in_session(rec.projectId, {"sh", "-c", "echo x > /openbis/raw_data/new.csv"}) != 0,
             "container created a file under /openbis");
    orch.delete_project(rec.projectId);
  }
  return c.outcome("writes denied on sim and docker");
}

// ---- state-machine fuzz ----------------------------------------------------

/// Lifecycle edges, written out independently of the implementation. Any
/// pipeline phase may fail.
bool declared(const std::string& from, const std::string& to) {
  static const std::set<std::pair<std::string, std::string>> edges = {
      {"New", "Cloning"},       {"Cloning", "Planning"}, {"Planning", "Building"}, {"Building", "Ready"},
      {"Building", "Failed"},   {"Cloning", "Failed"},   {"Planning", "Failed"},   {"Ready", "Running"},
      {"Running", "Stopped"},   {"Stopped", "Running"},  {"Ready", "Deleted"},     {"Stopped", "Deleted"},
      {"Failed", "Deleted"},
  };
  return edges.contains({from, to});
}

struct Tracked {
  std::uint64_t verified = 0;
  std::string status = "New";
};

class Fuzzer {
 public:
  explicit Fuzzer(Check& c) : c_(c) {
    p_ = std::make_unique<Platform>(Platform::Options{.httpRdms = false, .maxConcurrentBuilds = 2});
  }

  void run(int sequences) {
    std::mt19937 rng(424242);
    for (int s = 0; s < sequences; ++s) {
      const int length = 1 + static_cast<int>(rng() % 4);
      for (int i = 0; i < length; ++i) step(rng);
      for (const auto& id : touched_) verify_journal(id);
      touched_.clear();
    }
    for (auto& [id, _] : tracked_) p_->orch->wait_until_settled(id, std::chrono::seconds(60));
    for (auto& [id, _] : tracked_) verify_journal(id);
  }

  std::size_t projects() const { return tracked_.size(); }
  std::size_t commands() const { return commands_; }
  std::size_t edges() const { return edges_.size(); }

 private:
  std::vector<std::string> live() const {
    std::vector<std::string> out;
    for (const auto& [id, t] : tracked_) {
      if (t.status != "Deleted") out.push_back(id);
    }
    return out;
  }

  void track(const ProjectRecord& r) {
    tracked_.emplace(r.projectId, Tracked{});
    touched_.insert(r.projectId);
  }

  void step(std::mt19937& rng) {
    ++commands_;
    const auto pool = live();
    const auto pick = [&]() -> std::string {
      if (pool.empty() || rng() % 20 == 0) return "p-unknown";
      return pool[rng() % pool.size()];
    };
    const int roll = static_cast<int>(rng() % 100);
    const auto id = pick();
    touched_.insert(id);
    guarded([&] {
      if (roll < 5) {
        // Some creates name a missing ref so the failure path is exercised too.
        const std::string ref = rng() % 5 == 0 ? "no-such-branch" : "";
        if (pool.size() < 6) {
          track(p_->orch->create_project("fuzz", {.repoUrl = p_->repo().string(), .ref = ref}, next_name()));
        }
      } else if (roll < 22) {
        p_->orch->start_project(id, {});
      } else if (roll < 38) {
        p_->orch->stop_project(id);
      } else if (roll < 44) {
        p_->orch->delete_project(id);
      } else if (roll < 50) {
        shares_.push_back(p_->orch->create_share(id).shareId);
      } else if (roll < 52) {
        if (!shares_.empty() && pool.size() < 6) {
          track(p_->orch->open_share(shares_[rng() % shares_.size()], "fuzz-peer", next_name()));
        }
      } else if (roll < 54) {
        p_->orch->archive_project(id);
      } else if (roll < 64) {
        p_->orch->exec_in_session(id, demo::analyze_command());
      } else if (roll < 76) {
        plant_adversarial(id, rng);
      } else if (roll < 94) {
        probe_results(id, rng);
      } else {
        p_->orch->upload_result(id, adversarial_name(rng), {});
      }
    });
  }

  std::string next_name() { return "fuzz-" + std::to_string(names_++); }

  static std::string adversarial_name(std::mt19937& rng) {
    static const std::vector<std::string> names = {
        "../project/analyze.py", "../journal.log", "/etc/passwd", "a/../../project/analyze.py", "..", "../../x",
        "link-out",            "dir-out/passwd",  "dir-out",     "./../openbis/raw_data/samples.csv", "",
        "nested/../../x",
    };
    return names[rng() % names.size()];
  }

  /// Writes hostile entries into the results tree, both through the session
  /// file API and directly on the host (symlinks a workload could create).
  void plant_adversarial(const std::string& id, std::mt19937& rng) {
    const auto rec = p_->orch->project(id);
    if (rec.status == ProjectStatus::Deleted) return;
    const auto results = rec.workspace / "results";
    if (rec.session && rec.status == ProjectStatus::Running) {
      for (const auto* target : {"/results/../project/evil", "/results/../../evil", "/results/../evil"}) {
        try {
          p_->sim->write_file(rec.session->sessionId, target, "evil");
        } catch (const Error&) {
        }
      }
      for (const auto& outside : {rec.workspace / "project" / "evil", rec.workspace / "evil",
                                  rec.workspace.parent_path() / "evil"}) {
        c_.expect(!fs::exists(outside), "session write escaped to " + outside.string());
      }
    }
    if (!fs::exists(results)) return;
    std::error_code ec;
    switch (rng() % 4) {
      case 0: fs::create_symlink(rec.workspace / "project" / "analyze.py", results / "link-out", ec); break;
      case 1: fs::create_directory_symlink("/etc", results / "dir-out", ec); break;
      case 2: write_file(results / "nested" / ".." / "ok.txt", "ok"); break;
      default: fs::create_symlink("../../..", results / "up", ec); break;
    }
  }

  void probe_results(const std::string& id, std::mt19937& rng) {
    const auto rec = p_->orch->project(id);
    const auto root = fs::weakly_canonical(rec.workspace / "results");
    for (const auto& r : p_->orch->list_results(id)) {
      const fs::path rel(r.relativePath);
      bool dotdot = false;
      for (const auto& part : rel) dotdot = dotdot || part == "..";
      c_.expect(!rel.is_absolute() && !dotdot && !r.relativePath.empty(), "listed path " + r.relativePath);
      const auto host = root / rel;
      std::error_code ec;
      c_.expect(fs::is_regular_file(fs::symlink_status(host, ec)), "listed non-regular entry " + r.relativePath);
      const auto canon = fs::weakly_canonical(host).string();
      c_.expect(canon.starts_with(root.string() + "/"), "listed entry resolves outside: " + r.relativePath);
    }
    const auto name = adversarial_name(rng);
    std::string bytes;
    try {
      bytes = p_->orch->read_result(id, name);
    } catch (const Error&) {
      return;
    }
    c_.expect(false, "read_result served hostile path \"" + name + "\"");
  }

  void guarded(const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      c_.expect(e.code() != ErrorCode::Internal, std::string("internal error: ") + e.what());
    } catch (const std::exception& e) {
      c_.expect(false, std::string("unexpected exception: ") + e.what());
    }
  }

  void verify_journal(const std::string& id) {
    auto it = tracked_.find(id);
    if (it == tracked_.end()) return;
    auto& t = it->second;
    for (const auto& ev : p_->orch->journal(id, t.verified + 1)) {
      c_.expect(ev.sequence == t.verified + 1, id + ": journal jumped from " + std::to_string(t.verified) + " to " +
                                                   std::to_string(ev.sequence));
      t.verified = ev.sequence;
      if (ev.kind != EventKind::Status) continue;
      c_.expect(declared(t.status, ev.payload), id + ": undeclared transition " + t.status + " -> " + ev.payload);
      edges_.insert(t.status + "->" + ev.payload);
      t.status = ev.payload;
    }
  }

  Check& c_;
  std::unique_ptr<Platform> p_;
  std::map<std::string, Tracked> tracked_;
  std::set<std::string> touched_;
  std::vector<std::string> shares_;
  std::set<std::string> edges_;
  std::size_t names_ = 0;
  std::size_t commands_ = 0;
};

Outcome state_machine_fuzz() {
  Check c;
  Fuzzer f(c);
  f.run(10000);
  return c.outcome("10000 sequences, " + std::to_string(f.commands()) + " commands, " +
                   std::to_string(f.projects()) + " projects, " + std::to_string(f.edges()) +
                   " distinct edges exercised");
}

// ---- API conformance -------------------------------------------------------

Outcome api_conformance() {
  Check c;
  Platform p(Platform::Options{.subscriberCapacity = 8});
  ApiService api(p.orch, {.port = 0, .heartbeat = std::chrono::milliseconds(200)});
  ApiClient anon(api.url());
  ApiClient bogus(api.url(), "bogus-token");
  ApiClient user(api.url());
  user.login(std::string(kDemoUser), std::string(kDemoPassword));
  const auto id = user.wait_until_settled(user.create_project(p.repo().string(), "", "demo").at("projectId"))
                      .at("projectId")
                      .get<std::string>();
  const auto share = user.share(id).at("shareId").get<std::string>();

  const std::vector<std::pair<std::string, std::string>> routes = {
      {"GET", "/api/v1/projects"},
      {"POST", "/api/v1/projects"},
      {"GET", "/api/v1/projects/" + id},
      {"POST", "/api/v1/projects/" + id + "/start"},
      {"POST", "/api/v1/projects/" + id + "/stop"},
      {"DELETE", "/api/v1/projects/" + id},
      {"GET", "/api/v1/projects/" + id + "/results"},
      {"GET", "/api/v1/projects/" + id + "/results/out.csv"},
      {"POST", "/api/v1/projects/" + id + "/upload"},
      {"POST", "/api/v1/projects/" + id + "/archive"},
      {"POST", "/api/v1/projects/" + id + "/share"},
      {"POST", "/api/v1/shares/" + share + "/open"},
      {"GET", "/api/v1/projects/" + id + "/events"},
      {"GET", "/api/v1/projects/" + id + "/bundle"},
      {"GET", "/api/v1/projects/" + id + "/bundle?kind=script"},
      {"GET", "/session/" + id + "/"},
      {"POST", "/session/" + id + "/api/kernels"},
  };
  for (const auto& [method, path] : routes) {
    c.expect(anon.raw(method, path, "{}", false).first == 401, "no token: " + method + " " + path);
    c.expect(bogus.raw(method, path, "{}").first == 401, "bogus token: " + method + " " + path);
  }
  c.expect(anon.raw("GET", "/api/v1/health", {}, false).first == 200, "health requires a token");
  c.expect(anon.raw("POST", "/api/v1/login", R"({"user":"rrp-demo","password":"rrp-demo"})", false).first == 200,
           "login requires a token");
  c.expect(p.orch->project(id).status == ProjectStatus::Ready, "an unauthenticated call changed the project");

  // SSE: a producer keeps appending while the reader disconnects at random
  // points and resumes from the last sequence it saw.
  std::atomic<bool> producing = true;
  std::thread producer([&] {
    for (int i = 0; i < 15; ++i) {
      p.orch->start_project(id, {});
      for (int k = 0; k < 3; ++k) p.orch->exec_in_session(id, demo::analyze_command());
      p.orch->stop_project(id);
    }
    producing = false;
  });
  std::mt19937 rng(5);
  std::vector<std::uint64_t> seen;
  std::uint64_t lastSeen = 0;
  std::size_t reconnects = 0;
  std::size_t gaps = 0;
  auto reader = ApiClient(api.url(), user.token());
  while (true) {
    const bool finalPass = !producing.load();
    const int budget = 1 + static_cast<int>(rng() % 12);
    int taken = 0;
    reader.events(id, lastSeen, [&](const SseFrame& f) {
      if (f.eventType == "gap") {
        const auto j = nlohmann::json::parse(f.data);
        const auto firstMissing = j.at("firstMissing").get<std::uint64_t>();
        c.expect(firstMissing == lastSeen + 1, "gap frame does not start at the next sequence");
        ++gaps;
        return false;
      }
      if (!f.id) return true;
      c.expect(*f.id == lastSeen + 1, "after " + std::to_string(lastSeen) + " got " + std::to_string(*f.id));
      seen.push_back(*f.id);
      lastSeen = *f.id;
      return finalPass || ++taken < budget;
    }, true);
    ++reconnects;
    if (finalPass && lastSeen == p.orch->journal(id).back().sequence) break;
  }
  producer.join();
  const auto journal = p.orch->journal(id);
  c.expect(seen.size() == journal.size(), "received " + std::to_string(seen.size()) + " of " +
                                              std::to_string(journal.size()) + " events");
  c.expect(std::set<std::uint64_t>(seen.begin(), seen.end()).size() == seen.size(), "duplicate events");
  return c.outcome(std::to_string(routes.size()) + " protected routes answer 401; " + std::to_string(seen.size()) +
                   " events over " + std::to_string(reconnects) + " connections, " + std::to_string(gaps) +
                   " explicit gaps, no duplicates");
}

// ---- real runtime (gated) --------------------------------------------------

Outcome real_runtime() {
  auto daemon = container_daemon();
  if (!daemon) return {Verdict::Skip, "no container daemon at RRP_RUNTIME_ENDPOINT or /var/run/docker.sock"};
  Check c;
  Platform p;
  OrchestratorConfig cfg;
  cfg.dataRoot = p.root() / "docker-platform";
  cfg.runtime = *daemon;
  cfg.rdms = p.rdms;
  Orchestrator orch(cfg);
  const auto rec =
      orch.wait_until_settled(orch.create_project("rrp-demo", {.repoUrl = p.repo().string()}, "real").projectId);
  c.expect(rec.status == ProjectStatus::Ready, "build did not reach Ready: " + rec.failure.value_or(""));
  if (rec.status != ProjectStatus::Ready) return c.outcome("");
  const auto info = orch.start_project(rec.projectId, {});
  httplib::Client http("http://" + info.handle.internalEndpoint);
  bool answered = false;
  for (int i = 0; i < 120 && !answered; ++i) {
    const auto r = http.Get(info.publicPath);
    answered = r && r->status < 500;
    if (!answered) std::this_thread::sleep_for(std::chrono::milliseconds(500));
  }
  c.expect(answered, "session endpoint never answered");
  c.expect(orch.exec_in_session(rec.projectId, demo::analyze_command()) == 0, "workload failed in the container");
  orch.stop_project(rec.projectId);
  c.expect(orch.read_result(rec.projectId, std::string(demo::kResultFile)) == testing::python_reference_output(),
           "container result differs from the reference output");
  orch.delete_project(rec.projectId);
  return c.outcome("built, probed and reproduced the result hashes on docker");
}

}  // namespace
}  // namespace rrp

int main() {
  using rrp::Verdict;
  struct Criterion {
    const char* name;
    rrp::Outcome (*run)();
  };
  const std::vector<Criterion> criteria = {
      {"lifecycle", rrp::lifecycle},
      {"determinism", rrp::determinism},
      {"share-semantics", rrp::share_semantics},
      {"clean-repo-gate", rrp::clean_repo_gate},
      {"bundle-round-trip", rrp::bundle_round_trip},
      {"player-script", rrp::player_script},
      {"read-only-mounts", rrp::read_only_mounts},
      {"state-machine-fuzz", rrp::state_machine_fuzz},
      {"api-conformance", rrp::api_conformance},
      {"real-runtime", rrp::real_runtime},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    rrp::Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("aborted: ") + e.what()};
    }
    const double secs = rrp::Seconds(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    failed += o.verdict == Verdict::Fail;
    std::printf("%s %-20s %s [%.1fs]\n", tag, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
