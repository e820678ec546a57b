#include "rrp/cli.hpp"

#include <CLI11.hpp>
#include <signal.h>

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "rrp/api_client.hpp"
#include "rrp/api_service.hpp"
#include "rrp/bundler.hpp"
#include "rrp/demo.hpp"
#include "rrp/error.hpp"
#include "rrp/orchestrator.hpp"
#include "rrp/rdms.hpp"

namespace rrp {

using nlohmann::json;

namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

std::optional<std::string> env_opt(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? std::optional<std::string>(v) : std::nullopt;
}

fs::path token_file() {
  if (auto f = env_opt("RRP_TOKEN_FILE")) return *f;
  return fs::path(env_or("HOME", ".")) / ".rrp" / "token";
}

/// Blocks SIGINT/SIGTERM for every thread started afterwards, then waits
/// for one of them.
class SignalWaiter {
 public:
  SignalWaiter() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &previous_);
  }
  ~SignalWaiter() { pthread_sigmask(SIG_SETMASK, &previous_, nullptr); }
  void wait() {
    int sig = 0;
    sigwait(&set_, &sig);
  }

 private:
  sigset_t set_{};
  sigset_t previous_{};
};

std::string cell(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return "-";
  return j[key].is_string() ? j[key].get<std::string>() : j[key].dump();
}

void print_projects(std::ostream& out, const json& projects) {
  out << std::left << std::setw(22) << "ID" << std::setw(24) << "NAME" << std::setw(10) << "STATUS" << "IMAGE\n";
  for (const auto& p : projects) {
    out << std::setw(22) << cell(p, "projectId") << std::setw(24) << cell(p, "name") << std::setw(10)
        << cell(p, "status") << cell(p, "imageRef") << "\n";
  }
}

void print_project(std::ostream& out, const json& p) {
  out << cell(p, "projectId") << "  " << cell(p, "name") << "  " << cell(p, "status");
  if (p.contains("failure") && !p["failure"].is_null()) out << "  (" << p["failure"].get<std::string>() << ")";
  out << "\n";
}

struct Globals {
  std::string url;
  std::string token;
  bool asJson = false;
};

ApiClient client_for(const Globals& g) {
  auto token = g.token;
  if (token.empty()) {
    std::error_code ec;
    if (fs::exists(token_file(), ec)) token = std::string(trim(read_file(token_file())));
  }
  return ApiClient(g.url, token);
}

ResourceLimits limits_from(double cpu, std::uint64_t mem) {
  ResourceLimits l;
  if (cpu > 0) l.cpuCores = cpu;
  if (mem > 0) l.memoryBytes = mem;
  return l;
}

int serve(const std::string& host, int port, const fs::path& dataDir, const std::optional<std::string>& rdmsUrl,
          const std::optional<std::string>& runtimeEndpoint, const fs::path& staticDir, std::ostream& out) {
  SignalWaiter signals;
  OrchestratorConfig config;
  config.dataRoot = dataDir;
  config.runtime = make_runtime_from_env(runtimeEndpoint);
  if (rdmsUrl) {
    config.rdms = std::make_shared<HttpRdmsClient>(*rdmsUrl);
  } else {
    config.rdms = std::make_shared<LocalRdmsClient>(
        std::make_shared<RdmsStore>(RdmsStore::Options{.dataDir = dataDir / "rdms"}));
  }
  auto orch = std::make_shared<Orchestrator>(std::move(config));
  ApiService service(orch, ApiConfig{.host = host, .port = port, .staticDir = staticDir});
  out << "serving on " << service.url() << " (runtime: " << orch->runtime().backend_name() << ")" << std::endl;
  signals.wait();
  service.stop();
  return kExitOk;
}

int rdms_serve(const fs::path& dataDir, const std::string& host, int port, bool seedDemo, std::ostream& out) {
  SignalWaiter signals;
  ReferenceRdmsServer server({.dataDir = dataDir, .host = host, .port = port});
  out << "RDMS serving on " << server.url() << std::endl;
  if (seedDemo) {
    const auto permId = server.store()->register_dataset(demo::dataset_files(), {{"name", "rrp demo dataset"}});
    out << "registered demo dataset " << permId << std::endl;
  }
  signals.wait();
  server.stop();
  return kExitOk;
}

int play(const fs::path& file, const fs::path& workDirArg, const std::optional<std::string>& runtimeEndpoint,
         const ResourceLimits& limits, bool detach, bool asJson, std::ostream& out) {
  std::optional<SignalWaiter> signals;
  if (!detach) signals.emplace();
  const auto runtime = make_runtime_from_env(runtimeEndpoint);
  BundleManifest manifest;
  try {
    manifest = read_bundle_manifest(file);
  } catch (const Error& e) {
    fail(ErrorCode::VerificationFailed, e.detail());
  }
  const auto workDir = workDirArg.empty() ? fs::current_path() / (slugify(manifest.projectName) + "-player") : workDirArg;
  PlayResult result;
  if (manifest.kind == BundleKind::Bundle) {
    result = play_bundle(file, *runtime, workDir, limits);
  } else {
    HttpFetcher fetcher;
    result = play_script(file, fetcher, *runtime, workDir, limits);
  }
  if (asJson) {
    out << json{{"sessionId", result.session.sessionId},
                {"localUrl", result.localUrl},
                {"workDir", result.workDir.string()},
                {"imageRef", result.session.imageRef.str()}}
               .dump(2)
        << std::endl;
  } else {
    out << "session " << result.session.sessionId << " up at " << result.localUrl << "\n"
        << "workspace " << result.workDir.string() << std::endl;
  }
  if (!detach) {
    signals->wait();
    runtime->stop_session(result.session.sessionId);
    runtime->destroy_session(result.session.sessionId);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reproducible research platform command-line client", "rrp"};
  app.require_subcommand(1);
  Globals g;
  g.url = env_or("RRP_URL", "http://127.0.0.1:" + env_or("RRP_PORT", std::to_string(kDefaultApiPort)));
  g.token = env_or("RRP_TOKEN", "");
  app.add_option("--url", g.url, "API base URL");
  app.add_option("--token", g.token, "API token (default: the one saved by login)");
  app.add_flag("--json", g.asJson, "Machine-readable output");

  // serve
  auto* serveCmd = app.add_subcommand("serve", "Run the API service");
  std::string serveHost = "127.0.0.1";
  int servePort = std::stoi(env_or("RRP_PORT", std::to_string(kDefaultApiPort)));
  std::string dataDir = env_or("RRP_DATA_DIR", "rrp-data");
  std::string rdmsUrl = env_or("RRP_RDMS_URL", "");
  std::string runtimeEndpoint = env_or("RRP_RUNTIME_ENDPOINT", "");
  std::string staticDir;
  serveCmd->add_option("--host", serveHost, "Bind address");
  serveCmd->add_option("--port", servePort, "Bind port");
  serveCmd->add_option("--data", dataDir, "Data directory");
  serveCmd->add_option("--rdms-url", rdmsUrl, "RDMS base URL (default: embedded store)");
  serveCmd->add_option("--runtime-endpoint", runtimeEndpoint, "Container daemon socket (default: simulator)");
  serveCmd->add_option("--static", staticDir, "Directory of UI assets served under /");

  // login
  auto* loginCmd = app.add_subcommand("login", "Log in with RDMS credentials");
  std::string user(kDemoUser), password(kDemoPassword);
  loginCmd->add_option("--user", user);
  loginCmd->add_option("--password", password);

  // create
  auto* createCmd = app.add_subcommand("create", "Create a project from a git repository");
  std::string repo, ref, name, credentials;
  bool noWait = false;
  createCmd->add_option("--repo", repo, "Repository URL")->required();
  createCmd->add_option("--ref", ref, "Branch, tag or commit");
  createCmd->add_option("--name", name, "Project name");
  createCmd->add_option("--credentials", credentials, "user:secret for private repositories");
  createCmd->add_flag("--no-wait", noWait, "Return before the build settles");

  auto* listCmd = app.add_subcommand("list", "List projects");

  std::string projectId;
  double cpu = 0;
  std::uint64_t mem = 0;
  auto* startCmd = app.add_subcommand("start", "Start a session");
  startCmd->add_option("id", projectId)->required();
  startCmd->add_option("--cpu", cpu, "CPU cores");
  startCmd->add_option("--mem", mem, "Memory in bytes");

  auto* stopCmd = app.add_subcommand("stop", "Stop a session");
  stopCmd->add_option("id", projectId)->required();
  auto* deleteCmd = app.add_subcommand("delete", "Delete a project");
  deleteCmd->add_option("id", projectId)->required();

  auto* resultsCmd = app.add_subcommand("results", "List or download results");
  std::string resultPath, outputFile;
  resultsCmd->add_option("id", projectId)->required();
  resultsCmd->add_option("--get", resultPath, "Download one result file");
  resultsCmd->add_option("-o,--output", outputFile, "Write the download here instead of stdout");

  auto* uploadCmd = app.add_subcommand("upload", "Register a result in the RDMS");
  uploadCmd->add_option("id", projectId)->required();
  uploadCmd->add_option("path", resultPath)->required();

  auto* archiveCmd = app.add_subcommand("archive", "Archive the project to the RDMS");
  archiveCmd->add_option("id", projectId)->required();

  auto* shareCmd = app.add_subcommand("share", "Create a share id");
  shareCmd->add_option("id", projectId)->required();

  auto* openShareCmd = app.add_subcommand("open-share", "Open a shared project");
  std::string shareId;
  openShareCmd->add_option("shareId", shareId)->required();
  openShareCmd->add_option("--name", name, "Name of the new project");

  auto* bundleCmd = app.add_subcommand("bundle", "Export a player bundle");
  bool script = false;
  bundleCmd->add_option("id", projectId)->required();
  bundleCmd->add_option("-o,--output", outputFile, "Output file")->required();
  bundleCmd->add_flag("--script", script, "Export a player script instead");

  auto* eventsCmd = app.add_subcommand("events", "Print the project journal");
  std::uint64_t lastSeen = 0;
  bool follow = false;
  eventsCmd->add_option("id", projectId)->required();
  eventsCmd->add_option("--after", lastSeen, "Last sequence already seen");
  eventsCmd->add_flag("--follow", follow, "Keep streaming live events");

  auto* playCmd = app.add_subcommand("play", "Play a bundle or script locally");
  std::string playFile, workDir;
  bool detach = false;
  playCmd->add_option("file", playFile)->required();
  playCmd->add_option("--workdir", workDir, "Where data, code and results are unpacked");
  playCmd->add_option("--runtime-endpoint", runtimeEndpoint, "Container daemon socket (default: simulator)");
  playCmd->add_option("--cpu", cpu, "CPU cores");
  playCmd->add_option("--mem", mem, "Memory in bytes");
  playCmd->add_flag("--detach", detach, "Return once the session is up");

  auto* rdmsCmd = app.add_subcommand("rdms-serve", "Run the reference RDMS server");
  std::string rdmsHost = "127.0.0.1";
  int rdmsPort = 7080;
  bool seedDemo = false;
  rdmsCmd->add_option("--data", dataDir, "Data directory")->required();
  rdmsCmd->add_option("--host", rdmsHost, "Bind address");
  rdmsCmd->add_option("--port", rdmsPort, "Bind port");
  rdmsCmd->add_flag("--seed-demo", seedDemo, "Register the demo dataset on startup");

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUser;
  }

  auto emit = [&](const json& j, const std::function<void()>& human) {
    if (g.asJson) {
      out << j.dump(2) << std::endl;
    } else {
      human();
    }
  };

  try {
    if (serveCmd->parsed()) {
      return serve(serveHost, servePort, dataDir, rdmsUrl.empty() ? std::nullopt : std::optional(rdmsUrl),
                   runtimeEndpoint.empty() ? std::nullopt : std::optional(runtimeEndpoint), staticDir, out);
    }
    if (rdmsCmd->parsed()) return rdms_serve(dataDir, rdmsHost, rdmsPort, seedDemo, out);
    if (playCmd->parsed()) {
      return play(playFile, workDir, runtimeEndpoint.empty() ? std::nullopt : std::optional(runtimeEndpoint),
                  limits_from(cpu, mem), detach, g.asJson, out);
    }

    auto api = client_for(g);
    if (loginCmd->parsed()) {
      const auto t = api.login(user, password);
      write_file(token_file(), t.at("token").get<std::string>() + "\n");
      fs::permissions(token_file(), fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
      emit(t, [&] { out << "logged in as " << t.at("userId").get<std::string>() << std::endl; });
    } else if (createCmd->parsed()) {
      auto p = api.create_project(repo, ref, name, credentials.empty() ? std::nullopt : std::optional(credentials));
      if (!noWait) p = api.wait_until_settled(p.at("projectId").get<std::string>());
      emit(p, [&] { print_project(out, p); });
      if (p.value("status", "") == "Failed") {
        err << "error: project failed: " << cell(p, "failure") << "\n";
        return kExitUser;
      }
    } else if (listCmd->parsed()) {
      const auto ps = api.projects();
      emit(ps, [&] { print_projects(out, ps); });
    } else if (startCmd->parsed()) {
      const auto r = api.start(projectId, limits_from(cpu, mem));
      emit(r, [&] {
        print_project(out, r.at("project"));
        out << "session at " << g.url << r.at("publicPath").get<std::string>() << std::endl;
      });
    } else if (stopCmd->parsed()) {
      const auto p = api.stop(projectId);
      emit(p, [&] { print_project(out, p); });
    } else if (deleteCmd->parsed()) {
      const auto p = api.remove(projectId);
      emit(p, [&] { print_project(out, p); });
    } else if (resultsCmd->parsed()) {
      if (!resultPath.empty()) {
        const auto bytes = api.result(projectId, resultPath);
        if (outputFile.empty()) {
          out << bytes;
        } else {
          write_file(outputFile, bytes);
        }
      } else {
        const auto rs = api.results(projectId);
        emit(rs, [&] {
          for (const auto& r : rs) {
            out << std::left << std::setw(40) << r.at("relativePath").get<std::string>() << std::right << std::setw(12)
                << r.at("byteSize").get<std::uint64_t>() << "  " << r.at("contentHash").get<std::string>() << "\n";
          }
        });
      }
    } else if (uploadCmd->parsed()) {
      const auto r = api.upload(projectId, resultPath, {});
      emit(r, [&] { out << r.at("permId").get<std::string>() << std::endl; });
    } else if (archiveCmd->parsed()) {
      const auto r = api.archive(projectId);
      emit(r, [&] { out << r.at("permId").get<std::string>() << std::endl; });
    } else if (shareCmd->parsed()) {
      const auto s = api.share(projectId);
      emit(s, [&] { out << s.at("shareId").get<std::string>() << std::endl; });
    } else if (openShareCmd->parsed()) {
      const auto p = api.open_share(shareId, name.empty() ? std::nullopt : std::optional(name));
      emit(p, [&] { print_project(out, p); });
    } else if (bundleCmd->parsed()) {
      const auto bytes = api.bundle(projectId, script ? "script" : "bundle");
      write_file(outputFile, bytes);
      const json r{{"file", outputFile}, {"bytes", bytes.size()}};
      emit(r, [&] { out << "wrote " << outputFile << " (" << bytes.size() << " bytes)" << std::endl; });
    } else if (eventsCmd->parsed()) {
      api.events(
          projectId, lastSeen,
          [&](const SseFrame& f) {
            if (g.asJson) {
              out << f.data << std::endl;
            } else {
              const auto j = json::parse(f.data, nullptr, false);
              if (f.eventType == "gap") {
                out << "-- gap: events from " << j.value("firstMissing", 0) << " were dropped --" << std::endl;
              } else {
                out << j.value("sequence", 0) << " " << j.value("timestamp", "") << " " << j.value("kind", "")
                    << " " << j.value("payload", "") << std::endl;
              }
            }
            return true;
          },
          !follow);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    const auto status = http_status(e.code());
    return status >= 400 && status < 500 ? kExitUser : kExitSystem;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitSystem;
  }
  return kExitOk;
}

}  // namespace rrp
