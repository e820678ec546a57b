#include "support.hpp"

#include "rrp/error.hpp"

namespace rrp::testing {

Platform::Platform() : Platform(Options{}) {}

Platform::Platform(Options opts) : options(opts) {
  tmp = std::make_unique<TempDir>("rrp-test");
  registry = std::make_shared<SimRegistry>();
  sim = std::make_shared<SimRuntime>(SimRuntime::Options{.registry = registry});
  demo::register_programs(*sim);
  std::string serverUrl;
  if (options.httpRdms) {
    rdmsServer = std::make_unique<ReferenceRdmsServer>(ReferenceRdmsServer::Config{.dataDir = root() / "rdms"});
    store = rdmsServer->store();
    rdms = std::make_shared<HttpRdmsClient>(rdmsServer->url());
    serverUrl = rdmsServer->url();
  } else {
    store = std::make_shared<RdmsStore>(RdmsStore::Options{.dataDir = root() / "rdms"});
    rdms = std::make_shared<LocalRdmsClient>(store);
    serverUrl = store->base_url();
  }
  permId = store->register_dataset(demo::dataset_files(), {{"name", "demo"}});
  fixture = demo::make_fixture_repo(root() / "repo",
                                    {.datasets = {{serverUrl, permId, std::string(demo::kDatasetFolder)}}});
  orch = reopen();
}

Platform::~Platform() {
  orch.reset();
  if (rdmsServer) rdmsServer->stop();
}

std::shared_ptr<Orchestrator> Platform::reopen() {
  OrchestratorConfig config;
  config.dataRoot = root() / "platform";
  config.runtime = sim;
  config.rdms = rdms;
  config.subscriberCapacity = options.subscriberCapacity;
  config.maxConcurrentBuilds = options.maxConcurrentBuilds;
  return std::make_shared<Orchestrator>(std::move(config));
}

ProjectRecord Platform::ready_project(const std::string& name, const std::string& owner) {
  const auto rec = orch->create_project(owner, {.repoUrl = fixture.repo.string()}, name);
  return orch->wait_until_settled(rec.projectId);
}

std::string Platform::run_workload(const std::string& projectId) {
  orch->start_project(projectId, {});
  const int code = orch->exec_in_session(projectId, demo::analyze_command());
  if (code != 0) fail(ErrorCode::ExecFailed, "workload exited with " + std::to_string(code));
  orch->stop_project(projectId);
  return orch->read_result(projectId, std::string(demo::kResultFile));
}

std::string python_reference_output() {
  TempDir dir("rrp-pyref");
  for (const auto& f : demo::dataset_files()) write_file(dir.path() / "openbis" / "raw_data" / f.path, f.bytes);
  write_file(dir.path() / "analyze.py", demo::analyze_script());
  const auto res = run_process({"python3", (dir.path() / "analyze.py").string()},
                               {.env = {{"RRP_OPENBIS_DIR", (dir.path() / "openbis").string()},
                                        {"RRP_RESULTS_DIR", (dir.path() / "results").string()}}});
  if (res.exitCode != 0) fail(ErrorCode::ExecFailed, "python3 analyze.py: " + res.err);
  return read_file(dir.path() / "results" / "out.csv");
}

}  // namespace rrp::testing
