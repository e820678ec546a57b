#pragma once

#include <memory>
#include <string>

#include "rrp/demo.hpp"
#include "rrp/orchestrator.hpp"
#include "rrp/rdms.hpp"
#include "rrp/sim_runtime.hpp"

namespace rrp::testing {

/// A complete desk platform: reference RDMS over HTTP holding the demo
/// dataset, the simulated runtime and an orchestrator, plus the committed
/// demo repository bound to that dataset.
struct Platform {
  struct Options {
    bool httpRdms = true;
    std::size_t subscriberCapacity = 1024;
    std::size_t maxConcurrentBuilds = 2;
  };

  Platform();
  explicit Platform(Options options);
  ~Platform();

  /// Creates a project from the fixture and waits until it settles.
  ProjectRecord ready_project(const std::string& name = "demo", const std::string& owner = "rrp-demo");
  /// Starts, runs the workload, stops; returns the out.csv bytes.
  std::string run_workload(const std::string& projectId);
  /// Orchestrator over the same data root, runtime and RDMS.
  std::shared_ptr<Orchestrator> reopen();

  fs::path root() const { return tmp->path(); }
  fs::path repo() const { return fixture.repo; }

  std::unique_ptr<TempDir> tmp;
  std::shared_ptr<SimRegistry> registry;
  std::shared_ptr<SimRuntime> sim;
  std::unique_ptr<ReferenceRdmsServer> rdmsServer;
  std::shared_ptr<RdmsStore> store;
  std::shared_ptr<RdmsClient> rdms;
  std::shared_ptr<Orchestrator> orch;
  std::string permId;
  demo::Fixture fixture;
  Options options;
};

/// Expected out.csv for the demo dataset, computed by running the shipped
/// Python script over the dataset files with python3.
std::string python_reference_output();

}  // namespace rrp::testing
