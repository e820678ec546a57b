#include "rrp/orchestrator.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "rrp/archive.hpp"
#include "rrp/error.hpp"

namespace rrp {

using nlohmann::json;

// ---- status ----------------------------------------------------------------

namespace {

constexpr std::array<std::pair<ProjectStatus, std::string_view>, 9> kStatusNames{{
    {ProjectStatus::New, "New"},
    {ProjectStatus::Cloning, "Cloning"},
    {ProjectStatus::Planning, "Planning"},
    {ProjectStatus::Building, "Building"},
    {ProjectStatus::Ready, "Ready"},
    {ProjectStatus::Running, "Running"},
    {ProjectStatus::Stopped, "Stopped"},
    {ProjectStatus::Failed, "Failed"},
    {ProjectStatus::Deleted, "Deleted"},
}};

bool in_pipeline(ProjectStatus s) {
  return s == ProjectStatus::New || s == ProjectStatus::Cloning || s == ProjectStatus::Planning ||
         s == ProjectStatus::Building;
}

}  // namespace

std::string_view to_string(ProjectStatus status) noexcept {
  for (const auto& [s, name] : kStatusNames) {
    if (s == status) return name;
  }
  return "?";
}

ProjectStatus project_status_from_string(std::string_view name) {
  for (const auto& [s, n] : kStatusNames) {
    if (n == name) return s;
  }
  fail(ErrorCode::InvalidArgument, "unknown project status " + std::string(name));
}

bool is_declared_transition(ProjectStatus from, ProjectStatus to) noexcept {
  using S = ProjectStatus;
  switch (from) {
    case S::New: return to == S::Cloning;
    case S::Cloning: return to == S::Planning || to == S::Failed;
    case S::Planning: return to == S::Building || to == S::Failed;
    case S::Building: return to == S::Ready || to == S::Failed;
    case S::Ready: return to == S::Running || to == S::Deleted;
    case S::Running: return to == S::Stopped;
    case S::Stopped: return to == S::Running || to == S::Deleted;
    case S::Failed: return to == S::Deleted;
    case S::Deleted: return false;
  }
  return false;
}

// ---- serialization ---------------------------------------------------------

namespace {

json bindings_json(const std::vector<DatasetBinding>& bindings) {
  json out = json::array();
  for (const auto& b : bindings) out.push_back({{"serverUrl", b.serverUrl}, {"permId", b.permId}, {"folder", b.folder}});
  return out;
}

std::vector<DatasetBinding> bindings_from(const json& j) {
  std::vector<DatasetBinding> out;
  for (const auto& b : j) out.push_back({b.at("serverUrl"), b.at("permId"), b.at("folder")});
  return out;
}

json environment_json(const EnvironmentSpec& env) {
  json files = json::array();
  for (const auto& f : env.sourceFiles) files.push_back({{"path", f.path}, {"contentHash", f.contentHash}});
  return {
      {"runtime", env.runtime ? json(*env.runtime) : json(nullptr)},
      {"aptPackages", env.aptPackages},
      {"pipRequirements", env.pipRequirements},
      {"condaEnvironment", env.condaEnvironment},
      {"rInstallScript", env.rInstallScript},
      {"juliaProject", env.juliaProject},
      {"postBuild", env.postBuild},
      {"startCommand", env.startCommand},
      {"location", env.location},
      {"sourceFiles", files},
  };
}

EnvironmentSpec environment_from(const json& j) {
  EnvironmentSpec env;
  if (!j.at("runtime").is_null()) env.runtime = j.at("runtime").get<std::string>();
  j.at("aptPackages").get_to(env.aptPackages);
  j.at("pipRequirements").get_to(env.pipRequirements);
  j.at("condaEnvironment").get_to(env.condaEnvironment);
  j.at("rInstallScript").get_to(env.rInstallScript);
  j.at("juliaProject").get_to(env.juliaProject);
  j.at("postBuild").get_to(env.postBuild);
  j.at("startCommand").get_to(env.startCommand);
  j.at("location").get_to(env.location);
  for (const auto& f : j.at("sourceFiles")) env.sourceFiles.push_back({f.at("path"), f.at("contentHash")});
  return env;
}

json session_json(const SessionHandle& s) {
  return {{"sessionId", s.sessionId},
          {"imageRef", s.imageRef.str()},
          {"internalEndpoint", s.internalEndpoint},
          {"status", to_string(s.status)}};
}

ProjectRecord record_from(const json& j) {
  ProjectRecord r;
  j.at("projectId").get_to(r.projectId);
  j.at("name").get_to(r.name);
  j.at("owner").get_to(r.owner);
  r.status = project_status_from_string(j.at("status").get<std::string>());
  if (!j.at("imageRef").is_null()) r.imageRef = ImageRef::parse(j.at("imageRef").get<std::string>());
  if (const auto& s = j.at("session"); !s.is_null()) {
    r.session = SessionHandle{s.at("sessionId"), ImageRef::parse(s.at("imageRef").get<std::string>()),
                              s.at("internalEndpoint"), SessionStatus::Up};
  }
  r.resources.cpuCores = j.at("resources").at("cpuCores");
  r.resources.memoryBytes = j.at("resources").at("memoryBytes");
  r.workspace = j.at("workspace").get<std::string>();
  if (!j.at("failure").is_null()) r.failure = j.at("failure").get<std::string>();
  r.createdAt = parse_iso8601(j.at("createdAt").get<std::string>());
  if (!j.at("publishedImage").is_null()) r.publishedImage = j.at("publishedImage").get<std::string>();
  const auto& spec = j.at("spec");
  r.spec.source.repoUrl = spec.at("repoUrl");
  r.spec.source.ref = spec.at("ref");
  r.spec.tree.rootPath = spec.at("rootPath").get<std::string>();
  r.spec.tree.commitId = spec.at("commitId");
  r.spec.specDigest = spec.at("specDigest");
  r.spec.datasets = bindings_from(spec.at("datasets"));
  if (spec.contains("environment")) r.spec.environment = environment_from(spec.at("environment"));
  return r;
}

}  // namespace

void to_json(json& j, const ProjectRecord& r) {
  j = json{
      {"projectId", r.projectId},
      {"name", r.name},
      {"owner", r.owner},
      {"status", to_string(r.status)},
      {"imageRef", r.imageRef ? json(r.imageRef->str()) : json(nullptr)},
      {"session", r.session ? session_json(*r.session) : json(nullptr)},
      {"publicPath", r.session ? json(std::string(kSessionPrefix) + r.projectId + "/") : json(nullptr)},
      {"resources", {{"cpuCores", r.resources.cpuCores}, {"memoryBytes", r.resources.memoryBytes}}},
      {"workspace", r.workspace.string()},
      {"failure", r.failure ? json(*r.failure) : json(nullptr)},
      {"createdAt", iso8601(r.createdAt)},
      {"publishedImage", r.publishedImage ? json(*r.publishedImage) : json(nullptr)},
      {"spec",
       {{"repoUrl", r.spec.source.repoUrl},
        {"ref", r.spec.source.ref},
        {"rootPath", r.spec.tree.rootPath.string()},
        {"commitId", r.spec.tree.commitId},
        {"specDigest", r.spec.specDigest},
        {"datasets", bindings_json(r.spec.datasets)},
        {"environment", environment_json(r.spec.environment)}}},
  };
}

void to_json(json& j, const ShareRecord& s) {
  j = json{{"shareId", s.shareId},     {"sourceProjectId", s.sourceProjectId}, {"projectName", s.projectName},
           {"commitId", s.commitId},   {"specDigest", s.specDigest},           {"imageRef", s.imageRef.str()},
           {"createdAt", iso8601(s.createdAt)}};
}

void from_json(const json& j, ShareRecord& s) {
  j.at("shareId").get_to(s.shareId);
  j.at("sourceProjectId").get_to(s.sourceProjectId);
  j.at("projectName").get_to(s.projectName);
  j.at("commitId").get_to(s.commitId);
  j.at("specDigest").get_to(s.specDigest);
  s.imageRef = ImageRef::parse(j.at("imageRef").get<std::string>());
  s.createdAt = parse_iso8601(j.at("createdAt").get<std::string>());
}

void to_json(json& j, const ResultEntry& r) {
  j = json{{"relativePath", r.relativePath},
           {"byteSize", r.byteSize},
           {"modifiedAt", iso8601(r.modifiedAt)},
           {"contentHash", r.contentHash}};
}

// ---- entries ---------------------------------------------------------------

struct Orchestrator::Entry {
  Entry(std::string owner_, std::string name_) : owner(std::move(owner_)), name(std::move(name_)) {}

  const std::string owner;
  const std::string name;
  std::atomic<bool> live{true};  // false once Deleted; frees the name
  std::atomic<ProjectStatus> status{ProjectStatus::New};

  std::mutex mu;  // guards rec and source
  ProjectRecord rec;
  ProjectSource source;  // carries credentials; never persisted
  std::unique_ptr<Journal> journal;
  fs::path dir;
};

namespace {

std::vector<ResultEntry> scan_results(const fs::path& root) {
  std::vector<ResultEntry> out;
  std::error_code ec;
  if (!fs::is_directory(fs::symlink_status(root, ec))) return out;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    const auto st = it->symlink_status(ec);
    if (fs::is_symlink(st) || !fs::is_regular_file(st)) continue;
    const auto rel = confine_relative(fs::relative(it->path(), root, ec).generic_string());
    if (!rel || !is_within(root, it->path())) continue;
    const auto mtime = fs::last_write_time(it->path(), ec);
    out.push_back({*rel, static_cast<std::uint64_t>(it->file_size(ec)),
                   std::chrono::time_point_cast<Clock::duration>(fs::file_time_type::clock::to_sys(mtime)), sha256_file(it->path())});
  }
  std::sort(out.begin(), out.end(),
            [](const ResultEntry& a, const ResultEntry& b) { return a.relativePath < b.relativePath; });
  return out;
}

/// Resolves a results-relative path with no symlink anywhere along it.
std::optional<fs::path> confined_result(const fs::path& root, const std::string& relativePath) {
  const auto rel = confine_relative(relativePath);
  if (!rel) return std::nullopt;
  fs::path p = root;
  std::error_code ec;
  for (const auto& part : fs::path(*rel)) {
    p /= part;
    const auto st = fs::symlink_status(p, ec);
    if (ec || fs::is_symlink(st) || !fs::exists(st)) return std::nullopt;
  }
  if (!is_within(root, p)) return std::nullopt;
  return p;
}

std::string results_fingerprint(const std::vector<ResultEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += e.relativePath + "\n" + e.contentHash + "\n";
  return out;
}

std::vector<DatasetBinding> manifest_bindings(const fs::path& projectRoot) {
  const auto manifest = find_datasets_manifest(projectRoot);
  if (!manifest) return {};
  return parse_datasets_manifest(read_file(*manifest));
}

void write_json_atomically(const fs::path& target, const json& j) {
  const auto tmp = target.string() + ".tmp";
  write_file(tmp, j.dump(2));
  fs::rename(tmp, target);
}

}  // namespace

Orchestrator::Orchestrator(OrchestratorConfig config) : config_(std::move(config)) {
  if (!config_.runtime) fail(ErrorCode::InvalidArgument, "orchestrator needs a runtime adapter");
  if (!config_.rdms) fail(ErrorCode::InvalidArgument, "orchestrator needs an RDMS client");
  if (config_.maxConcurrentBuilds == 0) config_.maxConcurrentBuilds = 1;
  fs::create_directories(config_.dataRoot / "projects");
  fs::create_directories(config_.dataRoot / "shares");

  std::vector<std::shared_ptr<Entry>> resume;
  for (const auto& dir : fs::directory_iterator(config_.dataRoot / "projects")) {
    const auto recPath = dir.path() / "record.json";
    if (!fs::exists(recPath)) continue;
    auto rec = record_from(json::parse(read_file(recPath)));
    auto e = std::make_shared<Entry>(rec.owner, rec.name);
    e->dir = dir.path();
    e->journal = std::make_unique<Journal>(e->dir / "journal.log", config_.subscriberCapacity);
    e->source = rec.spec.source;
    e->rec = std::move(rec);
    e->status = e->rec.status;
    e->live = e->rec.status != ProjectStatus::Deleted;
    std::lock_guard g(e->mu);
    switch (e->rec.status) {
      case ProjectStatus::New:
        resume.push_back(e);
        break;
      case ProjectStatus::Cloning:
      case ProjectStatus::Planning:
      case ProjectStatus::Building:
        fail_project(*e, "interrupted by a platform restart");
        break;
      case ProjectStatus::Running:
        if (e->rec.session) {
          try {
            config_.runtime->destroy_session(e->rec.session->sessionId);
          } catch (const Error&) {
            // The session did not survive the restart.
          }
        }
        e->rec.session.reset();
        transition(*e, ProjectStatus::Stopped);
        break;
      default:
        break;
    }
    entries_[e->rec.projectId] = e;
  }
  for (auto& e : resume) {
    remove_tree(e->dir / "project");
    spawn([this, e] { run_pipeline(e); });
  }
}

Orchestrator::~Orchestrator() {
  std::vector<Worker> workers;
  {
    std::lock_guard g(workerMu_);
    workers.swap(workers_);
  }
  for (auto& w : workers) {
    if (w.thread.joinable()) w.thread.join();
  }
  std::shared_lock g(registryMu_);
  for (const auto& [_, e] : entries_) e->journal->close_all();
}

void Orchestrator::spawn(std::function<void()> job) {
  auto done = std::make_shared<std::atomic<bool>>(false);
  std::lock_guard g(workerMu_);
  std::erase_if(workers_, [](Worker& w) {
    if (!*w.done) return false;
    w.thread.join();
    return true;
  });
  workers_.push_back({std::thread([job = std::move(job), done] {
                        job();
                        *done = true;
                      }),
                      done});
}

std::shared_ptr<Orchestrator::Entry> Orchestrator::entry(const std::string& projectId) const {
  std::shared_lock g(registryMu_);
  const auto it = entries_.find(projectId);
  if (it == entries_.end()) fail(ErrorCode::UnknownProject, projectId);
  return it->second;
}

std::shared_ptr<Orchestrator::Entry> Orchestrator::new_entry(const std::string& owner, const std::string& name,
                                                            const ProjectSource& source) {
  if (slugify(name).empty()) fail(ErrorCode::EmptyName, "project name needs at least one letter or digit");
  auto e = std::make_shared<Entry>(owner, name);
  std::unique_lock g(registryMu_);
  for (const auto& [_, other] : entries_) {
    if (other->live && other->owner == owner && other->name == name) {
      fail(ErrorCode::NameTaken, "project '" + name + "' already exists for " + owner);
    }
  }
  std::string id;
  do {
    id = "p" + to_lower(base32_encode(random_bytes(10)));
  } while (entries_.contains(id));
  e->dir = config_.dataRoot / "projects" / id;
  fs::create_directories(e->dir / "results");
  fs::create_directories(e->dir / "openbis");
  e->journal = std::make_unique<Journal>(e->dir / "journal.log", config_.subscriberCapacity);
  e->source = source;
  e->rec.projectId = id;
  e->rec.name = name;
  e->rec.owner = owner;
  e->rec.spec.source = source;
  e->rec.spec.source.credentials.reset();
  e->rec.workspace = e->dir;
  e->rec.createdAt = Clock::now();
  persist(*e);
  entries_[id] = e;
  return e;
}

void Orchestrator::persist(const Entry& e) const { write_json_atomically(e.dir / "record.json", json(e.rec)); }

void Orchestrator::notify_settled() {
  { std::lock_guard g(settleMu_); }
  settled_.notify_all();
}

void Orchestrator::transition(Entry& e, ProjectStatus to) {
  if (!is_declared_transition(e.rec.status, to)) {
    fail(ErrorCode::Internal, "undeclared transition " + std::string(to_string(e.rec.status)) + " -> " +
                                  std::string(to_string(to)));
  }
  e.rec.status = to;
  e.status = to;
  e.journal->append(EventKind::Status, std::string(to_string(to)));
  persist(e);
  notify_settled();
}

void Orchestrator::fail_project(Entry& e, const std::string& message) {
  e.journal->append(EventKind::Error, message);
  e.rec.failure = message;
  transition(e, ProjectStatus::Failed);
}

// ---- RDMS access -----------------------------------------------------------

std::string Orchestrator::rdms_token() {
  std::lock_guard g(tokenMu_);
  if (!token_ || Clock::now() + std::chrono::minutes(1) >= token_->expiresAt) {
    token_ = config_.rdms->login(config_.rdmsUser, config_.rdmsPassword);
  }
  return token_->token;
}

template <typename F>
auto Orchestrator::with_rdms(F&& f) -> decltype(f(std::string{})) {
  try {
    return f(rdms_token());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AuthFailed) throw;
  }
  // The cached token may have been revoked (server restart); retry once.
  {
    std::lock_guard g(tokenMu_);
    token_.reset();
  }
  return f(rdms_token());
}

std::vector<MountReport> Orchestrator::mount_all(Entry& e, const std::vector<DatasetBinding>& bindings) {
  const auto openbis = e.dir / "openbis";
  fs::create_directories(openbis);
  std::set<std::string> wanted;
  for (const auto& b : bindings) wanted.insert(b.folder);
  for (const auto& dir : fs::directory_iterator(openbis)) {
    if (!wanted.contains(dir.path().filename().string())) remove_tree(dir.path());
  }
  std::vector<MountReport> reports;
  for (const auto& b : bindings) {
    reports.push_back(with_rdms([&](const std::string& token) { return mount_dataset(*config_.rdms, token, b, e.dir); }));
  }
  return reports;
}

// ---- build slots -----------------------------------------------------------

void Orchestrator::acquire_build_slot() {
  std::unique_lock g(buildMu_);
  const auto ticket = nextTicket_++;
  buildCv_.wait(g, [&] { return ticket == servingTicket_ && activeBuilds_ < config_.maxConcurrentBuilds; });
  ++servingTicket_;
  ++activeBuilds_;
  buildCv_.notify_all();
}

void Orchestrator::release_build_slot() {
  {
    std::lock_guard g(buildMu_);
    --activeBuilds_;
  }
  buildCv_.notify_all();
}

// ---- lifecycle -------------------------------------------------------------

ProjectRecord Orchestrator::create_project(const std::string& owner, const ProjectSource& source,
                                           const std::string& name) {
  auto e = new_entry(owner, name, source);
  ProjectRecord snapshot;
  {
    std::lock_guard g(e->mu);
    snapshot = e->rec;
  }
  spawn([this, e] { run_pipeline(e); });
  return snapshot;
}

void Orchestrator::run_pipeline(const std::shared_ptr<Entry>& e) {
  try {
    ProjectSource source;
    {
      std::lock_guard g(e->mu);
      transition(*e, ProjectStatus::Cloning);
      source = e->source;
    }
    const auto tree = load_project_source(source, e->dir / "project");
    {
      std::lock_guard g(e->mu);
      e->rec.spec.tree = tree;
      transition(*e, ProjectStatus::Planning);
    }
    auto spec = load_project_spec(source, tree);
    spec.source.credentials.reset();
    const auto plan = plan_build(spec.environment, spec.specDigest, config_.baseImages);
    const auto recipe = render_recipe(plan);
    const auto ref = image_reference(e->name, spec.specDigest);
    {
      std::lock_guard g(e->mu);
      e->rec.spec = spec;
      transition(*e, ProjectStatus::Building);
    }
    mount_all(*e, spec.datasets);

    acquire_build_slot();
    struct Release {
      Orchestrator* o;
      ~Release() { o->release_build_slot(); }
    } release{this};
    if (!config_.runtime->has_image(ref)) {
      config_.runtime->build_image(recipe, tree.rootPath, ref, [&e](std::string_view line) {
        e->journal->append(EventKind::BuildLog, std::string(line));
      });
    }
    std::lock_guard g(e->mu);
    e->rec.imageRef = ref;
    transition(*e, ProjectStatus::Ready);
  } catch (const std::exception& ex) {
    std::lock_guard g(e->mu);
    fail_project(*e, ex.what());
  }
}

ProjectRecord Orchestrator::wait_until_settled(const std::string& projectId, std::chrono::milliseconds timeout) {
  const auto e = entry(projectId);
  std::unique_lock g(settleMu_);
  settled_.wait_for(g, timeout, [&] { return !in_pipeline(e->status.load()); });
  g.unlock();
  return project(projectId);
}

ProjectRecord Orchestrator::project(const std::string& projectId) const {
  const auto e = entry(projectId);
  std::lock_guard g(e->mu);
  return e->rec;
}

std::vector<ProjectRecord> Orchestrator::projects() const {
  std::vector<std::shared_ptr<Entry>> all;
  {
    std::shared_lock g(registryMu_);
    for (const auto& [_, e] : entries_) all.push_back(e);
  }
  std::vector<ProjectRecord> out;
  for (const auto& e : all) {
    std::lock_guard g(e->mu);
    out.push_back(e->rec);
  }
  std::sort(out.begin(), out.end(), [](const ProjectRecord& a, const ProjectRecord& b) {
    return std::tie(a.createdAt, a.projectId) < std::tie(b.createdAt, b.projectId);
  });
  return out;
}

SessionInfo Orchestrator::start_project(const std::string& projectId, const ResourceLimits& resources) {
  const auto e = entry(projectId);
  std::lock_guard g(e->mu);
  if (e->rec.status != ProjectStatus::Ready && e->rec.status != ProjectStatus::Stopped) {
    fail(ErrorCode::InvalidState, "cannot start a project in status " + std::string(to_string(e->rec.status)));
  }
  resources.validate();

  // Manifest edits take effect here: bindings are re-read and re-mounted.
  const auto bindings = manifest_bindings(e->dir / "project");
  bool remount = bindings != e->rec.spec.datasets;
  for (const auto& b : bindings) remount = remount || !fs::is_directory(e->dir / "openbis" / b.folder);
  if (remount) {
    mount_all(*e, bindings);
    e->rec.spec.datasets = bindings;
  }

  SessionRequest req;
  req.image = *e->rec.imageRef;
  req.limits = resources;
  req.mounts.push_back({e->dir / "project", std::string(kProjectDir), false});
  for (const auto& b : bindings) req.mounts.push_back({e->dir / "openbis" / b.folder, "/openbis/" + b.folder, true});
  req.mounts.push_back({e->dir / "results", "/results", false});
  const auto publicPath = std::string(kSessionPrefix) + projectId + "/";
  req.env["RRP_BASE_URL"] = publicPath;
  SessionHandle handle;
  try {
    handle = config_.runtime->create_session(req);
  } catch (const Error& err) {
    e->journal->append(EventKind::Error, err.what());
    if (err.code() == ErrorCode::ResourceDenied || err.code() == ErrorCode::StartFailed) throw;
    fail(ErrorCode::StartFailed, err.what());
  }
  e->rec.session = handle;
  e->rec.resources = resources;
  transition(*e, ProjectStatus::Running);
  return {handle, publicPath};
}

ProjectRecord Orchestrator::stop_project(const std::string& projectId) {
  const auto e = entry(projectId);
  std::lock_guard g(e->mu);
  if (e->rec.status != ProjectStatus::Running) {
    fail(ErrorCode::InvalidState, "cannot stop a project in status " + std::string(to_string(e->rec.status)));
  }
  const auto sessionId = e->rec.session->sessionId;
  config_.runtime->stop_session(sessionId);
  config_.runtime->destroy_session(sessionId);
  e->rec.session.reset();
  transition(*e, ProjectStatus::Stopped);
  return e->rec;
}

ProjectRecord Orchestrator::delete_project(const std::string& projectId) {
  const auto e = entry(projectId);
  std::lock_guard g(e->mu);
  if (e->rec.status == ProjectStatus::Running) {
    const auto sessionId = e->rec.session->sessionId;
    config_.runtime->stop_session(sessionId);
    config_.runtime->destroy_session(sessionId);
    e->rec.session.reset();
    transition(*e, ProjectStatus::Stopped);
  }
  if (!is_declared_transition(e->rec.status, ProjectStatus::Deleted)) {
    fail(ErrorCode::InvalidState, "cannot delete a project in status " + std::string(to_string(e->rec.status)));
  }
  for (const auto* sub : {"project", "openbis", "results"}) remove_tree(e->dir / sub);
  e->live = false;
  transition(*e, ProjectStatus::Deleted);
  ProjectRecord tombstone;
  tombstone.projectId = e->rec.projectId;
  tombstone.owner = e->rec.owner;
  tombstone.name = e->rec.name;
  tombstone.status = ProjectStatus::Deleted;
  tombstone.createdAt = e->rec.createdAt;
  e->rec = tombstone;
  persist(*e);
  return e->rec;
}

// ---- results ---------------------------------------------------------------

std::vector<ResultEntry> Orchestrator::list_results(const std::string& projectId) const {
  const auto e = entry(projectId);
  if (e->status == ProjectStatus::Deleted) fail(ErrorCode::UnknownProject, projectId + " was deleted");
  return scan_results(e->dir / "results");
}

std::string Orchestrator::read_result(const std::string& projectId, const std::string& relativePath) const {
  const auto e = entry(projectId);
  if (e->status == ProjectStatus::Deleted) fail(ErrorCode::UnknownProject, projectId + " was deleted");
  const auto p = confined_result(e->dir / "results", relativePath);
  std::error_code ec;
  if (!p || !fs::is_regular_file(fs::symlink_status(*p, ec))) fail(ErrorCode::ResultNotFound, relativePath);
  return read_file(*p);
}

std::string Orchestrator::upload_result(const std::string& projectId, const std::string& relativePath,
                                        const std::map<std::string, std::string>& metadata) {
  const auto e = entry(projectId);
  if (e->status == ProjectStatus::Deleted) fail(ErrorCode::UnknownProject, projectId + " was deleted");
  const auto root = e->dir / "results";
  const auto p = confined_result(root, relativePath);
  if (!p) fail(ErrorCode::ResultNotFound, relativePath);

  std::vector<DatasetFile> files;
  const auto prefix = *confine_relative(relativePath);
  std::error_code ec;
  if (fs::is_directory(fs::symlink_status(*p, ec))) {
    for (const auto& r : scan_results(root)) {
      if (starts_with(r.relativePath, prefix + "/")) files.push_back({r.relativePath, read_file(root / r.relativePath)});
    }
  } else if (fs::is_regular_file(fs::symlink_status(*p, ec))) {
    files.push_back({prefix, read_file(*p)});
  }
  if (files.empty()) fail(ErrorCode::ResultNotFound, relativePath);

  auto meta = metadata;
  meta.emplace("rrp.projectId", projectId);
  meta.emplace("rrp.result", prefix);
  std::string permId;
  try {
    permId = with_rdms([&](const std::string& token) { return config_.rdms->register_dataset(token, files, meta); });
  } catch (const Error& err) {
    fail(ErrorCode::RdmsError, err.what());
  }
  e->journal->append(EventKind::Upload, permId + " " + prefix);
  return permId;
}

// ---- snapshots: archive and share --------------------------------------------

ProjectRecord Orchestrator::prepare_snapshot(const std::string& projectId,
                                             std::initializer_list<ProjectStatus> allowed) {
  const auto e = entry(projectId);
  std::lock_guard g(e->mu);
  if (std::find(allowed.begin(), allowed.end(), e->rec.status) == allowed.end()) {
    fail(ErrorCode::InvalidState, "operation not allowed in status " + std::string(to_string(e->rec.status)));
  }
  WorkingTree tree = e->rec.spec.tree;
  tree.rootPath = e->dir / "project";
  if (!is_clean(tree)) {
    fail(ErrorCode::RepositoryDirty, "the project has uncommitted changes; commit them first");
  }
  const auto head = head_commit(tree.rootPath);
  if (head != e->rec.spec.tree.commitId) {
    tree.commitId = head;
    const auto env = parse_environment(tree);
    if (env.sourceFiles != e->rec.spec.environment.sourceFiles) {
      fail(ErrorCode::InvalidState, "environment files changed since the image was built; rebuild the project");
    }
    e->rec.spec.tree = tree;
    e->rec.spec.environment = env;
    e->rec.spec.specDigest = spec_digest(env, head);
    persist(*e);
  }
  const auto bindings = manifest_bindings(tree.rootPath);
  if (bindings != e->rec.spec.datasets) {
    mount_all(*e, bindings);
    e->rec.spec.datasets = bindings;
    persist(*e);
  }
  return e->rec;
}

std::string Orchestrator::archive_project(const std::string& projectId) {
  const auto rec = prepare_snapshot(projectId, {ProjectStatus::Ready, ProjectStatus::Stopped});
  const auto e = entry(projectId);

  std::vector<DatasetFile> files;
  files.push_back({"image.tar", config_.runtime->export_image(*rec.imageRef)});
  const auto code = run_process({"git", "archive", "--format=tar", rec.spec.tree.commitId}, {.cwd = e->dir / "project"});
  if (code.exitCode != 0) fail(ErrorCode::Internal, "git archive failed: " + code.err);
  for (const auto& entry : archive::read_tar(code.out)) {
    if (!entry.directory) files.push_back({"code/" + entry.path, entry.data});
  }
  files.push_back({"datasets.yaml", serialize_datasets_manifest(rec.spec.datasets)});
  for (const auto& r : scan_results(e->dir / "results")) {
    files.push_back({"results/" + r.relativePath, read_file(e->dir / "results" / r.relativePath)});
  }
  const json state = {
      {"projectId", rec.projectId},
      {"name", rec.name},
      {"owner", rec.owner},
      {"status", to_string(rec.status)},
      {"commitId", rec.spec.tree.commitId},
      {"specDigest", rec.spec.specDigest},
      {"imageRef", rec.imageRef->str()},
      {"repoUrl", rec.spec.source.repoUrl},
      {"datasets", bindings_json(rec.spec.datasets)},
      {"resources", {{"cpuCores", rec.resources.cpuCores}, {"memoryBytes", rec.resources.memoryBytes}}},
      {"archivedAt", iso8601(Clock::now())},
  };
  files.push_back({"state.json", state.dump(2)});

  const std::map<std::string, std::string> meta{
      {"rrp.kind", "project-archive"}, {"rrp.projectId", rec.projectId}, {"rrp.commitId", rec.spec.tree.commitId}};
  std::string permId;
  try {
    permId = with_rdms([&](const std::string& token) { return config_.rdms->register_dataset(token, files, meta); });
  } catch (const Error& err) {
    fail(ErrorCode::RdmsError, err.what());
  }
  e->journal->append(EventKind::Archive, permId);
  return permId;
}

ShareRecord Orchestrator::create_share(const std::string& projectId) {
  const auto rec = prepare_snapshot(projectId, {ProjectStatus::Ready, ProjectStatus::Running, ProjectStatus::Stopped});
  const auto e = entry(projectId);
  ShareRecord share{base32_encode(random_bytes(16)), rec.projectId,       rec.name, rec.spec.tree.commitId,
                    rec.spec.specDigest,             *rec.imageRef, Clock::now()};
  const auto sharesDir = config_.dataRoot / "shares";
  // The committed tree is snapshotted so the share outlives the source repo.
  git::run({"bundle", "create", "-q", (sharesDir / (share.shareId + ".bundle")).string(), "HEAD"}, e->dir / "project",
           ErrorCode::Internal);
  write_json_atomically(sharesDir / (share.shareId + ".json"), json(share));
  e->journal->append(EventKind::Share, share.shareId);
  return share;
}

std::optional<ShareRecord> Orchestrator::share(const std::string& shareId) const {
  // Share ids are base32; anything else cannot name a file we wrote.
  if (shareId.empty() || !std::all_of(shareId.begin(), shareId.end(), [](char c) {
        return (c >= 'A' && c <= 'Z') || (c >= '2' && c <= '7');
      })) {
    return std::nullopt;
  }
  const auto path = config_.dataRoot / "shares" / (shareId + ".json");
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  return json::parse(read_file(path)).get<ShareRecord>();
}

ProjectRecord Orchestrator::open_share(const std::string& shareId, const std::string& newOwner,
                                       const std::optional<std::string>& name) {
  const auto rec = share(shareId);
  if (!rec) fail(ErrorCode::ShareNotFound, shareId);
  const ProjectSource source{(config_.dataRoot / "shares" / (shareId + ".bundle")).string(), rec->commitId, {}};

  std::shared_ptr<Entry> e;
  if (name) {
    e = new_entry(newOwner, *name, source);
  } else {
    for (int n = 1; !e; ++n) {
      try {
        e = new_entry(newOwner, n == 1 ? rec->projectName : rec->projectName + "-" + std::to_string(n), source);
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NameTaken) throw;
      }
    }
  }
  run_share_pipeline(e, *rec);
  std::lock_guard g(e->mu);
  return e->rec;
}

void Orchestrator::run_share_pipeline(const std::shared_ptr<Entry>& e, const ShareRecord& share) {
  // Same phases as a fresh project, but the recorded image is reused as is.
  try {
    {
      std::lock_guard g(e->mu);
      transition(*e, ProjectStatus::Cloning);
    }
    const auto tree = load_project_source(e->source, e->dir / "project");
    {
      std::lock_guard g(e->mu);
      e->rec.spec.tree = tree;
      transition(*e, ProjectStatus::Planning);
    }
    auto spec = load_project_spec(e->source, tree);
    if (spec.specDigest != share.specDigest) {
      fail(ErrorCode::Internal, "shared snapshot does not reproduce spec digest " + share.specDigest);
    }
    {
      std::lock_guard g(e->mu);
      e->rec.spec = spec;
      transition(*e, ProjectStatus::Building);
    }
    mount_all(*e, spec.datasets);
    if (!config_.runtime->has_image(share.imageRef)) {
      fail(ErrorCode::ImageNotFound, "shared image " + share.imageRef.str() + " is no longer available");
    }
    std::lock_guard g(e->mu);
    e->rec.imageRef = share.imageRef;
    transition(*e, ProjectStatus::Ready);
  } catch (const std::exception& ex) {
    std::lock_guard g(e->mu);
    fail_project(*e, ex.what());
  }
}

// ---- events, routing, sessions ---------------------------------------------

std::vector<LogEvent> Orchestrator::journal(const std::string& projectId, std::uint64_t fromSequence) const {
  return entry(projectId)->journal->read(fromSequence);
}

std::shared_ptr<Subscription> Orchestrator::project_events(const std::string& projectId, std::uint64_t fromSequence) {
  return entry(projectId)->journal->subscribe(fromSequence);
}

SessionHandle Orchestrator::route(std::string_view publicPath) const {
  if (!starts_with(publicPath, kSessionPrefix)) fail(ErrorCode::UnknownProject, std::string(publicPath));
  auto rest = publicPath.substr(kSessionPrefix.size());
  const auto id = std::string(rest.substr(0, rest.find('/')));
  if (id.empty()) fail(ErrorCode::UnknownProject, std::string(publicPath));
  std::shared_ptr<Entry> e;
  {
    std::shared_lock g(registryMu_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) fail(ErrorCode::UnknownProject, id);
    e = it->second;
  }
  std::lock_guard g(e->mu);
  if (e->rec.status != ProjectStatus::Running || !e->rec.session) {
    fail(ErrorCode::NoActiveSession, id + " is " + std::string(to_string(e->rec.status)));
  }
  return *e->rec.session;
}

int Orchestrator::exec_in_session(const std::string& projectId, const std::vector<std::string>& argv) {
  const auto e = entry(projectId);
  std::string sessionId;
  {
    std::lock_guard g(e->mu);
    if (e->rec.status != ProjectStatus::Running || !e->rec.session) {
      fail(ErrorCode::NoActiveSession, projectId + " is " + std::string(to_string(e->rec.status)));
    }
    sessionId = e->rec.session->sessionId;
  }
  const auto before = scan_results(e->dir / "results");
  const auto rc = config_.runtime->exec(sessionId, argv, [&e](std::string_view line) {
    e->journal->append(EventKind::RunLog, std::string(line));
  });
  const auto after = scan_results(e->dir / "results");
  if (results_fingerprint(before) != results_fingerprint(after)) {
    std::string payload;
    for (const auto& r : after) payload += (payload.empty() ? "" : "\n") + r.relativePath;
    e->journal->append(EventKind::ResultsChanged, payload);
  }
  return rc;
}

PushReceipt Orchestrator::publish_image(const std::string& projectId, const std::string& registryUrl,
                                        const std::optional<std::string>& credentials) {
  const auto e = entry(projectId);
  std::lock_guard g(e->mu);
  if (!e->rec.imageRef || e->rec.status == ProjectStatus::Deleted) {
    fail(ErrorCode::InvalidState, "project has no built image");
  }
  auto receipt = config_.runtime->push_image(*e->rec.imageRef, registryUrl, credentials);
  e->rec.publishedImage = receipt.remoteReference;
  persist(*e);
  e->journal->append(EventKind::Upload, "image " + receipt.remoteReference);
  return receipt;
}

}  // namespace rrp
