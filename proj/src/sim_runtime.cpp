#include "rrp/sim_runtime.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

#include "rrp/archive.hpp"
#include "rrp/error.hpp"

namespace rrp {

using nlohmann::json;

void ResourceLimits::validate() const {
  if (!(cpuCores > 0.0)) fail(ErrorCode::ResourceDenied, "cpuCores must be positive");
  if (memoryBytes < 64 * kMiB) fail(ErrorCode::ResourceDenied, "memoryBytes must be at least 64 MiB");
}

std::string_view to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::Starting: return "Starting";
    case SessionStatus::Up: return "Up";
    case SessionStatus::Stopped: return "Stopped";
    case SessionStatus::Failed: return "Failed";
  }
  return "?";
}

// ---- OCI layout ------------------------------------------------------------

namespace {

constexpr std::string_view kManifestType = "application/vnd.oci.image.manifest.v1+json";
constexpr std::string_view kConfigType = "application/vnd.oci.image.config.v1+json";
constexpr std::string_view kLayerType = "application/vnd.oci.image.layer.v1.tar";

json descriptor(std::string_view mediaType, std::string_view blob) {
  return {{"mediaType", mediaType}, {"digest", "sha256:" + sha256_hex(blob)}, {"size", blob.size()}};
}

}  // namespace

std::string make_oci_archive(const ImageRef& ref, std::string_view recipe) {
  const auto layer = archive::write_tar({{.path = "rrp/recipe", .data = std::string(recipe)}});
  const json config = {
      {"architecture", "amd64"},
      {"os", "linux"},
      {"config", {{"Labels", {{"org.rrp.recipe-digest", sha256_hex(recipe)}}}}},
      {"rootfs", {{"type", "layers"}, {"diff_ids", {"sha256:" + sha256_hex(layer)}}}},
      {"rrp", {{"recipe", recipe}}},
  };
  const auto configBlob = config.dump();
  const json manifest = {
      {"schemaVersion", 2},
      {"mediaType", kManifestType},
      {"config", descriptor(kConfigType, configBlob)},
      {"layers", {descriptor(kLayerType, layer)}},
  };
  const auto manifestBlob = manifest.dump();
  auto manifestDesc = descriptor(kManifestType, manifestBlob);
  manifestDesc["annotations"] = {{"org.opencontainers.image.ref.name", ref.str()},
                                 {"io.containerd.image.name", ref.str()}};
  const json index = {{"schemaVersion", 2}, {"manifests", {manifestDesc}}};

  std::vector<archive::TarEntry> entries;
  entries.push_back({.path = "oci-layout", .data = R"({"imageLayoutVersion":"1.0.0"})"});
  entries.push_back({.path = "index.json", .data = index.dump()});
  std::vector<std::string> blobs{configBlob, manifestBlob, layer};
  std::sort(blobs.begin(), blobs.end(), [](const auto& a, const auto& b) { return sha256_hex(a) < sha256_hex(b); });
  for (auto& blob : blobs) entries.push_back({.path = "blobs/sha256/" + sha256_hex(blob), .data = std::move(blob)});
  return archive::write_tar(entries);
}

OciContents read_oci_archive(std::string_view bytes) {
  const auto entries = archive::read_tar(bytes);
  std::map<std::string, std::string> files;
  for (const auto& e : entries) {
    if (!e.directory) files[e.path] = e.data;
  }
  if (!files.contains("oci-layout") || !files.contains("index.json")) {
    fail(ErrorCode::CorruptArchive, "not an OCI image layout (oci-layout/index.json missing)");
  }
  auto blob = [&](const json& desc) -> const std::string& {
    const auto digest = desc.at("digest").get<std::string>();
    if (!starts_with(digest, "sha256:")) fail(ErrorCode::CorruptArchive, "unsupported digest " + digest);
    const auto it = files.find("blobs/sha256/" + digest.substr(7));
    if (it == files.end()) fail(ErrorCode::CorruptArchive, "missing blob " + digest);
    if ("sha256:" + sha256_hex(it->second) != digest) fail(ErrorCode::CorruptArchive, "blob digest mismatch " + digest);
    return it->second;
  };
  try {
    const auto index = json::parse(files["index.json"]);
    const auto& manifests = index.at("manifests");
    if (manifests.empty()) fail(ErrorCode::CorruptArchive, "index.json lists no manifests");
    const auto& desc = manifests.at(0);
    const auto manifest = json::parse(blob(desc));
    const auto config = json::parse(blob(manifest.at("config")));
    for (const auto& layer : manifest.at("layers")) blob(layer);
    OciContents out;
    out.ref = ImageRef::parse(desc.at("annotations").at("org.opencontainers.image.ref.name").get<std::string>());
    out.recipe = config.at("rrp").at("recipe").get<std::string>();
    if (config.at("config").at("Labels").at("org.rrp.recipe-digest").get<std::string>() != sha256_hex(out.recipe)) {
      fail(ErrorCode::CorruptArchive, "recipe digest label mismatch");
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptArchive, std::string("malformed OCI metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptArchive) throw;
    fail(ErrorCode::CorruptArchive, e.what());
  }
}

// ---- registry --------------------------------------------------------------

void SimRegistry::put(const std::string& remoteReference, std::string archive) {
  std::lock_guard lock(mu_);
  images_[remoteReference] = std::move(archive);
}

std::optional<std::string> SimRegistry::get(const std::string& remoteReference) const {
  std::lock_guard lock(mu_);
  const auto it = images_.find(remoteReference);
  if (it == images_.end()) return std::nullopt;
  return it->second;
}

// ---- session filesystem ----------------------------------------------------

namespace {

/// Normalized absolute container path, or AccessDenied.
std::string normalize_container_path(const std::string& path) {
  if (path.empty() || path.front() != '/') fail(ErrorCode::AccessDenied, "container path must be absolute: " + path);
  const auto rel = confine_relative(path.substr(1));
  if (!rel) {
    if (trim(path) == "/") return "/";
    fail(ErrorCode::AccessDenied, "container path escapes the root: " + path);
  }
  return "/" + *rel;
}

bool under(const std::string& path, const std::string& dir) {
  if (dir == "/") return true;
  return path == dir || starts_with(path, dir + "/");
}

}  // namespace

class SimRuntime::SessionFs final : public SimSessionFs {
 public:
  explicit SessionFs(Session& session) : session_(session) {}

  std::string read(const std::string& containerPath) override {
    const auto path = normalize_container_path(containerPath);
    if (const auto* m = mount_for(path)) {
      const auto host = host_path(*m, path);
      std::error_code ec;
      if (!fs::is_regular_file(host, ec)) fail(ErrorCode::UnreadableFile, "no such file: " + path);
      return rrp::read_file(host);
    }
    const auto it = session_.overlay.find(path);
    if (it == session_.overlay.end()) fail(ErrorCode::UnreadableFile, "no such file: " + path);
    return it->second;
  }

  void write(const std::string& containerPath, std::string_view bytes) override {
    const auto path = normalize_container_path(containerPath);
    if (const auto* m = mount_for(path)) {
      if (m->readOnly) fail(ErrorCode::AccessDenied, "read-only mount: " + path);
      rrp::write_file(host_path(*m, path), bytes);
      return;
    }
    // The dataset area holds only read-only mounts; nothing may be added beside them.
    if (under(path, "/openbis")) fail(ErrorCode::AccessDenied, "read-only dataset area: " + path);
    session_.overlay[path] = std::string(bytes);
  }

  std::vector<std::string> list(const std::string& containerDir) override {
    const auto dir = normalize_container_path(containerDir);
    std::set<std::string> out;
    for (const auto& m : session_.request.mounts) {
      if (!under(m.containerPath, dir) && !under(dir, m.containerPath)) continue;
      std::error_code ec;
      if (!fs::is_directory(m.hostPath, ec)) continue;
      for (auto it = fs::recursive_directory_iterator(m.hostPath, ec); it != fs::recursive_directory_iterator();
           it.increment(ec)) {
        if (it->is_symlink() || !it->is_regular_file()) continue;
        const auto cpath = m.containerPath + "/" + fs::relative(it->path(), m.hostPath).generic_string();
        // Skip paths shadowed by a more specific mount.
        if (mount_for(cpath) != &m) continue;
        if (under(cpath, dir)) out.insert(cpath);
      }
    }
    for (const auto& [path, _] : session_.overlay) {
      if (under(path, dir) && mount_for(path) == nullptr) out.insert(path);
    }
    return {out.begin(), out.end()};
  }

 private:
  const MountSpec* mount_for(const std::string& path) const {
    const MountSpec* best = nullptr;
    for (const auto& m : session_.request.mounts) {
      if (under(path, m.containerPath) && (best == nullptr || m.containerPath.size() > best->containerPath.size())) {
        best = &m;
      }
    }
    return best;
  }

  static fs::path host_path(const MountSpec& m, const std::string& path) {
    if (path == m.containerPath) return m.hostPath;
    return m.hostPath / path.substr(m.containerPath.size() + 1);
  }

  Session& session_;
};

// ---- runtime ---------------------------------------------------------------

SimRuntime::SimRuntime() : SimRuntime(Options{}) {}

SimRuntime::SimRuntime(Options options) : options_(std::move(options)), nextPort_(options_.firstPort) {}

void SimRuntime::set_faults(const SimFaults& faults) {
  std::lock_guard lock(mu_);
  faults_ = faults;
}

namespace {
std::string join_argv(const std::vector<std::string>& argv) {
  std::string out;
  for (const auto& a : argv) out += (out.empty() ? "" : " ") + a;
  return out;
}
}  // namespace

void SimRuntime::register_program(const std::vector<std::string>& argv, SimProgram program) {
  std::lock_guard lock(mu_);
  programs_[join_argv(argv)] = std::move(program);
}

std::vector<SimLedgerEntry> SimRuntime::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

std::size_t SimRuntime::build_count() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(ledger_.begin(), ledger_.end(), [](const SimLedgerEntry& e) { return e.op == "build"; }));
}

std::vector<std::pair<ImageRef, std::string>> SimRuntime::pushes() const {
  std::lock_guard lock(mu_);
  return pushes_;
}

std::vector<SessionStatus> SimRuntime::status_trace(const std::string& sessionId) const {
  std::lock_guard lock(mu_);
  if (const auto it = sessions_.find(sessionId); it != sessions_.end()) return it->second.trace;
  if (const auto it = finishedTraces_.find(sessionId); it != finishedTraces_.end()) return it->second;
  fail(ErrorCode::UnknownSession, sessionId);
}

ResourceLimits SimRuntime::recorded_limits(const std::string& sessionId) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(sessionId);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, sessionId);
  return it->second.request.limits;
}

std::vector<MountSpec> SimRuntime::recorded_mounts(const std::string& sessionId) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(sessionId);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, sessionId);
  return it->second.request.mounts;
}

std::size_t SimRuntime::live_sessions() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

void SimRuntime::record(std::string op, std::string detail) { ledger_.push_back({std::move(op), std::move(detail)}); }

BuildResult SimRuntime::build_image(std::string_view recipe, const fs::path& context, const ImageRef& ref,
                                    const LineSink& logSink) {
  std::promise<BuildResult> promise;
  std::optional<std::size_t> failAt;
  {
    std::unique_lock lock(mu_);
    if (const auto it = inflight_.find(ref); it != inflight_.end()) {
      auto fut = it->second;
      lock.unlock();
      return fut.get();
    }
    inflight_[ref] = promise.get_future().share();
    failAt = faults_.failAtStep;
  }

  auto finish = [&](std::exception_ptr error, BuildResult result) {
    std::lock_guard lock(mu_);
    inflight_.erase(ref);
    if (error) {
      promise.set_exception(error);
    } else {
      images_[ref] = {std::string(recipe), *result.imageId};
      record("build", ref.str());
      promise.set_value(result);
    }
  };

  try {
    std::error_code ec;
    if (!fs::is_directory(context, ec)) fail(ErrorCode::BuildFailed, "build context missing: " + context.string());
    if (recipe_spec_digest(recipe).empty()) fail(ErrorCode::BuildFailed, "recipe lacks the rrp-spec-digest header");

    std::vector<std::string> steps;
    for (const auto& line : split_lines(recipe)) {
      if (starts_with(line, "# step ")) steps.push_back(line.substr(2));
    }
    std::vector<std::string> emitted;
    if (failAt && *failAt == 0) throw BuildError("injected failure before step 1", emitted);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      std::ostringstream line;
      line << "Step " << i + 1 << "/" << steps.size() << " : " << steps[i].substr(steps[i].find(':') + 2);
      emitted.push_back(line.str());
      if (logSink) logSink(emitted.back());
      if (failAt && emitted.size() == *failAt) {
        throw BuildError("injected failure at step " + std::to_string(i + 1), emitted);
      }
    }
    BuildResult result{"sha256:" + sha256_hex(recipe), emitted.size(), true};
    finish(nullptr, result);
    return result;
  } catch (const BuildError&) {
    finish(std::current_exception(), {});
    throw;
  } catch (const Error& e) {
    BuildError wrapped(e.detail(), {});
    finish(std::make_exception_ptr(wrapped), {});
    throw wrapped;
  }
}

bool SimRuntime::has_image(const ImageRef& ref) {
  std::lock_guard lock(mu_);
  return images_.contains(ref);
}

std::string SimRuntime::image_id(const ImageRef& ref) {
  std::lock_guard lock(mu_);
  const auto it = images_.find(ref);
  if (it == images_.end()) fail(ErrorCode::ImageNotFound, ref.str());
  return it->second.id;
}

SessionHandle SimRuntime::create_session(const SessionRequest& request) {
  std::lock_guard lock(mu_);
  if (!images_.contains(request.image)) fail(ErrorCode::ImageNotFound, request.image.str());
  request.limits.validate();
  if (faults_.startFault) fail(ErrorCode::StartFailed, "injected start fault");
  for (const auto& m : request.mounts) {
    std::error_code ec;
    if (m.containerPath.empty() || m.containerPath.front() != '/') {
      fail(ErrorCode::StartFailed, "mount target must be absolute: " + m.containerPath);
    }
    if (!fs::exists(m.hostPath, ec)) fail(ErrorCode::StartFailed, "mount source missing: " + m.hostPath.string());
  }
  Session s;
  s.request = request;
  for (auto& m : s.request.mounts) m.containerPath = normalize_container_path(m.containerPath);
  s.handle.sessionId = "sim-" + std::to_string(nextSession_++);
  s.handle.imageRef = request.image;
  s.handle.internalEndpoint = "127.0.0.1:" + std::to_string(nextPort_++);
  s.trace = {SessionStatus::Starting, SessionStatus::Up};
  s.handle.status = SessionStatus::Up;
  record("create", s.handle.sessionId + " " + request.image.str());
  auto handle = s.handle;
  sessions_.emplace(handle.sessionId, std::move(s));
  return handle;
}

SimRuntime::Session& SimRuntime::live_session(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, id);
  return it->second;
}

SessionHandle SimRuntime::stop_session(const std::string& sessionId) {
  std::lock_guard lock(mu_);
  auto& s = live_session(sessionId);
  if (s.handle.status != SessionStatus::Stopped) {
    s.handle.status = SessionStatus::Stopped;
    s.trace.push_back(SessionStatus::Stopped);
    record("stop", sessionId);
  }
  return s.handle;
}

void SimRuntime::destroy_session(const std::string& sessionId) {
  std::lock_guard lock(mu_);
  auto& s = live_session(sessionId);
  finishedTraces_[sessionId] = s.trace;
  sessions_.erase(sessionId);
  record("destroy", sessionId);
}

SessionHandle SimRuntime::session(const std::string& sessionId) {
  std::lock_guard lock(mu_);
  return live_session(sessionId).handle;
}

std::string SimRuntime::export_image(const ImageRef& ref) {
  std::lock_guard lock(mu_);
  const auto it = images_.find(ref);
  if (it == images_.end()) fail(ErrorCode::ImageNotFound, ref.str());
  record("export", ref.str());
  return make_oci_archive(ref, it->second.recipe);
}

ImageRef SimRuntime::import_image(std::string_view archive) {
  {
    std::lock_guard lock(mu_);
    if (faults_.importFault) fail(ErrorCode::CorruptArchive, "injected import fault");
  }
  const auto contents = read_oci_archive(archive);
  std::lock_guard lock(mu_);
  images_[contents.ref] = {contents.recipe, "sha256:" + sha256_hex(contents.recipe)};
  record("import", contents.ref.str());
  return contents.ref;
}

namespace {
std::string registry_host(std::string url) {
  for (std::string_view scheme : {"https://", "http://"}) {
    if (starts_with(url, scheme)) url.erase(0, scheme.size());
  }
  while (!url.empty() && url.back() == '/') url.pop_back();
  return url;
}
}  // namespace

PushReceipt SimRuntime::push_image(const ImageRef& ref, const std::string& registryUrl,
                                   const std::optional<std::string>& credentials) {
  std::string archive;
  {
    std::lock_guard lock(mu_);
    if (faults_.authFault) fail(ErrorCode::AuthFailed, "registry rejected credentials");
    const auto& reg = options_.registry;
    if (!reg || (!reg->reachable.empty() && !reg->reachable.contains(registryUrl))) {
      fail(ErrorCode::RegistryUnreachable, registryUrl);
    }
    if (reg->requiredCredentials && reg->requiredCredentials != credentials) {
      fail(ErrorCode::AuthFailed, "registry rejected credentials");
    }
    const auto it = images_.find(ref);
    if (it == images_.end()) fail(ErrorCode::ImageNotFound, ref.str());
    archive = make_oci_archive(ref, it->second.recipe);
  }
  PushReceipt receipt{registry_host(registryUrl) + "/" + ref.str(), registryUrl};
  options_.registry->put(receipt.remoteReference, std::move(archive));
  std::lock_guard lock(mu_);
  pushes_.emplace_back(ref, registryUrl);
  record("push", ref.str() + " " + registryUrl);
  return receipt;
}

ImageRef SimRuntime::pull_image(const std::string& remoteReference) {
  std::optional<std::string> archive;
  {
    std::lock_guard lock(mu_);
    if (faults_.pullFault) fail(ErrorCode::ImagePullFailed, "injected pull fault: " + remoteReference);
    if (options_.registry) archive = options_.registry->get(remoteReference);
  }
  if (!archive) fail(ErrorCode::ImagePullFailed, "not found in registry: " + remoteReference);
  try {
    const auto ref = import_image(*archive);
    std::lock_guard lock(mu_);
    record("pull", remoteReference);
    return ref;
  } catch (const Error& e) {
    fail(ErrorCode::ImagePullFailed, e.what());
  }
}

int SimRuntime::exec(const std::string& sessionId, const std::vector<std::string>& argv, const LineSink& sink) {
  SimProgram program;
  {
    std::lock_guard lock(mu_);
    auto& s = live_session(sessionId);
    if (s.handle.status != SessionStatus::Up) fail(ErrorCode::ExecFailed, "session not running: " + sessionId);
    record("exec", sessionId + " " + join_argv(argv));
    const auto it = programs_.find(join_argv(argv));
    if (it != programs_.end()) program = it->second;
  }
  if (!program) {
    if (sink) sink("sim: command not found: " + join_argv(argv));
    return 127;
  }
  // Programs run without the adapter lock; the session must not be
  // destroyed concurrently (callers serialize per project).
  Session* s = nullptr;
  {
    std::lock_guard lock(mu_);
    s = &live_session(sessionId);
  }
  SessionFs fs(*s);
  return program(fs, argv, sink);
}

void SimRuntime::write_file(const std::string& sessionId, const std::string& containerPath, std::string_view bytes) {
  std::lock_guard lock(mu_);
  auto& s = live_session(sessionId);
  if (s.handle.status != SessionStatus::Up) fail(ErrorCode::AccessDenied, "session not running: " + sessionId);
  SessionFs(s).write(containerPath, bytes);
}

std::string SimRuntime::read_file(const std::string& sessionId, const std::string& containerPath) {
  std::lock_guard lock(mu_);
  auto& s = live_session(sessionId);
  return SessionFs(s).read(containerPath);
}

ProxyResponse SimRuntime::forward(const SessionHandle& session, const ProxyRequest& request) {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(session.sessionId);
  if (it == sessions_.end() || it->second.handle.status != SessionStatus::Up) {
    return {502, "text/plain", "session not running\n", {}};
  }
  ProxyResponse res;
  res.status = 200;
  res.contentType = "text/html; charset=utf-8";
  res.body = "<!doctype html>\n<title>rrp session</title>\n<p>sim session " + session.sessionId + " serving " +
             session.imageRef.str() + " at " + request.path + "</p>\n";
  return res;
}

}  // namespace rrp
