#include "rrp/bundler.hpp"

#include <httplib.h>

#include <algorithm>
#include <map>
#include <set>

#include "rrp/archive.hpp"
#include "rrp/error.hpp"

namespace rrp {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kManifestName = "manifest.json";
constexpr std::string_view kChecksumsName = "checksums.txt";
constexpr std::string_view kImageName = "image.tar";

std::string_view kind_name(BundleKind k) { return k == BundleKind::Bundle ? "Bundle" : "Script"; }

/// POSIX single-quoting.
std::string sh_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

std::string bat_path(std::string_view s) {
  std::string out(s);
  std::replace(out.begin(), out.end(), '/', '\\');
  return out;
}

std::string crlf(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '\n') out += '\r';
    out += c;
  }
  return out;
}

std::string url_encode_path(std::string_view path) {
  std::string out;
  for (unsigned char c : path) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

struct ScriptFile {
  std::string url;
  std::string dest;  // bundle-relative
  std::string sha256;
};

std::string start_sh(const BundleManifest& m, const std::vector<ScriptFile>& downloads) {
  const bool bundle = m.kind == BundleKind::Bundle;
  std::string s =
      "#!/bin/sh\n"
      "# Recreates this project's computational environment and data locally.\n"
      "# Needs only a container runtime CLI (docker or podman) and the files next to this script.\n"
      "set -eu\n"
      "cd \"$(dirname \"$0\")\"\n"
      "RUNTIME=\"${RRP_CONTAINER_CLI:-docker}\"\n"
      "PORT=\"${RRP_PORT:-8888}\"\n"
      "IMAGE=" + sh_quote(m.imageRef) + "\n\n";
  if (bundle) {
    s += "if command -v sha256sum >/dev/null 2>&1; then\n"
         "  sha256sum -c --quiet checksums.txt\n"
         "fi\n"
         "\"$RUNTIME\" load -i image.tar\n";
  } else {
    s += "fetch() {\n"
         "  mkdir -p \"$(dirname \"$2\")\"\n"
         "  curl -fsSL \"$1\" -o \"$2\"\n"
         "  echo \"$3  $2\" | sha256sum -c --quiet -\n"
         "}\n";
    for (const auto& d : downloads) s += "fetch " + sh_quote(d.url) + " " + sh_quote(d.dest) + " " + d.sha256 + "\n";
    s += "\"$RUNTIME\" pull " + sh_quote(m.image) + "\n";
    s += "IMAGE=" + sh_quote(m.image) + "\n";
  }
  s += "[ -d data ] && chmod -R a-w data\n"
       "mkdir -p results\n"
       "echo \"Open http://localhost:$PORT/ once the session is up.\"\n"
       "exec \"$RUNTIME\" run --rm -p \"127.0.0.1:$PORT:8888\" \\\n";
  if (bundle) s += "  -v \"$PWD/project:/project\" \\\n";
  for (const auto& d : m.datasets) {
    s += "  -v \"$PWD/data/" + d.folder + ":/openbis/" + d.folder + ":ro\" \\\n";
  }
  s += "  -v \"$PWD/results:/results\" \\\n"
       "  -e RRP_BASE_URL=/ \\\n"
       "  \"$IMAGE\"\n";
  return s;
}

std::string start_bat(const BundleManifest& m, const std::vector<ScriptFile>& downloads) {
  const bool bundle = m.kind == BundleKind::Bundle;
  const auto image = bundle ? m.imageRef : m.image;
  std::string s =
      "@echo off\n"
      "rem Recreates this project's computational environment and data locally.\n"
      "setlocal\n"
      "cd /d \"%~dp0\"\n"
      "if \"%RRP_CONTAINER_CLI%\"==\"\" (set RUNTIME=docker) else (set RUNTIME=%RRP_CONTAINER_CLI%)\n"
      "if \"%RRP_PORT%\"==\"\" (set PORT=8888) else (set PORT=%RRP_PORT%)\n";
  if (bundle) {
    s += "%RUNTIME% load -i image.tar || exit /b 1\n";
  } else {
    for (const auto& d : downloads) {
      s += "curl -fsSL --create-dirs -o \"" + bat_path(d.dest) + "\" \"" + d.url + "\" || exit /b 1\n";
    }
    s += "%RUNTIME% pull " + image + " || exit /b 1\n";
  }
  s += "if not exist results mkdir results\n"
       "echo Open http://localhost:%PORT%/ once the session is up.\n"
       "%RUNTIME% run --rm -p 127.0.0.1:%PORT%:8888";
  if (bundle) s += " -v \"%CD%\\project:/project\"";
  for (const auto& d : m.datasets) s += " -v \"%CD%\\data\\" + d.folder + ":/openbis/" + d.folder + ":ro\"";
  s += " -v \"%CD%\\results:/results\" -e RRP_BASE_URL=/ " + image + "\n";
  return crlf(s);
}

struct OpenedArchive {
  std::vector<archive::TarEntry> entries;
  std::map<std::string, const archive::TarEntry*> files;
};

OpenedArchive open_archive(std::string_view bytes) {
  OpenedArchive a;
  a.entries = archive::read_tar(archive::gzip_decompress(bytes));
  for (const auto& e : a.entries) {
    if (!e.directory) a.files[e.path] = &e;
  }
  return a;
}

BundleManifest manifest_of(const OpenedArchive& a) {
  const auto it = a.files.find(std::string(kManifestName));
  if (it == a.files.end()) fail(ErrorCode::CorruptArchive, "archive has no manifest.json");
  const auto j = json::parse(it->second->data, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::CorruptArchive, "manifest.json is not valid JSON");
  return manifest_from_json(j);
}

std::map<std::string, std::string> parse_checksums(std::string_view text) {
  std::map<std::string, std::string> out;
  for (const auto& line : split_lines(text)) {
    if (line.empty()) continue;
    if (line.size() < 67 || line.substr(64, 2) != "  ") fail(ErrorCode::CorruptArchive, "checksums.txt: malformed line");
    const auto hash = line.substr(0, 64);
    if (!std::all_of(hash.begin(), hash.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); })) {
      fail(ErrorCode::CorruptArchive, "checksums.txt: malformed line");
    }
    out[line.substr(66)] = hash;
  }
  return out;
}

std::string dataset_digest(const std::vector<std::pair<std::string, std::string>>& files) {
  return tree_digest(files);
}

SessionHandle start_playback(RuntimeAdapter& runtime, const ImageRef& image, const fs::path& workDir,
                             const BundleManifest& m, bool mountProject, const ResourceLimits& limits) {
  SessionRequest req;
  req.image = image;
  req.limits = limits;
  if (mountProject) req.mounts.push_back({workDir / "project", std::string(kProjectDir), false});
  for (const auto& d : m.datasets) req.mounts.push_back({workDir / "data" / d.folder, "/openbis/" + d.folder, true});
  req.mounts.push_back({workDir / "results", "/results", false});
  req.env["RRP_BASE_URL"] = "/";
  try {
    return runtime.create_session(req);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::StartFailed || e.code() == ErrorCode::ResourceDenied) throw;
    fail(ErrorCode::StartFailed, e.what());
  }
}

std::string local_url(const SessionHandle& h) { return "http://" + h.internalEndpoint + "/"; }

void write_output(const fs::path& output, std::string_view bytes) {
  try {
    write_file(output, bytes);
  } catch (const Error& e) {
    fail(ErrorCode::ExportFailed, e.what());
  }
}

}  // namespace

// ---- manifest --------------------------------------------------------------

ordered_json manifest_to_json(const BundleManifest& m) {
  ordered_json datasets = ordered_json::array();
  for (const auto& d : m.datasets) {
    ordered_json jd;
    jd["permId"] = d.permId;
    jd["folder"] = d.folder;
    jd["byteSize"] = d.byteSize;
    jd["contentHash"] = d.contentHash;
    jd["source"] = d.source;
    if (d.url) jd["url"] = *d.url;
    datasets.push_back(std::move(jd));
  }
  ordered_json j;
  j["bundleVersion"] = m.bundleVersion;
  j["kind"] = kind_name(m.kind);
  j["projectName"] = m.projectName;
  j["commitId"] = m.commitId;
  j["specDigest"] = m.specDigest;
  j["imageRef"] = m.imageRef;
  j["image"] = m.image;
  j["datasets"] = std::move(datasets);
  j["createdAt"] = m.createdAt;
  j["generator"] = m.generator;
  return j;
}

BundleManifest manifest_from_json(const json& j) {
  try {
    BundleManifest m;
    j.at("bundleVersion").get_to(m.bundleVersion);
    if (m.bundleVersion != kBundleVersion) {
      fail(ErrorCode::CorruptArchive, "unsupported bundleVersion " + std::to_string(m.bundleVersion));
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "Bundle" && kind != "Script") fail(ErrorCode::CorruptArchive, "unknown bundle kind " + kind);
    m.kind = kind == "Bundle" ? BundleKind::Bundle : BundleKind::Script;
    j.at("projectName").get_to(m.projectName);
    j.at("commitId").get_to(m.commitId);
    j.at("specDigest").get_to(m.specDigest);
    j.at("imageRef").get_to(m.imageRef);
    j.at("image").get_to(m.image);
    j.at("createdAt").get_to(m.createdAt);
    j.at("generator").get_to(m.generator);
    for (const auto& jd : j.at("datasets")) {
      BundleDataset d;
      jd.at("permId").get_to(d.permId);
      jd.at("folder").get_to(d.folder);
      jd.at("byteSize").get_to(d.byteSize);
      jd.at("contentHash").get_to(d.contentHash);
      jd.at("source").get_to(d.source);
      if (jd.contains("url")) d.url = jd.at("url").get<std::string>();
      if (!is_valid_folder_name(d.folder)) fail(ErrorCode::CorruptArchive, "invalid dataset folder " + d.folder);
      m.datasets.push_back(std::move(d));
    }
    for (const auto& d : m.datasets) {
      const bool consistent = m.kind == BundleKind::Bundle ? d.source == "embedded" && !d.url
                                                           : d.source == "url" && d.url && !d.url->empty();
      if (!consistent) fail(ErrorCode::CorruptArchive, "dataset " + d.permId + " has an inconsistent source");
    }
    if (m.kind == BundleKind::Bundle && m.image != kImageName) {
      fail(ErrorCode::CorruptArchive, "bundle image must be embedded as image.tar");
    }
    if (m.kind == BundleKind::Script && m.image.empty()) fail(ErrorCode::CorruptArchive, "script has no image reference");
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptArchive, std::string("manifest.json: ") + e.what());
  }
}

// ---- export ----------------------------------------------------------------

ExportResult export_player_bundle(Orchestrator& orchestrator, const std::string& projectId, const fs::path& output,
                                  std::uint64_t warnThreshold) {
  const auto rec = orchestrator.prepare_snapshot(projectId, {ProjectStatus::Ready, ProjectStatus::Stopped});
  ExportResult result;
  auto& m = result.manifest;
  m.kind = BundleKind::Bundle;
  m.projectName = rec.name;
  m.commitId = rec.spec.tree.commitId;
  m.specDigest = rec.spec.specDigest;
  m.imageRef = rec.imageRef->str();
  m.image = std::string(kImageName);
  m.createdAt = iso8601(Clock::now());

  std::vector<archive::TarEntry> payload;
  try {
    payload.push_back({.path = std::string(kImageName), .data = orchestrator.runtime().export_image(*rec.imageRef)});
    payload.push_back({.path = "project", .directory = true});
    const auto code = run_process({"git", "archive", "--format=tar", m.commitId}, {.cwd = rec.workspace / "project"});
    if (code.exitCode != 0) fail(ErrorCode::ExportFailed, "git archive failed: " + code.err);
    for (auto& e : archive::read_tar(code.out)) {
      e.path = "project/" + e.path;
      if (!e.directory) payload.push_back(std::move(e));
    }
    payload.push_back({.path = "data", .directory = true});
    std::uint64_t embedded = 0;
    for (const auto& b : rec.spec.datasets) {
      std::vector<archive::TarEntry> files;
      archive::append_tree(files, rec.workspace / "openbis" / b.folder, "data/" + b.folder);
      BundleDataset d{b.permId, b.folder, 0, "", "embedded", std::nullopt};
      std::vector<std::pair<std::string, std::string>> hashes;
      for (auto& f : files) {
        d.byteSize += f.data.size();
        hashes.emplace_back(f.path.substr(("data/" + b.folder + "/").size()), sha256_hex(f.data));
        f.mode = 0444;
        payload.push_back(std::move(f));
      }
      d.contentHash = dataset_digest(hashes);
      embedded += d.byteSize;
      m.datasets.push_back(std::move(d));
    }
    if (embedded > warnThreshold) {
      result.warnings.push_back("embedded data is " + std::to_string(embedded) +
                                " bytes; consider exporting a player script instead");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ExportFailed) throw;
    fail(ErrorCode::ExportFailed, e.what());
  }

  std::vector<archive::TarEntry> entries;
  entries.push_back({.path = std::string(kManifestName), .data = manifest_to_json(m).dump(2) + "\n"});
  for (auto& e : payload) entries.push_back(std::move(e));
  const archive::TarEntry sh{.path = "start.sh", .data = start_sh(m, {}), .mode = 0755};
  const archive::TarEntry bat{.path = "start.bat", .data = start_bat(m, {})};

  std::string checksums;
  for (const auto& e : entries) {
    if (!e.directory) checksums += sha256_hex(e.data) + "  " + e.path + "\n";
  }
  for (const auto* e : {&sh, &bat}) checksums += sha256_hex(e->data) + "  " + e->path + "\n";
  entries.push_back({.path = std::string(kChecksumsName), .data = checksums});
  entries.push_back(sh);
  entries.push_back(bat);

  const auto bytes = archive::gzip_compress(archive::write_tar(entries));
  write_output(output, bytes);
  result.file = output;
  result.bytes = bytes.size();
  return result;
}

ExportResult export_player_script(Orchestrator& orchestrator, const std::string& projectId, const fs::path& output) {
  const auto rec = orchestrator.prepare_snapshot(projectId, {ProjectStatus::Ready, ProjectStatus::Stopped});
  ExportResult result;
  auto& m = result.manifest;
  m.kind = BundleKind::Script;
  m.projectName = rec.name;
  m.commitId = rec.spec.tree.commitId;
  m.specDigest = rec.spec.specDigest;
  m.imageRef = rec.imageRef->str();
  m.createdAt = iso8601(Clock::now());

  auto& rdms = orchestrator.rdms();
  std::string token;
  try {
    token = orchestrator.rdms_token();
  } catch (const Error& e) {
    fail(ErrorCode::ExportFailed, e.what());
  }
  std::vector<std::string> unpublished;
  std::vector<ScriptFile> downloads;
  for (const auto& b : rec.spec.datasets) {
    const auto doi = rdms.find_publication(token, b.permId);
    if (!doi) {
      unpublished.push_back(b.permId);
      continue;
    }
    const auto desc = rdms.resolve_dataset(token, b.permId);
    std::vector<std::pair<std::string, std::string>> hashes;
    for (const auto& f : desc.files) {
      hashes.emplace_back(f.relativePath, f.contentHash);
      downloads.push_back({doi->resolvedUrl + "/files/" + url_encode_path(f.relativePath),
                           "data/" + b.folder + "/" + f.relativePath, f.contentHash});
    }
    m.datasets.push_back({b.permId, b.folder, desc.totalBytes, dataset_digest(hashes), "url", doi->resolvedUrl});
  }
  if (!unpublished.empty()) {
    std::string list;
    for (const auto& p : unpublished) list += (list.empty() ? "" : ", ") + p;
    fail(ErrorCode::UnpublishedDatasets, "publish these datasets first: " + list);
  }
  if (!rec.publishedImage) fail(ErrorCode::ImageNotPublished, "push the project image to a registry first");
  m.image = *rec.publishedImage;

  const std::vector<archive::TarEntry> entries{
      {.path = std::string(kManifestName), .data = manifest_to_json(m).dump(2) + "\n"},
      {.path = "start.sh", .data = start_sh(m, downloads), .mode = 0755},
      {.path = "start.bat", .data = start_bat(m, downloads)},
  };
  const auto bytes = archive::gzip_compress(archive::write_tar(entries));
  write_output(output, bytes);
  result.file = output;
  result.bytes = bytes.size();
  return result;
}

// ---- verify ----------------------------------------------------------------

VerificationReport verify_bundle(const fs::path& archivePath) { return verify_bundle_bytes(read_file(archivePath)); }

VerificationReport verify_bundle_bytes(std::string_view archiveBytes) {
  const auto a = open_archive(archiveBytes);
  const auto m = manifest_of(a);
  VerificationReport report;
  auto failure = [&](std::string path, std::string expected, std::string actual) {
    report.failures.push_back({std::move(path), std::move(expected), std::move(actual)});
  };

  if (m.kind == BundleKind::Script) {
    for (const auto* name : {"start.sh", "start.bat"}) {
      if (!a.files.contains(name)) failure(name, "present", "missing");
    }
    report.ok = report.failures.empty();
    return report;
  }

  const auto cs = a.files.find(std::string(kChecksumsName));
  if (cs == a.files.end()) fail(ErrorCode::CorruptArchive, "bundle has no checksums.txt");
  const auto expected = parse_checksums(cs->second->data);

  for (const auto& [path, hash] : expected) {
    const auto it = a.files.find(path);
    if (it == a.files.end()) {
      failure(path, hash, "missing");
      continue;
    }
    const auto actual = sha256_hex(it->second->data);
    if (actual != hash) failure(path, hash, actual);
  }
  for (const auto& [path, entry] : a.files) {
    if (path != kChecksumsName && !expected.contains(path)) failure(path, "unlisted", sha256_hex(entry->data));
  }
  for (const std::string_view required : {kManifestName, kImageName, std::string_view("start.sh"), std::string_view("start.bat")}) {
    if (!a.files.contains(std::string(required)) && !expected.contains(std::string(required))) {
      failure(std::string(required), "present", "missing");
    }
  }
  // Dataset digests are checked against the listed hashes, so a damaged
  // data file is reported once, under its own path.
  for (const auto& d : m.datasets) {
    const auto prefix = "data/" + d.folder + "/";
    std::vector<std::pair<std::string, std::string>> hashes;
    for (const auto& [path, hash] : expected) {
      if (starts_with(path, prefix)) hashes.emplace_back(path.substr(prefix.size()), hash);
    }
    const auto digest = dataset_digest(hashes);
    if (digest != d.contentHash) failure("manifest.json#datasets/" + d.folder, d.contentHash, digest);
  }
  report.ok = report.failures.empty();
  return report;
}

BundleManifest read_bundle_manifest(const fs::path& archivePath) {
  return manifest_of(open_archive(read_file(archivePath)));
}

// ---- playback --------------------------------------------------------------

PlayResult play_bundle(const fs::path& archivePath, RuntimeAdapter& runtime, const fs::path& workDir,
                       const ResourceLimits& limits) {
  const auto bytes = read_file(archivePath);
  VerificationReport report;
  try {
    report = verify_bundle_bytes(bytes);
  } catch (const Error& e) {
    fail(ErrorCode::VerificationFailed, e.detail());
  }
  if (!report.ok) {
    std::string paths;
    for (const auto& f : report.failures) paths += (paths.empty() ? "" : ", ") + f.path;
    fail(ErrorCode::VerificationFailed, "integrity check failed for " + paths);
  }
  const auto a = open_archive(bytes);
  const auto m = manifest_of(a);
  if (m.kind != BundleKind::Bundle) fail(ErrorCode::InvalidArgument, "this is a player script; use play_script");

  ImageRef image;
  try {
    image = runtime.import_image(a.files.at(std::string(kImageName))->data);
  } catch (const Error& e) {
    fail(ErrorCode::ImportFailed, e.what());
  }

  std::vector<archive::TarEntry> project, data;
  for (const auto& e : a.entries) {
    if (starts_with(e.path, "project/")) project.push_back({e.path.substr(8), e.data, e.directory, e.mode});
    if (starts_with(e.path, "data/")) data.push_back({e.path.substr(5), e.data, e.directory, e.mode});
  }
  if (fs::exists(workDir / "data")) remove_tree(workDir / "data");
  archive::extract(project, workDir / "project");
  archive::extract(data, workDir / "data");
  for (const auto& d : m.datasets) fs::create_directories(workDir / "data" / d.folder);
  make_read_only(workDir / "data");
  fs::create_directories(workDir / "results");

  PlayResult out;
  out.session = start_playback(runtime, image, workDir, m, true, limits);
  out.localUrl = local_url(out.session);
  out.workDir = workDir;
  out.manifest = m;
  return out;
}

std::string HttpFetcher::fetch(const std::string& url) {
  const auto scheme = url.find("://");
  const auto pathStart = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const auto origin = pathStart == std::string::npos ? url : url.substr(0, pathStart);
  const auto path = pathStart == std::string::npos ? std::string("/") : url.substr(pathStart);
  httplib::Client cli(origin);
  cli.set_connection_timeout(5);
  cli.set_read_timeout(300);
  cli.set_follow_location(true);
  const auto res = cli.Get(path);
  if (!res) fail(ErrorCode::FetchFailed, url + ": " + httplib::to_string(res.error()));
  if (res->status != 200) fail(ErrorCode::FetchFailed, url + ": HTTP " + std::to_string(res->status));
  return res->body;
}

PlayResult play_script(const fs::path& scriptBundle, Fetcher& fetcher, RuntimeAdapter& runtime,
                       const fs::path& workDir, const ResourceLimits& limits) {
  OpenedArchive a;
  BundleManifest m;
  try {
    a = open_archive(read_file(scriptBundle));
    m = manifest_of(a);
  } catch (const Error& e) {
    fail(ErrorCode::VerificationFailed, e.detail());
  }
  if (m.kind != BundleKind::Script) fail(ErrorCode::InvalidArgument, "this is a player bundle; use play_bundle");

  // Everything is fetched and verified before anything touches the runtime.
  std::vector<std::pair<std::string, std::string>> staged;  // workDir-relative path, bytes
  for (const auto& d : m.datasets) {
    const auto descBytes = fetcher.fetch(*d.url);
    const auto j = json::parse(descBytes, nullptr, false);
    DatasetDescriptor desc;
    try {
      desc = j.get<DatasetDescriptor>();
    } catch (const json::exception&) {
      fail(ErrorCode::FetchFailed, *d.url + ": not a dataset descriptor");
    }
    std::vector<std::pair<std::string, std::string>> hashes;
    for (const auto& f : desc.files) {
      const auto rel = confine_relative(f.relativePath);
      if (!rel) fail(ErrorCode::ChecksumMismatch, *d.url + ": unsafe path " + f.relativePath);
      const auto url = *d.url + "/files/" + url_encode_path(*rel);
      auto bytes = fetcher.fetch(url);
      const auto actual = sha256_hex(bytes);
      if (actual != f.contentHash) {
        fail(ErrorCode::ChecksumMismatch, url + ": expected " + f.contentHash + ", got " + actual);
      }
      hashes.emplace_back(*rel, actual);
      staged.emplace_back("data/" + d.folder + "/" + *rel, std::move(bytes));
    }
    if (dataset_digest(hashes) != d.contentHash) {
      fail(ErrorCode::ChecksumMismatch, *d.url + ": dataset content differs from the exported manifest");
    }
  }
  const auto image = runtime.pull_image(m.image);

  if (fs::exists(workDir / "data")) remove_tree(workDir / "data");
  for (const auto& [rel, bytes] : staged) write_file(workDir / rel, bytes);
  for (const auto& d : m.datasets) fs::create_directories(workDir / "data" / d.folder);
  if (fs::exists(workDir / "data")) make_read_only(workDir / "data");
  fs::create_directories(workDir / "results");

  PlayResult out;
  out.session = start_playback(runtime, image, workDir, m, false, limits);
  out.localUrl = local_url(out.session);
  out.workDir = workDir;
  out.manifest = m;
  return out;
}

}  // namespace rrp
