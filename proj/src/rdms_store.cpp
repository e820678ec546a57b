#include <algorithm>
#include <charconv>
#include <ctime>
#include <fstream>
#include <set>

#include "rrp/error.hpp"
#include "rrp/rdms.hpp"

namespace rrp {

using nlohmann::json;

void to_json(json& j, const FileEntry& f) {
  j = json{{"relativePath", f.relativePath}, {"byteSize", f.byteSize}, {"contentHash", f.contentHash}};
}

void from_json(const json& j, FileEntry& f) {
  j.at("relativePath").get_to(f.relativePath);
  j.at("byteSize").get_to(f.byteSize);
  j.at("contentHash").get_to(f.contentHash);
}

void to_json(json& j, const DatasetDescriptor& d) {
  j = json{{"permId", d.permId}, {"files", d.files}, {"totalBytes", d.totalBytes}, {"metadata", d.metadata}};
}

void from_json(const json& j, DatasetDescriptor& d) {
  j.at("permId").get_to(d.permId);
  j.at("files").get_to(d.files);
  j.at("totalBytes").get_to(d.totalBytes);
  d.metadata = j.value("metadata", std::map<std::string, std::string>{});
}

void to_json(json& j, const DoiRecord& d) {
  j = json{{"doi", d.doi}, {"objectRef", d.objectRef}, {"resolvedUrl", d.resolvedUrl}};
}

void from_json(const json& j, DoiRecord& d) {
  j.at("doi").get_to(d.doi);
  j.at("objectRef").get_to(d.objectRef);
  j.at("resolvedUrl").get_to(d.resolvedUrl);
}

std::uint64_t perm_id_sequence(std::string_view permId) {
  const auto dash = permId.rfind('-');
  std::uint64_t seq = 0;
  if (dash == std::string_view::npos ||
      std::from_chars(permId.data() + dash + 1, permId.data() + permId.size(), seq).ec != std::errc{}) {
    fail(ErrorCode::InvalidArgument, "malformed permId " + std::string(permId));
  }
  return seq;
}

namespace {

constexpr std::string_view kDoiPrefix = "10.5281/";
constexpr std::string_view kDoiSuffixStem = "rrp-sim.";
constexpr std::uint64_t kMountChunk = 16 * 1024 * 1024;

std::string perm_id_timestamp(Timestamp t) {
  const auto ms = to_unix_millis(t);
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d%02d%02d%02d%02d%02d%03d", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
  return buf;
}

void write_atomically(const fs::path& target, std::string_view bytes) {
  const auto tmp = target.string() + ".tmp";
  write_file(tmp, bytes);
  fs::rename(tmp, target);
}

}  // namespace

// ---- mount -----------------------------------------------------------------

MountReport mount_dataset(RdmsClient& client, const std::string& token, const DatasetBinding& binding,
                          const fs::path& workspaceRoot) {
  if (!is_valid_folder_name(binding.folder)) fail(ErrorCode::InvalidFolderName, binding.folder);
  const auto descriptor = client.resolve_dataset(token, binding.permId);
  const auto dest = workspaceRoot / "openbis" / binding.folder;

  std::error_code ec;
  if (fs::exists(dest, ec)) remove_tree(dest);
  fs::create_directories(dest, ec);
  if (ec) fail(ErrorCode::TargetNotWritable, dest.string() + ": " + ec.message());

  MountReport report{binding, dest, 0, 0, false};
  for (const auto& entry : descriptor.files) {
    const auto rel = confine_relative(entry.relativePath);
    if (!rel) fail(ErrorCode::ChecksumMismatch, "descriptor path escapes dataset: " + entry.relativePath);
    const auto target = dest / *rel;
    fs::create_directories(target.parent_path(), ec);
    std::ofstream out(target, std::ios::binary | std::ios::trunc);
    if (!out) {
      remove_tree(dest);
      fail(ErrorCode::TargetNotWritable, target.string());
    }
    Sha256 hasher;
    std::uint64_t received = 0;
    // An empty file still needs one read to detect a missing entry.
    do {
      const auto chunk = client.read_file(token, binding.permId, entry.relativePath,
                                          ByteRange{received, kMountChunk});
      hasher.update(chunk);
      out.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
      received += chunk.size();
      if (chunk.size() < kMountChunk) break;
    } while (received < entry.byteSize);
    out.close();
    const auto actual = hasher.hex_digest();
    if (actual != entry.contentHash || received != entry.byteSize) {
      remove_tree(dest);
      fail(ErrorCode::ChecksumMismatch, entry.relativePath + ": expected " + entry.contentHash + ", got " + actual);
    }
    ++report.filesMaterialized;
    report.bytes += received;
  }
  make_read_only(dest);
  report.verified = true;
  return report;
}

// ---- store -----------------------------------------------------------------

RdmsStore::RdmsStore(Options options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = [] { return Clock::now(); };
  std::error_code ec;
  fs::create_directories(options_.dataDir / "datasets", ec);
  if (ec) fail(ErrorCode::DataDirUnwritable, options_.dataDir.string() + ": " + ec.message());
  try {
    write_file(options_.dataDir / ".probe", "");
    fs::remove(options_.dataDir / ".probe");
  } catch (const Error&) {
    fail(ErrorCode::DataDirUnwritable, options_.dataDir.string());
  }

  const auto statePath = options_.dataDir / "state.json";
  if (fs::exists(statePath)) {
    const auto state = json::parse(rrp::read_file(statePath));
    datasetSeq_ = state.value("datasetSeq", std::uint64_t{0});
    doiSeq_ = state.value("doiSeq", std::uint64_t{0});
    for (const auto& d : state.value("dois", json::array())) {
      auto rec = d.get<DoiRecord>();
      doisByRef_[rec.objectRef] = rec;
    }
  }
  for (const auto& dir : fs::directory_iterator(options_.dataDir / "datasets")) {
    const auto descPath = dir.path() / "descriptor.json";
    if (!dir.is_directory() || !fs::exists(descPath)) continue;  // skips interrupted registrations
    auto desc = json::parse(rrp::read_file(descPath)).get<DatasetDescriptor>();
    datasetSeq_ = std::max(datasetSeq_, perm_id_sequence(desc.permId));
    datasets_[desc.permId] = std::move(desc);
  }
}

Timestamp RdmsStore::now() const { return options_.clock(); }

void RdmsStore::persist_state() const {
  json dois = json::array();
  for (const auto& [_, rec] : doisByRef_) dois.push_back(rec);
  const json state{{"datasetSeq", datasetSeq_}, {"doiSeq", doiSeq_}, {"dois", dois}};
  write_atomically(options_.dataDir / "state.json", state.dump(2));
}

std::vector<std::string> RdmsStore::accounts() const { return {std::string(kDemoUser)}; }

SessionToken RdmsStore::login(const std::string& user, const std::string& password) {
  if (user != kDemoUser || password != kDemoPassword) fail(ErrorCode::AuthFailed, "invalid credentials for " + user);
  SessionToken t{hex_encode(random_bytes(24)), user, now() + options_.tokenTtl};
  std::lock_guard g(mu_);
  tokens_[t.token] = t;
  return t;
}

std::string RdmsStore::authenticate(const std::string& token) const {
  std::lock_guard g(mu_);
  const auto it = tokens_.find(token);
  if (it == tokens_.end()) fail(ErrorCode::AuthFailed, "unknown token");
  if (now() >= it->second.expiresAt) fail(ErrorCode::AuthFailed, "token expired");
  return it->second.userId;
}

DatasetDescriptor RdmsStore::resolve(const std::string& permId) const {
  std::lock_guard g(mu_);
  const auto it = datasets_.find(permId);
  if (it == datasets_.end()) fail(ErrorCode::DatasetNotFound, permId);
  return it->second;
}

fs::path RdmsStore::stored_file(const std::string& permId, const std::string& path) const {
  const auto rel = confine_relative(path);
  if (!rel) fail(ErrorCode::DatasetNotFound, permId + "/" + path);
  return options_.dataDir / "datasets" / permId / "files" / *rel;
}

std::string RdmsStore::read_file(const std::string& permId, const std::string& path,
                                 std::optional<ByteRange> range) const {
  const auto desc = resolve(permId);
  const auto listed = std::any_of(desc.files.begin(), desc.files.end(),
                                  [&](const FileEntry& f) { return f.relativePath == path; });
  if (!listed) fail(ErrorCode::DatasetNotFound, permId + " has no file " + path);
  const auto location = stored_file(permId, path);
  if (!range) return rrp::read_file(location);

  std::ifstream in(location, std::ios::binary);
  if (!in) fail(ErrorCode::UnreadableFile, location.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  if (range->offset >= size) return {};
  const auto n = std::min(range->length, size - range->offset);
  std::string out(n, '\0');
  in.seekg(static_cast<std::streamoff>(range->offset));
  in.read(out.data(), static_cast<std::streamsize>(n));
  return out;
}

std::string RdmsStore::register_dataset(const std::vector<DatasetFile>& files,
                                        const std::map<std::string, std::string>& metadata) {
  if (files.empty()) fail(ErrorCode::EmptyDataset, "a dataset needs at least one file");
  DatasetDescriptor desc;
  desc.metadata = metadata;
  std::set<std::string> seen;
  for (const auto& f : files) {
    const auto rel = confine_relative(f.path);
    if (!rel) fail(ErrorCode::InvalidArgument, "invalid dataset path " + f.path);
    if (!seen.insert(*rel).second) fail(ErrorCode::InvalidArgument, "duplicate dataset path " + *rel);
    desc.files.push_back({*rel, f.bytes.size(), sha256_hex(f.bytes)});
    desc.totalBytes += f.bytes.size();
  }
  std::sort(desc.files.begin(), desc.files.end(),
            [](const FileEntry& a, const FileEntry& b) { return a.relativePath < b.relativePath; });

  std::lock_guard g(mu_);
  desc.permId = perm_id_timestamp(now()) + "-" + std::to_string(datasetSeq_ + 1);
  const auto root = options_.dataDir / "datasets";
  const auto staging = root / (".staging-" + desc.permId);
  try {
    for (const auto& f : files) write_file(staging / "files" / *confine_relative(f.path), f.bytes);
    write_file(staging / "descriptor.json", json(desc).dump(2));
    fs::rename(staging, root / desc.permId);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  ++datasetSeq_;
  persist_state();
  datasets_[desc.permId] = desc;
  return desc.permId;
}

DoiRecord RdmsStore::publish(const std::string& objectRef) {
  std::lock_guard g(mu_);
  if (const auto it = doisByRef_.find(objectRef); it != doisByRef_.end()) return it->second;
  if (!datasets_.contains(objectRef)) fail(ErrorCode::ObjectNotFound, objectRef);
  ++doiSeq_;
  const auto suffix = std::string(kDoiSuffixStem) + std::to_string(doiSeq_);
  DoiRecord rec{std::string(kDoiPrefix) + suffix, objectRef, options_.baseUrl + "/objects/" + suffix};
  doisByRef_[objectRef] = rec;
  persist_state();
  return rec;
}

std::optional<DoiRecord> RdmsStore::find_publication(const std::string& objectRef) const {
  std::lock_guard g(mu_);
  const auto it = doisByRef_.find(objectRef);
  if (it == doisByRef_.end()) return std::nullopt;
  return it->second;
}

DoiRecord RdmsStore::publication_by_suffix(const std::string& suffix) const {
  std::lock_guard g(mu_);
  for (const auto& [_, rec] : doisByRef_) {
    if (rec.doi == std::string(kDoiPrefix) + suffix) return rec;
  }
  fail(ErrorCode::ObjectNotFound, suffix);
}

void RdmsStore::set_base_url(std::string url) {
  std::lock_guard g(mu_);
  options_.baseUrl = std::move(url);
}

std::string RdmsStore::base_url() const {
  std::lock_guard g(mu_);
  return options_.baseUrl;
}

// ---- local client ----------------------------------------------------------

void LocalRdmsClient::check_online() const {
  if (offline_) fail(ErrorCode::ServerUnreachable, store_->base_url() + " is offline");
}

SessionToken LocalRdmsClient::login(const std::string& user, const std::string& password) {
  check_online();
  return store_->login(user, password);
}

DatasetDescriptor LocalRdmsClient::resolve_dataset(const std::string& token, const std::string& permId) {
  check_online();
  store_->authenticate(token);
  return store_->resolve(permId);
}

std::string LocalRdmsClient::read_file(const std::string& token, const std::string& permId, const std::string& path,
                                       std::optional<ByteRange> range) {
  check_online();
  store_->authenticate(token);
  return store_->read_file(permId, path, range);
}

std::string LocalRdmsClient::register_dataset(const std::string& token, const std::vector<DatasetFile>& files,
                                              const std::map<std::string, std::string>& metadata) {
  check_online();
  store_->authenticate(token);
  return store_->register_dataset(files, metadata);
}

DoiRecord LocalRdmsClient::publish(const std::string& token, const std::string& objectRef) {
  check_online();
  store_->authenticate(token);
  return store_->publish(objectRef);
}

std::optional<DoiRecord> LocalRdmsClient::find_publication(const std::string& token, const std::string& objectRef) {
  check_online();
  store_->authenticate(token);
  return store_->find_publication(objectRef);
}

}  // namespace rrp
