#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rrp {

namespace fs = std::filesystem;
using Clock = std::chrono::system_clock;
using Timestamp = Clock::time_point;

// ---- hashing ---------------------------------------------------------------

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  /// Lowercase 64-hex digest; the hasher must not be updated afterwards.
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

/// Digest over `path\n<hash>\n` lines in lexicographic path order.
std::string tree_digest(std::vector<std::pair<std::string, std::string>> pathHashes);

// ---- randomness and encodings ----------------------------------------------

std::string random_bytes(std::size_t count);
std::string hex_encode(std::string_view bytes);
/// RFC 4648 base32 alphabet, no padding.
std::string base32_encode(std::string_view bytes);
std::string base64_encode(std::string_view bytes);
/// Throws InvalidArgument on malformed input.
std::string base64_decode(std::string_view text);

// ---- text ------------------------------------------------------------------

std::string_view trim(std::string_view s);
std::string_view rtrim(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);
std::string to_lower(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// ---- files -----------------------------------------------------------------

/// Throws UnreadableFile.
std::string read_file(const fs::path& path);
/// Creates parent directories.
void write_file(const fs::path& path, std::string_view bytes);

/// Removes write permission from every file and directory below root.
void make_read_only(const fs::path& root);
/// Restores owner write permission below root.
void make_writable(const fs::path& root);
/// remove_all that also copes with read-only trees.
void remove_tree(const fs::path& root);

/// Lexically normalizes a relative path and rejects absolute paths, empty
/// paths and any `..` component. Returns nullopt when the path would escape.
std::optional<std::string> confine_relative(std::string_view relative);

/// True iff `path` resolves (following symlinks) to a location inside `root`.
bool is_within(const fs::path& root, const fs::path& path);

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(std::string_view prefix = "rrp");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
};

// ---- time ------------------------------------------------------------------

std::string iso8601(Timestamp t);
Timestamp parse_iso8601(std::string_view text);
std::int64_t to_unix_millis(Timestamp t);
Timestamp from_unix_millis(std::int64_t ms);

// ---- processes -------------------------------------------------------------

struct ProcessResult {
  int exitCode = -1;
  std::string out;
  std::string err;
};

struct ProcessOptions {
  std::optional<fs::path> cwd;
  std::map<std::string, std::string> env;  // added to the inherited environment
  std::optional<std::string> stdinData;
};

/// Runs argv[0] (PATH lookup) and collects stdout/stderr. Never throws for a
/// non-zero exit; throws Internal only if the process cannot be spawned.
ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options = {});

}  // namespace rrp
