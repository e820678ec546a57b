#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "rrp/util.hpp"

namespace rrp::archive {

struct TarEntry {
  std::string path;  // relative, '/'-separated; directories end without a slash
  std::string data;
  bool directory = false;
  unsigned mode = 0644;
};

/// Deterministic ustar writer: zero mtimes, uid/gid 0, PAX headers for long
/// names. Entries are written in the given order.
std::string write_tar(const std::vector<TarEntry>& entries);

/// Parses ustar/PAX/GNU-longname archives; throws CorruptArchive on truncated
/// or checksum-damaged input. Global PAX headers are skipped.
std::vector<TarEntry> read_tar(std::string_view bytes);

std::string gzip_compress(std::string_view bytes);
/// Throws CorruptArchive on damaged or truncated input.
std::string gzip_decompress(std::string_view bytes);

/// Adds every file under `root` (sorted, relative to root, prefixed with
/// `prefix/`) to `entries`. Symlinks are skipped.
void append_tree(std::vector<TarEntry>& entries, const fs::path& root, const std::string& prefix);

/// Writes every entry under `destination`, rejecting paths that escape it.
void extract(const std::vector<TarEntry>& entries, const fs::path& destination);

}  // namespace rrp::archive
