#include "rrp/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>

#include "rrp/error.hpp"

namespace rrp::archive {

namespace {

constexpr std::size_t kBlock = 512;

struct Header {
  std::array<char, kBlock> raw{};

  void put(std::size_t offset, std::size_t width, std::string_view value) {
    std::memcpy(raw.data() + offset, value.data(), std::min(width, value.size()));
  }
  void put_octal(std::size_t offset, std::size_t width, std::uint64_t value) {
    std::string digits(width - 1, '0');
    for (std::size_t i = width - 1; i-- > 0 && value != 0; value >>= 3) digits[i] = static_cast<char>('0' + (value & 7));
    put(offset, width, digits);
  }
  void finish() {
    std::memset(raw.data() + 148, ' ', 8);
    unsigned sum = 0;
    for (unsigned char c : raw) sum += c;
    std::string digits(6, '0');
    for (std::size_t i = 6; i-- > 0; sum >>= 3) digits[i] = static_cast<char>('0' + (sum & 7));
    put(148, 6, digits);
    raw[154] = '\0';
    raw[155] = ' ';
  }
};

Header make_header(std::string_view name, std::string_view prefix, std::uint64_t size, char type, unsigned mode) {
  Header h;
  h.put(0, 100, name);
  h.put_octal(100, 8, mode);
  h.put_octal(108, 8, 0);
  h.put_octal(116, 8, 0);
  h.put_octal(124, 12, size);
  h.put_octal(136, 12, 0);
  h.raw[156] = type;
  h.put(257, 6, std::string_view("ustar\0", 6));
  h.put(263, 2, "00");
  h.put(345, 155, prefix);
  h.finish();
  return h;
}

void append_padded(std::string& out, std::string_view data) {
  out.append(data);
  const auto rem = data.size() % kBlock;
  if (rem != 0) out.append(kBlock - rem, '\0');
}

std::string pax_record(std::string_view key, std::string_view value) {
  // "<len> key=value\n" where len counts itself.
  const auto body = std::string(" ") + std::string(key) + "=" + std::string(value) + "\n";
  auto len = body.size() + 1;
  while (std::to_string(len).size() + body.size() != len) ++len;
  return std::to_string(len) + body;
}

bool split_ustar(const std::string& path, std::string& name, std::string& prefix) {
  if (path.size() <= 100) {
    name = path;
    prefix.clear();
    return true;
  }
  for (auto pos = path.find('/'); pos != std::string::npos; pos = path.find('/', pos + 1)) {
    if (pos <= 155 && path.size() - pos - 1 <= 100 && path.size() - pos - 1 > 0) {
      prefix = path.substr(0, pos);
      name = path.substr(pos + 1);
      return true;
    }
  }
  return false;
}

std::uint64_t parse_octal(std::string_view field) {
  std::uint64_t v = 0;
  bool seen = false;
  for (char c : field) {
    if (c == '\0' || (c == ' ' && seen)) break;
    if (c == ' ') continue;
    if (c < '0' || c > '7') fail(ErrorCode::CorruptArchive, "bad octal field in tar header");
    v = (v << 3) | static_cast<std::uint64_t>(c - '0');
    seen = true;
  }
  return v;
}

std::string cstr(std::string_view field) { return std::string(field.substr(0, field.find('\0'))); }

}  // namespace

std::string write_tar(const std::vector<TarEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    const std::string path = e.directory ? e.path + "/" : e.path;
    std::string name, prefix;
    if (!split_ustar(path, name, prefix)) {
      const auto record = pax_record("path", path);
      const auto pax = make_header("PaxHeader", "", record.size(), 'x', 0644);
      out.append(pax.raw.data(), kBlock);
      append_padded(out, record);
      name = path.substr(0, 100);
      prefix.clear();
    }
    const auto h = make_header(name, prefix, e.directory ? 0 : e.data.size(), e.directory ? '5' : '0',
                               e.directory ? 0755 : e.mode);
    out.append(h.raw.data(), kBlock);
    if (!e.directory) append_padded(out, e.data);
  }
  out.append(2 * kBlock, '\0');
  return out;
}

std::vector<TarEntry> read_tar(std::string_view bytes) {
  std::vector<TarEntry> entries;
  std::size_t pos = 0;
  std::string pendingName;
  bool sawEnd = false;
  while (pos + kBlock <= bytes.size()) {
    const auto block = bytes.substr(pos, kBlock);
    if (std::all_of(block.begin(), block.end(), [](char c) { return c == '\0'; })) {
      sawEnd = true;
      break;
    }
    unsigned sum = 0;
    for (std::size_t i = 0; i < kBlock; ++i) {
      sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(block[i]);
    }
    if (parse_octal(block.substr(148, 8)) != sum) fail(ErrorCode::CorruptArchive, "tar header checksum mismatch");

    const auto size = parse_octal(block.substr(124, 12));
    const char type = block[156];
    pos += kBlock;
    const auto padded = (size + kBlock - 1) / kBlock * kBlock;
    if (pos + padded > bytes.size()) fail(ErrorCode::CorruptArchive, "tar archive truncated");
    const auto data = bytes.substr(pos, size);
    pos += padded;

    if (type == 'x') {
      std::size_t p = 0;
      while (p < data.size()) {
        const auto sp = data.find(' ', p);
        if (sp == std::string_view::npos) fail(ErrorCode::CorruptArchive, "bad PAX record");
        const auto len = std::stoull(std::string(data.substr(p, sp - p)));
        if (len == 0 || p + len > data.size()) fail(ErrorCode::CorruptArchive, "bad PAX record length");
        const auto rec = data.substr(sp + 1, len - (sp - p) - 2);
        const auto eq = rec.find('=');
        if (eq != std::string_view::npos && rec.substr(0, eq) == "path") pendingName = std::string(rec.substr(eq + 1));
        p += len;
      }
      continue;
    }
    if (type == 'g') continue;
    if (type == 'L') {
      pendingName = cstr(data);
      continue;
    }

    std::string path;
    if (!pendingName.empty()) {
      path = std::move(pendingName);
      pendingName.clear();
    } else {
      const auto prefix = cstr(block.substr(345, 155));
      const auto name = cstr(block.substr(0, 100));
      path = prefix.empty() ? name : prefix + "/" + name;
    }
    TarEntry e;
    e.directory = type == '5' || (!path.empty() && path.back() == '/');
    while (!path.empty() && path.back() == '/') path.pop_back();
    if (starts_with(path, "./")) path.erase(0, 2);
    if (path.empty() || path == ".") continue;
    e.path = std::move(path);
    e.mode = static_cast<unsigned>(parse_octal(block.substr(100, 8)));
    if (type == '0' || type == '\0' || type == '7') {
      e.data = std::string(data);
    } else if (!e.directory) {
      continue;  // links, devices: not part of our formats
    }
    entries.push_back(std::move(e));
  }
  if (!sawEnd) fail(ErrorCode::CorruptArchive, "tar archive truncated (no end marker)");
  return entries;
}

std::string gzip_compress(std::string_view bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    fail(ErrorCode::Internal, "deflateInit2 failed");
  }
  std::string out;
  out.resize(deflateBound(&zs, bytes.size()) + 32);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(ErrorCode::Internal, "deflate failed");
  out.resize(zs.total_out);
  return out;
}

std::string gzip_decompress(std::string_view bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) fail(ErrorCode::Internal, "inflateInit2 failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  std::array<char, 1 << 16> buf{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf.data());
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorCode::CorruptArchive, "gzip stream damaged or truncated");
    }
    out.append(buf.data(), buf.size() - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      fail(ErrorCode::CorruptArchive, "gzip stream truncated");
    }
  }
  inflateEnd(&zs);
  return out;
}

void append_tree(std::vector<TarEntry>& entries, const fs::path& root, const std::string& prefix) {
  std::vector<std::pair<std::string, fs::path>> files;
  std::error_code ec;
  if (!fs::exists(root, ec)) return;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_symlink() || !it->is_regular_file()) continue;
    files.emplace_back(fs::relative(it->path(), root).generic_string(), it->path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& [rel, path] : files) {
    TarEntry e;
    e.path = prefix.empty() ? rel : prefix + "/" + rel;
    e.data = read_file(path);
    const auto perms = fs::status(path).permissions();
    e.mode = (perms & fs::perms::owner_exec) != fs::perms::none ? 0755 : 0644;
    entries.push_back(std::move(e));
  }
}

void extract(const std::vector<TarEntry>& entries, const fs::path& destination) {
  fs::create_directories(destination);
  for (const auto& e : entries) {
    const auto rel = confine_relative(e.path);
    if (!rel) fail(ErrorCode::CorruptArchive, "archive entry escapes destination: " + e.path);
    const auto target = destination / *rel;
    if (e.directory) {
      fs::create_directories(target);
      continue;
    }
    write_file(target, e.data);
    if (e.mode & 0111) {
      fs::permissions(target, fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                      fs::perm_options::add);
    }
  }
}

}  // namespace rrp::archive
