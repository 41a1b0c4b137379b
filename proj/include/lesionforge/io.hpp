#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lesionforge/error.hpp"

namespace lesionforge::io {

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

/// Read a whole file. gzip streams are inflated transparently (zlib's gzread
/// passes plain files through unchanged).
inline std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw IoError("cannot read '" + path.string() + "': no such file");
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::byte> out;
  std::vector<std::byte> chunk(1 << 16);
  for (;;) {
    int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      std::string msg = gzerror(f, &err);
      gzclose(f);
      throw IoError("read error in '" + path.string() + "': " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

/// Write `bytes` to `path` via a temporary sibling and rename, so readers
/// never observe a partial file. Paths ending in ".gz" are gzip-compressed.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  const bool gz = ends_with(path.string(), ".gz");
  if (gz) {
    gzFile f = gzopen(tmp.string().c_str(), "wb6");
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    std::size_t off = 0;
    while (off < bytes.size()) {
      auto n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - off, 1u << 20));
      if (gzwrite(f, bytes.data() + off, n) != static_cast<int>(n)) {
        gzclose(f);
        std::filesystem::remove(tmp);
        throw IoError("write error on '" + path.string() + "'");
      }
      off += n;
    }
    if (gzclose(f) != Z_OK) throw IoError("write error on '" + path.string() + "'");
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("write error on '" + path.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

}  // namespace lesionforge::io
