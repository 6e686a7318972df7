#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mvp/common.hpp"

namespace mvp {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(str("cannot open ", path));
  std::ostringstream oss;
  oss << in.rdbuf();
  if (in.bad()) throw IoError(str("read failed: ", path));
  return oss.str();
}

// All file outputs go through temp-then-rename so a crash never leaves a
// half-written artifact behind.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(str("cannot create ", tmp));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError(str("write failed: ", tmp));
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError(str("rename ", tmp, " -> ", path, ": ", ec.message()));
}

// Shortest round-trip decimal for a double; stable across runs.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace mvp
