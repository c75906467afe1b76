#ifndef PLANFILL_IO_HPP
#define PLANFILL_IO_HPP

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace planfill {

namespace fs = std::filesystem;

// Output root for run artifacts; overridable via the PLANFILL_OUT env var.
inline fs::path out_root() {
  if (const char* env = std::getenv("PLANFILL_OUT")) {
    return fs::path(env);
  }
  return fs::path(".");
}

inline fs::path resolve_out(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  return out_root() / p;
}

// Write-temp-then-rename so readers never observe partial files.
inline void atomic_write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace planfill

#endif  // PLANFILL_IO_HPP
