#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "causalrec/common.hpp"

namespace causalrec::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a sibling temp file and rename so readers never see a torn file.
inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& value) {
  write_text(path, value.dump(2) + "\n");
}

/// Row-major little-endian float32 dump of a matrix.
template <class Derived>
void write_f32(const fs::path& path, const Eigen::MatrixBase<Derived>& m) {
  const MatrixF rows = m.template cast<float>();
  std::string bytes(static_cast<std::size_t>(rows.size()) * sizeof(float), '\0');
  if (rows.size()) std::memcpy(bytes.data(), rows.data(), bytes.size());
  write_text(path, bytes);
}

inline MatrixF read_f32(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  const std::string bytes = read_text(path);
  const auto expected = static_cast<std::size_t>(rows * cols) * sizeof(float);
  if (bytes.size() != expected)
    throw Error(path.string() + ": expected " + std::to_string(expected) + " bytes for " +
                std::to_string(rows) + "x" + std::to_string(cols) + " matrix, found " +
                std::to_string(bytes.size()));
  MatrixF m(rows, cols);
  if (expected) std::memcpy(m.data(), bytes.data(), expected);
  return m;
}

}  // namespace causalrec::io
