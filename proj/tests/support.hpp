#pragma once

#include <filesystem>
#include <random>
#include <tuple>

#include "causalrec/causalrec.hpp"

namespace support {

namespace fs = std::filesystem;

/// Empty scratch directory, recreated on every call.
inline fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("causalrec-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

using Row = std::tuple<long, long, long>;  // user, item, timestamp

inline void write_log(const fs::path& path, const std::vector<Row>& rows) {
  std::string text;
  for (const auto& [u, i, t] : rows) text += std::to_string(u) + '\t' + std::to_string(i) + '\t' + std::to_string(t) + '\n';
  causalrec::io::write_text(path, text);
}

/// Per-user walks over `items` items where the next item is successor[prev]
/// with probability `follow`, otherwise uniform.
struct PlantedLog {
  std::vector<Row> rows;
  std::vector<long> successor;
};

inline PlantedLog planted_log(int users, int items, int min_len, int max_len, double follow, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PlantedLog out;
  out.successor.resize(static_cast<std::size_t>(items));
  std::iota(out.successor.begin(), out.successor.end(), 0L);
  std::shuffle(out.successor.begin(), out.successor.end(), rng);
  std::uniform_int_distribution<int> len(min_len, max_len), item(0, items - 1);
  std::bernoulli_distribution keep(follow);
  for (int u = 0; u < users; ++u) {
    long cur = item(rng);
    const int n = len(rng);
    for (int t = 0; t < n; ++t) {
      out.rows.emplace_back(u, cur, t);
      cur = keep(rng) ? out.successor[static_cast<std::size_t>(cur)] : item(rng);
    }
  }
  return out;
}

/// Random pair set over a small item space; the original pair comes first.
inline causalrec::PerturbedPairSet random_pairs(std::mt19937_64& rng, std::size_t n, int items, int outputs,
                                                std::size_t m) {
  std::uniform_int_distribution<causalrec::ItemId> item(0, items - 1), out(0, outputs - 1);
  auto draw = [&] {
    causalrec::IoPair p;
    for (std::size_t j = 0; j < n; ++j) p.history.push_back(item(rng));
    p.output = out(rng);
    return p;
  };
  causalrec::PerturbedPairSet set;
  set.original = draw();
  for (std::size_t i = 0; i < m; ++i) set.perturbed.push_back(draw());
  set.m = m;
  return set;
}

}  // namespace support
