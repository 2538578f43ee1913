#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <unordered_set>

#include "causalrec/common.hpp"
#include "causalrec/io.hpp"

namespace causalrec {

/// Item (and training-time user) vectors from pairwise ranking factorization.
struct EmbeddingTable {
  MatrixF items;
  MatrixF users;
  std::uint64_t seed = 0;

  Eigen::Index dim() const noexcept { return items.cols(); }
  std::size_t n_items() const noexcept { return static_cast<std::size_t>(items.rows()); }
  std::size_t n_users() const noexcept { return static_cast<std::size_t>(users.rows()); }
};

struct BprOptions {
  int dim = 16;
  int epochs = 50;
  double learning_rate = 0.05;
  double l2_reg = 1e-4;
  std::uint64_t seed = 42;
  /// Half-width of the uniform initialization interval.
  double init_scale = 0.05;
};

/// One sampled ranking triple (user, preferred item, other item).
struct BprTriple {
  std::size_t user;
  ItemId positive;
  ItemId negative;
};

/// ln sigma(u.(p - q)) - l2 (|u|^2 + |p|^2 + |q|^2)
template <class T>
T bpr_triple_objective(std::span<const T> user, std::span<const T> pos, std::span<const T> neg, T l2) {
  T diff = 0, reg = 0;
  for (std::size_t f = 0; f < user.size(); ++f) {
    diff += user[f] * (pos[f] - neg[f]);
    reg += user[f] * user[f] + pos[f] * pos[f] + neg[f] * neg[f];
  }
  return static_cast<T>(log_sigmoid(static_cast<double>(diff))) - l2 * reg;
}

/// Gradient of bpr_triple_objective with respect to each of the three vectors.
template <class T>
void bpr_triple_gradient(std::span<const T> user, std::span<const T> pos, std::span<const T> neg, T l2,
                         std::span<T> g_user, std::span<T> g_pos, std::span<T> g_neg) {
  T diff = 0;
  for (std::size_t f = 0; f < user.size(); ++f) diff += user[f] * (pos[f] - neg[f]);
  const T w = static_cast<T>(1.0 - sigmoid(static_cast<double>(diff)));
  for (std::size_t f = 0; f < user.size(); ++f) {
    g_user[f] = w * (pos[f] - neg[f]) - 2 * l2 * user[f];
    g_pos[f] = w * user[f] - 2 * l2 * pos[f];
    g_neg[f] = -w * user[f] - 2 * l2 * neg[f];
  }
}

namespace detail {

inline std::span<const double> row_of(const MatrixD& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<double> row_of(MatrixD& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace detail

/// Sum of triple objectives under the given factors.
inline double bpr_objective(const MatrixD& users, const MatrixD& items, std::span<const BprTriple> triples,
                            double l2) {
  double total = 0;
  for (const auto& t : triples)
    total += bpr_triple_objective<double>(detail::row_of(users, static_cast<Eigen::Index>(t.user)),
                                          detail::row_of(items, t.positive), detail::row_of(items, t.negative), l2);
  return total;
}

/// Samples a negative uniformly from items the user never interacted with.
/// Returns nullopt when the user's positives cover every item.
template <class Rng>
std::optional<ItemId> sample_negative(const std::unordered_set<ItemId>& positives, std::size_t n_items, Rng& rng) {
  if (positives.size() >= n_items) return std::nullopt;
  std::uniform_int_distribution<ItemId> pick(0, static_cast<ItemId>(n_items) - 1);
  while (true) {
    const ItemId j = pick(rng);
    if (!positives.contains(j)) return j;
  }
}

/// Stochastic gradient ascent on sampled triples; each epoch draws as many
/// triples as there are training interactions. `on_epoch`, if set, sees the
/// double-precision factors after every epoch.
inline EmbeddingTable train_bpr(
    const std::vector<History>& train, std::size_t n_items, const BprOptions& opt = {},
    const std::function<void(int, const MatrixD&, const MatrixD&)>& on_epoch = {}) {
  if (opt.dim < 1) throw ConfigError("embedding dim must be >= 1");
  if (n_items == 0) throw DataError("no items to embed");

  std::vector<std::pair<std::size_t, ItemId>> interactions;
  std::vector<std::unordered_set<ItemId>> positives(train.size());
  for (std::size_t u = 0; u < train.size(); ++u)
    for (auto item : train[u]) {
      interactions.emplace_back(u, item);
      positives[u].insert(item);
    }
  if (interactions.empty()) throw DataError("training set is empty");
  for (std::size_t u = 0; u < train.size(); ++u)
    if (positives[u].size() >= n_items)
      log::warn("user " + std::to_string(u) + " interacted with every item; skipping negative sampling");

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> init(-opt.init_scale, opt.init_scale);
  MatrixD users(static_cast<Eigen::Index>(train.size()), opt.dim);
  MatrixD items(static_cast<Eigen::Index>(n_items), opt.dim);
  for (Eigen::Index i = 0; i < users.size(); ++i) users.data()[i] = init(rng);
  for (Eigen::Index i = 0; i < items.size(); ++i) items.data()[i] = init(rng);

  std::uniform_int_distribution<std::size_t> pick(0, interactions.size() - 1);
  std::vector<double> gu(static_cast<std::size_t>(opt.dim)), gp(gu.size()), gn(gu.size());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t step = 0; step < interactions.size(); ++step) {
      const auto [u, pos] = interactions[pick(rng)];
      const auto neg = sample_negative(positives[u], n_items, rng);
      if (!neg) continue;
      auto urow = detail::row_of(users, static_cast<Eigen::Index>(u));
      auto prow = detail::row_of(items, pos);
      auto nrow = detail::row_of(items, *neg);
      bpr_triple_gradient<double>(urow, prow, nrow, opt.l2_reg, gu, gp, gn);
      for (std::size_t f = 0; f < gu.size(); ++f) {
        urow[f] += opt.learning_rate * gu[f];
        prow[f] += opt.learning_rate * gp[f];
        nrow[f] += opt.learning_rate * gn[f];
      }
    }
    if (on_epoch) on_epoch(epoch, users, items);
  }
  if (!users.allFinite() || !items.allFinite()) throw NumericError("BPR training produced non-finite factors");

  EmbeddingTable table;
  table.items = items.cast<float>();
  table.users = users.cast<float>();
  table.seed = opt.seed;
  return table;
}

/// Item whose vector has the largest dot product with `query`; ties go to the
/// smallest id and excluded items are skipped.
template <class Derived>
ItemId nearest_item(const Eigen::MatrixBase<Derived>& query, const MatrixF& items,
                    const std::unordered_set<ItemId>& exclude = {}) {
  if (query.size() != items.cols())
    throw ConfigError("query dim " + std::to_string(query.size()) + " does not match table dim " +
                      std::to_string(items.cols()));
  const Eigen::VectorXf q = query.template cast<float>();
  ItemId best = -1;
  float best_score = 0;
  for (Eigen::Index i = 0; i < items.rows(); ++i) {
    const auto id = static_cast<ItemId>(i);
    if (exclude.contains(id)) continue;
    const float s = items.row(i).dot(q.transpose());
    if (best < 0 || s > best_score) {
      best = id;
      best_score = s;
    }
  }
  if (best < 0) throw DataError("no candidate items remain after exclusion");
  return best;
}

/// Column-wise argmax of items * queries (queries are d x count); same tie rule
/// as nearest_item.
inline std::vector<ItemId> nearest_items(const MatrixF& items, const Eigen::MatrixXf& queries) {
  if (queries.rows() != items.cols()) throw ConfigError("query dim does not match table dim");
  const Eigen::MatrixXf scores = items * queries;
  std::vector<ItemId> out(static_cast<std::size_t>(queries.cols()));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    Eigen::Index best = 0;
    const float* col = scores.col(c).data();
    for (Eigen::Index i = 1; i < scores.rows(); ++i)
      if (col[i] > col[best]) best = i;
    out[static_cast<std::size_t>(c)] = static_cast<ItemId>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint: <dir>/embedding.json + items.f32 + users.f32

inline void save_embeddings(const std::filesystem::path& dir, const EmbeddingTable& table) {
  io::json header;
  header["dim"] = table.dim();
  header["n_items"] = table.n_items();
  header["n_users"] = table.n_users();
  header["seed"] = table.seed;
  io::write_f32(dir / "items.f32", table.items);
  io::write_f32(dir / "users.f32", table.users);
  io::write_json(dir / "embedding.json", header);
}

inline EmbeddingTable load_embeddings(const std::filesystem::path& dir) {
  const auto header = io::read_json(dir / "embedding.json");
  EmbeddingTable table;
  const auto dim = header.at("dim").get<Eigen::Index>();
  table.items = io::read_f32(dir / "items.f32", header.at("n_items").get<Eigen::Index>(), dim);
  table.users = io::read_f32(dir / "users.f32", header.at("n_users").get<Eigen::Index>(), dim);
  table.seed = header.at("seed").get<std::uint64_t>();
  return table;
}

}  // namespace causalrec
