#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "causalrec/common.hpp"
#include "causalrec/data.hpp"
#include "causalrec/embedding.hpp"
#include "causalrec/io.hpp"

namespace causalrec {

/// Sequential recommender treated as an opaque function history -> item.
///
/// `user` is the split index of the user issuing the query. Models that only
/// look at the history ignore it. recommend() must equal the first argmax of
/// score_all() and both must be deterministic.
class BlackBox {
 public:
  virtual ~BlackBox() = default;

  virtual std::string name() const = 0;
  virtual std::size_t n_items() const = 0;
  virtual std::vector<double> score_all(UserId user, std::span<const ItemId> history) const = 0;

  virtual ItemId recommend(UserId user, std::span<const ItemId> history) const {
    return static_cast<ItemId>(argmax_first(score_all(user, history)));
  }
};

class UnmappedHistory : public Error {
 public:
  explicit UnmappedHistory(const std::string& key) : Error("unmapped history [" + key + "]"), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// ---------------------------------------------------------------------------
// FPMC

struct FpmcOptions {
  int dim = 16;
  int epochs = 50;
  double learning_rate = 0.05;
  double l2_reg = 1e-4;
  std::uint64_t seed = 42;
  double init_scale = 0.05;
};

/// The six factor rows touched by one (user, last, positive, negative) triple.
template <class T>
struct FpmcTripleView {
  std::span<T> user;      // user-item family, user side
  std::span<T> pos_user;  // user-item family, positive item side
  std::span<T> neg_user;
  std::span<T> pos_next;  // item-transition family, next item side
  std::span<T> neg_next;
  std::span<T> last;      // item-transition family, previous item side
};

template <class T>
T fpmc_triple_margin(const FpmcTripleView<const T>& v) {
  T margin = 0;
  for (std::size_t f = 0; f < v.user.size(); ++f)
    margin += v.user[f] * (v.pos_user[f] - v.neg_user[f]) + v.last[f] * (v.pos_next[f] - v.neg_next[f]);
  return margin;
}

template <class T>
T fpmc_triple_objective(const FpmcTripleView<const T>& v, T l2) {
  T reg = 0;
  for (std::size_t f = 0; f < v.user.size(); ++f)
    reg += v.user[f] * v.user[f] + v.pos_user[f] * v.pos_user[f] + v.neg_user[f] * v.neg_user[f] +
           v.pos_next[f] * v.pos_next[f] + v.neg_next[f] * v.neg_next[f] + v.last[f] * v.last[f];
  return static_cast<T>(log_sigmoid(static_cast<double>(fpmc_triple_margin(v)))) - l2 * reg;
}

template <class T>
void fpmc_triple_gradient(const FpmcTripleView<const T>& v, T l2, const FpmcTripleView<T>& g) {
  const T w = static_cast<T>(1.0 - sigmoid(static_cast<double>(fpmc_triple_margin(v))));
  for (std::size_t f = 0; f < v.user.size(); ++f) {
    g.user[f] = w * (v.pos_user[f] - v.neg_user[f]) - 2 * l2 * v.user[f];
    g.pos_user[f] = w * v.user[f] - 2 * l2 * v.pos_user[f];
    g.neg_user[f] = -w * v.user[f] - 2 * l2 * v.neg_user[f];
    g.pos_next[f] = w * v.last[f] - 2 * l2 * v.pos_next[f];
    g.neg_next[f] = -w * v.last[f] - 2 * l2 * v.neg_next[f];
    g.last[f] = w * (v.pos_next[f] - v.neg_next[f]) - 2 * l2 * v.last[f];
  }
}

/// Factorized personalized Markov chain over single-item baskets:
/// score(u, i | l) = <U_u, I_i> + <N_i, L_l>, with l the newest history item.
class FpmcModel final : public BlackBox {
 public:
  FpmcModel() = default;

  /// All-zero factors.
  FpmcModel(std::size_t n_users, std::size_t n_items, int dim)
      : user_(MatrixF::Zero(static_cast<Eigen::Index>(n_users), dim)),
        item_user_(MatrixF::Zero(static_cast<Eigen::Index>(n_items), dim)),
        item_next_(MatrixF::Zero(static_cast<Eigen::Index>(n_items), dim)),
        item_last_(MatrixF::Zero(static_cast<Eigen::Index>(n_items), dim)) {}

  FpmcModel(MatrixF user, MatrixF item_user, MatrixF item_next, MatrixF item_last)
      : user_(std::move(user)), item_user_(std::move(item_user)), item_next_(std::move(item_next)),
        item_last_(std::move(item_last)) {}

  std::string name() const override { return "fpmc"; }
  std::size_t n_items() const override { return static_cast<std::size_t>(item_user_.rows()); }
  std::size_t n_users() const { return static_cast<std::size_t>(user_.rows()); }
  int dim() const { return static_cast<int>(item_user_.cols()); }

  std::vector<double> score_all(UserId user, std::span<const ItemId> history) const override {
    if (history.empty()) throw DataError("fpmc needs a non-empty history");
    if (user < 0 || static_cast<std::size_t>(user) >= n_users())
      throw DataError("fpmc has no factors for user " + std::to_string(user));
    const Eigen::VectorXf s = item_user_ * user_.row(user).transpose() +
                              item_next_ * item_last_.row(history.back()).transpose();
    return {s.data(), s.data() + s.size()};
  }

  double score(UserId user, ItemId item, ItemId last) const {
    return static_cast<double>(user_.row(user).dot(item_user_.row(item)) +
                               item_next_.row(item).dot(item_last_.row(last)));
  }

  const MatrixF& user_factors() const { return user_; }
  const MatrixF& item_user_factors() const { return item_user_; }
  const MatrixF& item_next_factors() const { return item_next_; }
  const MatrixF& item_last_factors() const { return item_last_; }

  void save(const std::filesystem::path& dir) const {
    io::json header;
    header["model"] = "fpmc";
    header["dim"] = dim();
    header["n_users"] = n_users();
    header["n_items"] = n_items();
    io::write_f32(dir / "user.f32", user_);
    io::write_f32(dir / "item_user.f32", item_user_);
    io::write_f32(dir / "item_next.f32", item_next_);
    io::write_f32(dir / "item_last.f32", item_last_);
    io::write_json(dir / "fpmc.json", header);
  }

  static FpmcModel load(const std::filesystem::path& dir) {
    const auto header = io::read_json(dir / "fpmc.json");
    const auto dim = header.at("dim").get<Eigen::Index>();
    const auto users = header.at("n_users").get<Eigen::Index>();
    const auto items = header.at("n_items").get<Eigen::Index>();
    return FpmcModel(io::read_f32(dir / "user.f32", users, dim), io::read_f32(dir / "item_user.f32", items, dim),
                     io::read_f32(dir / "item_next.f32", items, dim),
                     io::read_f32(dir / "item_last.f32", items, dim));
  }

 private:
  MatrixF user_;
  MatrixF item_user_;
  MatrixF item_next_;
  MatrixF item_last_;
};

/// BPR-style training over adjacent (previous, next) pairs of each user's
/// training sequence; each epoch samples as many triples as there are pairs.
/// The negative is any item other than the observed next one.
inline FpmcModel train_fpmc(const std::vector<History>& train, std::size_t n_items, const FpmcOptions& opt = {}) {
  if (opt.dim <= 0) throw ConfigError("fpmc dim must be > 0");
  if (n_items == 0) throw DataError("no items");

  struct Transition {
    std::size_t user;
    ItemId last;
    ItemId next;
  };
  std::vector<Transition> transitions;
  std::size_t short_users = 0;
  for (std::size_t u = 0; u < train.size(); ++u) {
    if (train[u].size() < 2) ++short_users;
    for (std::size_t t = 1; t < train[u].size(); ++t) transitions.push_back({u, train[u][t - 1], train[u][t]});
  }
  if (short_users)
    log::warn(std::to_string(short_users) + " users have fewer than 2 training interactions; no transitions");
  if (transitions.empty()) throw DataError("fpmc training data has no transitions");

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> init(-opt.init_scale, opt.init_scale);
  const auto d = static_cast<Eigen::Index>(opt.dim);
  MatrixD user(static_cast<Eigen::Index>(train.size()), d), item_user(static_cast<Eigen::Index>(n_items), d),
      item_next(item_user.rows(), d), item_last(item_user.rows(), d);
  for (MatrixD* m : {&user, &item_user, &item_next, &item_last})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = init(rng);

  std::uniform_int_distribution<std::size_t> pick(0, transitions.size() - 1);
  const auto dim = static_cast<std::size_t>(opt.dim);
  std::vector<double> grad(6 * dim);
  auto gspan = [&](std::size_t k) { return std::span<double>(grad.data() + k * dim, dim); };
  const FpmcTripleView<double> g{gspan(0), gspan(1), gspan(2), gspan(3), gspan(4), gspan(5)};

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t step = 0; step < transitions.size(); ++step) {
      const auto& tr = transitions[pick(rng)];
      // negatives come from outside the observed basket, i.e. any other item
      const auto neg = sample_negative({tr.next}, n_items, rng);
      if (!neg) continue;
      const FpmcTripleView<double> v{detail::row_of(user, static_cast<Eigen::Index>(tr.user)),
                                     detail::row_of(item_user, tr.next),
                                     detail::row_of(item_user, *neg),
                                     detail::row_of(item_next, tr.next),
                                     detail::row_of(item_next, *neg),
                                     detail::row_of(item_last, tr.last)};
      fpmc_triple_gradient<double>({v.user, v.pos_user, v.neg_user, v.pos_next, v.neg_next, v.last}, opt.l2_reg, g);
      for (std::size_t f = 0; f < dim; ++f) {
        v.user[f] += opt.learning_rate * g.user[f];
        v.pos_user[f] += opt.learning_rate * g.pos_user[f];
        v.neg_user[f] += opt.learning_rate * g.neg_user[f];
        v.pos_next[f] += opt.learning_rate * g.pos_next[f];
        v.neg_next[f] += opt.learning_rate * g.neg_next[f];
        v.last[f] += opt.learning_rate * g.last[f];
      }
    }
  }
  for (const MatrixD* m : {&user, &item_user, &item_next, &item_last})
    if (!m->allFinite()) throw NumericError("fpmc training produced non-finite factors");
  return FpmcModel(user.cast<float>(), item_user.cast<float>(), item_next.cast<float>(), item_last.cast<float>());
}

// ---------------------------------------------------------------------------
// count-based baselines

inline std::vector<double> item_frequencies(const std::vector<History>& train, std::size_t n_items) {
  std::vector<double> freq(n_items, 0.0);
  for (const auto& seq : train)
    for (auto item : seq) freq.at(static_cast<std::size_t>(item)) += 1.0;
  return freq;
}

/// Ranks by global training frequency regardless of history.
class PopularityModel final : public BlackBox {
 public:
  explicit PopularityModel(std::vector<double> frequencies) : freq_(std::move(frequencies)) {}

  std::string name() const override { return "popularity"; }
  std::size_t n_items() const override { return freq_.size(); }
  std::vector<double> score_all(UserId, std::span<const ItemId>) const override { return freq_; }

 private:
  std::vector<double> freq_;
};

inline PopularityModel popularity_model(const std::vector<History>& train, std::size_t n_items) {
  if (n_items == 0) throw DataError("no items");
  return PopularityModel(item_frequencies(train, n_items));
}

/// First-order transition counts from the newest history item; falls back to
/// global popularity when that item has no observed successor.
class MarkovModel final : public BlackBox {
 public:
  MarkovModel(std::vector<std::vector<std::pair<ItemId, double>>> transitions, std::vector<double> popularity)
      : transitions_(std::move(transitions)), popularity_(std::move(popularity)) {}

  std::string name() const override { return "markov"; }
  std::size_t n_items() const override { return popularity_.size(); }

  std::vector<double> score_all(UserId, std::span<const ItemId> history) const override {
    if (history.empty()) return popularity_;
    const auto last = static_cast<std::size_t>(history.back());
    if (last >= transitions_.size() || transitions_[last].empty()) return popularity_;
    std::vector<double> scores(popularity_.size(), 0.0);
    for (auto [item, count] : transitions_[last]) scores[static_cast<std::size_t>(item)] = count;
    return scores;
  }

 private:
  std::vector<std::vector<std::pair<ItemId, double>>> transitions_;
  std::vector<double> popularity_;
};

inline MarkovModel train_markov(const std::vector<History>& train, std::size_t n_items) {
  std::size_t total = 0;
  for (const auto& seq : train) total += seq.size();
  if (total == 0) throw DataError("markov training data is empty");
  std::vector<std::map<ItemId, double>> counts(n_items);
  for (const auto& seq : train)
    for (std::size_t t = 1; t < seq.size(); ++t) counts.at(static_cast<std::size_t>(seq[t - 1]))[seq[t]] += 1.0;
  std::vector<std::vector<std::pair<ItemId, double>>> rows(n_items);
  for (std::size_t i = 0; i < n_items; ++i) rows[i].assign(counts[i].begin(), counts[i].end());
  return MarkovModel(std::move(rows), item_frequencies(train, n_items));
}

// ---------------------------------------------------------------------------
// external predictions

/// Lookup table loaded from a prediction file: one line per history,
/// "<comma-joined history>\t<item>". A line whose key is "*" declares the
/// answer for any history not listed; without it, unknown histories raise
/// UnmappedHistory.
class ExternalModel final : public BlackBox {
 public:
  ExternalModel(std::unordered_map<std::string, ItemId> table, std::size_t n_items,
                std::optional<ItemId> fallback = std::nullopt)
      : table_(std::move(table)), n_items_(n_items), fallback_(fallback) {}

  /// Tokens are dense ids unless `items` is given, in which case they are raw
  /// dataset ids translated through it.
  static ExternalModel load(const std::filesystem::path& path, std::size_t n_items, const IdMap* items = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open prediction file " + path.string());
    auto resolve = [&](std::string_view token, std::size_t line_no) -> ItemId {
      token = trim(token);
      if (items) {
        if (auto id = items->find(token)) return *id;
        throw ParseError(path.string(), line_no, "unknown item id '" + std::string(token) + "'");
      }
      ItemId id = -1;
      auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), id);
      if (ec != std::errc{} || end != token.data() + token.size() || id < 0 ||
          static_cast<std::size_t>(id) >= n_items)
        throw ParseError(path.string(), line_no, "bad item id '" + std::string(token) + "'");
      return id;
    };

    std::unordered_map<std::string, ItemId> table;
    std::optional<ItemId> fallback;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto fields = split_view(text, '\t');
      if (fields.size() != 2) throw ParseError(path.string(), line_no, "expected 2 tab-separated fields");
      const ItemId answer = resolve(fields[1], line_no);
      if (trim(fields[0]) == "*") {
        fallback = answer;
        continue;
      }
      History key;
      for (auto tok : split_view(fields[0], ',')) key.push_back(resolve(tok, line_no));
      table[join_items(key)] = answer;
    }
    return ExternalModel(std::move(table), n_items, fallback);
  }

  std::string name() const override { return "external"; }
  std::size_t n_items() const override { return n_items_; }

  ItemId recommend(UserId, std::span<const ItemId> history) const override {
    const auto key = join_items(history);
    if (auto it = table_.find(key); it != table_.end()) return it->second;
    if (fallback_) return *fallback_;
    throw UnmappedHistory(key);
  }

  /// One-hot on the stored answer, so the argmax contract holds.
  std::vector<double> score_all(UserId user, std::span<const ItemId> history) const override {
    std::vector<double> scores(n_items_, 0.0);
    scores.at(static_cast<std::size_t>(recommend(user, history))) = 1.0;
    return scores;
  }

  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::unordered_map<std::string, ItemId> table_;
  std::size_t n_items_;
  std::optional<ItemId> fallback_;
};

/// Dumps `model`'s answers for `histories` (queried as `user`) in the
/// prediction-file format, using dense ids.
inline void write_predictions(const std::filesystem::path& path, const BlackBox& model, UserId user,
                              const std::vector<History>& histories) {
  std::string text;
  for (const auto& h : histories) text += join_items(h) + '\t' + std::to_string(model.recommend(user, h)) + '\n';
  io::write_text(path, text);
}

}  // namespace causalrec
