#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "causalrec/common.hpp"
#include "causalrec/embedding.hpp"
#include "causalrec/io.hpp"
#include "causalrec/recommender.hpp"
#include "causalrec/vae.hpp"

namespace causalrec {

/// Trains the perturbation VAE on equal-length histories with Adam, one
/// reparameterized draw per example. `on_epoch` sees the epoch-mean loss.
inline Vae<float> train_vae(const std::vector<History>& histories, const EmbeddingTable& table,
                            const VaeOptions& opt = {},
                            const std::function<void(int, const VaeLoss&)>& on_epoch = {}) {
  if (opt.latent_dim <= 0) throw ConfigError("latent_dim must be > 0");
  if (opt.batch_size <= 0) throw ConfigError("batch_size must be > 0");
  if (histories.empty()) throw DataError("no histories to train the perturbation model on");
  const auto n = histories.front().size();
  for (const auto& h : histories)
    if (h.size() != n) throw DataError("perturbation model needs equal-length histories");

  VaeShape shape{static_cast<int>(n), static_cast<int>(table.dim()), opt.latent_dim, opt.hidden};
  Vae<float> vae(shape, opt.seed);
  Adam<float> adam(vae.params(), opt.learning_rate);
  auto grad = VaeParams<float>::zeros_like(vae.params());

  std::mt19937_64 rng(derive_seed(opt.seed, 0x7661655f747261ULL));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<std::size_t> order(histories.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(opt.batch_size);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    VaeLoss mean;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      std::vector<History> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(histories[order[i]]);
      ColMatrix<float> eps(opt.latent_dim, static_cast<Eigen::Index>(batch.size()));
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      const auto loss = vae.loss(batch, table.items, eps, static_cast<float>(opt.kl_weight), &grad);
      if (!std::isfinite(loss.total))
        throw NumericError("perturbation model loss is not finite at epoch " + std::to_string(epoch) +
                           ", batch starting at " + std::to_string(start) +
                           " (reconstruction=" + format_double(loss.reconstruction) +
                           ", kl=" + format_double(loss.kl) + ")");
      adam.step(vae.params(), grad);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
      mean.reconstruction += w * loss.reconstruction;
      mean.kl += w * loss.kl;
      mean.total += w * loss.total;
    }
    if (on_epoch) on_epoch(epoch, mean);
  }
  return vae;
}

/// Fraction of positions whose deterministic reconstruction equals the input.
template <class S>
double reconstruction_accuracy(const Vae<S>& vae, const std::vector<History>& histories, const Matrix<S>& items) {
  if (histories.empty()) return 0.0;
  const auto rebuilt = vae.reconstruct(histories, items);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < histories.size(); ++i)
    for (std::size_t p = 0; p < histories[i].size(); ++p, ++total) hit += histories[i][p] == rebuilt[i][p];
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Raw draws z = mu + temperature * std * eps decoded to item histories, in
/// draw order and without deduplication.
template <class S>
std::vector<History> sample_histories(const Vae<S>& vae, const History& history, const Matrix<S>& items,
                                      std::size_t count, double temperature, std::mt19937_64& rng) {
  if (items.cols() != vae.shape().dim)
    throw ConfigError("embedding dim " + std::to_string(items.cols()) + " does not match perturbation model dim " +
                      std::to_string(vae.shape().dim));
  if (history.size() != static_cast<std::size_t>(vae.shape().n))
    throw DataError("history length " + std::to_string(history.size()) + " does not match perturbation model n " +
                    std::to_string(vae.shape().n));
  const auto enc = vae.encode(Vae<S>::embed({history}, items));
  const ColMatrix<S> scale = (enc.log_var.array() * S(0.5)).exp().matrix() * static_cast<S>(temperature);
  std::normal_distribution<S> normal(S(0), S(1));
  ColMatrix<S> z(enc.mu.rows(), static_cast<Eigen::Index>(count));
  for (Eigen::Index c = 0; c < z.cols(); ++c)
    for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = enc.mu(r, 0) + scale(r, 0) * normal(rng);
  return vae.to_histories(vae.decode(z), items);
}

inline std::size_t hamming_distance(std::span<const ItemId> a, std::span<const ItemId> b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d += a[i] != b[i];
  return d + std::max(a.size(), b.size()) - std::min(a.size(), b.size());
}

struct PerturbOptions {
  std::size_t m = 500;
  double temperature = 3.0;
  /// Draw budget; 0 means 20 * m.
  std::size_t max_attempts = 0;
  /// Draws decoded per batch.
  std::size_t batch = 64;
};

struct PerturbationResult {
  std::vector<History> histories;  // distinct, original excluded, first-seen order
  std::size_t draws = 0;
};

/// Collects up to `m` distinct perturbed histories, excluding the original.
/// The draw sequence depends only on the seed, so a smaller m yields a prefix
/// of a larger m's result whenever the budget is not exhausted.
template <class S>
PerturbationResult perturb_history(const Vae<S>& vae, const History& history, const Matrix<S>& items,
                                   const PerturbOptions& opt, std::uint64_t seed) {
  if (!(opt.temperature > 0)) throw ConfigError("temperature must be > 0");
  PerturbationResult result;
  if (opt.m == 0) return result;
  const std::size_t budget = opt.max_attempts ? opt.max_attempts : 20 * opt.m;
  std::mt19937_64 rng(seed);
  std::set<History> seen{history};
  while (result.histories.size() < opt.m && result.draws < budget) {
    const std::size_t count = std::min(opt.batch, budget - result.draws);
    for (auto& h : sample_histories(vae, history, items, count, opt.temperature, rng)) {
      ++result.draws;
      if (seen.insert(h).second) {
        result.histories.push_back(std::move(h));
        if (result.histories.size() == opt.m) break;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// input/output pairs

struct IoPair {
  History history;
  ItemId output = 0;

  friend bool operator==(const IoPair&, const IoPair&) = default;
};

/// The original (history, recommendation) pair of one user plus the black
/// box's answers on the perturbed histories.
struct PerturbedPairSet {
  UserId user = 0;
  IoPair original;
  std::vector<IoPair> perturbed;
  /// Requested perturbation count; perturbed.size() may fall short.
  std::size_t m = 0;
  /// Draws spent generating the perturbations.
  std::size_t draws = 0;

  std::size_t size() const noexcept { return perturbed.size() + 1; }

  /// Original first, then perturbed pairs in generation order.
  template <class F>
  void for_each(F&& f) const {
    f(original);
    for (const auto& p : perturbed) f(p);
  }

  /// The same set restricted to the first `count` perturbed pairs.
  PerturbedPairSet prefix(std::size_t count) const {
    PerturbedPairSet out = *this;
    out.m = count;
    if (out.perturbed.size() > count) out.perturbed.resize(count);
    return out;
  }

  friend bool operator==(const PerturbedPairSet&, const PerturbedPairSet&) = default;
};

inline PerturbedPairSet build_pairs(UserId user, const History& history, const BlackBox& blackbox,
                                    const Vae<float>& vae, const EmbeddingTable& table, const PerturbOptions& opt,
                                    std::uint64_t seed) {
  PerturbedPairSet set;
  set.user = user;
  set.m = opt.m;
  set.original = {history, blackbox.recommend(user, history)};
  if (opt.m == 0) return set;
  auto result = perturb_history(vae, history, table.items, opt, seed);
  set.draws = result.draws;
  if (result.histories.size() < opt.m)
    log::warn("user " + std::to_string(user) + ": found " + std::to_string(result.histories.size()) +
              " distinct perturbations of " + std::to_string(opt.m) + " requested after " +
              std::to_string(result.draws) + " draws");
  set.perturbed.reserve(result.histories.size());
  for (auto& h : result.histories) {
    const ItemId y = blackbox.recommend(user, h);
    set.perturbed.push_back({std::move(h), y});
  }
  return set;
}

/// One row per pair: "<comma-joined history>\t<output>\t<is_original>".
inline std::string format_pairs(const PerturbedPairSet& set) {
  std::string text;
  set.for_each([&](const IoPair& p) {
    text += join_items(p.history) + '\t' + std::to_string(p.output) + '\t' + (&p == &set.original ? "1" : "0") + '\n';
  });
  return text;
}

inline PerturbedPairSet parse_pairs(std::string_view text, UserId user, const std::string& source = "<pairs>") {
  PerturbedPairSet set;
  set.user = user;
  bool have_original = false;
  std::size_t line_no = 0;
  for (auto line : split_view(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_view(line, '\t');
    if (fields.size() != 3) throw ParseError(source, line_no, "expected 3 tab-separated fields");
    IoPair pair;
    for (auto tok : split_view(fields[0], ',')) pair.history.push_back(std::stoi(std::string(tok)));
    pair.output = std::stoi(std::string(fields[1]));
    if (fields[2] == "1") {
      if (have_original) throw ParseError(source, line_no, "second original pair");
      set.original = std::move(pair);
      have_original = true;
    } else {
      set.perturbed.push_back(std::move(pair));
    }
  }
  if (!have_original) throw ParseError(source, line_no, "no original pair");
  set.m = set.perturbed.size();
  return set;
}

// ---------------------------------------------------------------------------
// checkpoint: <dir>/vae.json + vae.f32 (all tensors, column-major, in layer order)

inline void save_vae(const std::filesystem::path& dir, const Vae<float>& vae, const VaeOptions& opt) {
  io::json header;
  header["n"] = vae.shape().n;
  header["dim"] = vae.shape().dim;
  header["latent_dim"] = vae.shape().latent;
  header["hidden"] = vae.shape().hidden;
  header["hidden_layers"] = 2;
  header["activation"] = "tanh";
  header["kl_weight"] = opt.kl_weight;
  header["seed"] = opt.seed;
  std::vector<float> flat;
  vae.params().for_each([&](const ColMatrix<float>& m) { flat.insert(flat.end(), m.data(), m.data() + m.size()); });
  header["parameters"] = flat.size();
  io::write_f32(dir / "vae.f32", Eigen::Map<const MatrixF>(flat.data(), 1, static_cast<Eigen::Index>(flat.size())));
  io::write_json(dir / "vae.json", header);
}

inline Vae<float> load_vae(const std::filesystem::path& dir) {
  const auto header = io::read_json(dir / "vae.json");
  VaeShape shape{header.at("n").get<int>(), header.at("dim").get<int>(), header.at("latent_dim").get<int>(),
                 header.at("hidden").get<int>()};
  Vae<float> vae(shape, 0);
  const auto count = header.at("parameters").get<Eigen::Index>();
  const MatrixF flat = io::read_f32(dir / "vae.f32", 1, count);
  Eigen::Index offset = 0;
  vae.params().for_each([&](ColMatrix<float>& m) {
    if (offset + m.size() > count) throw Error("vae checkpoint too small for its declared shape");
    std::copy(flat.data() + offset, flat.data() + offset + m.size(), m.data());
    offset += m.size();
  });
  if (offset != count) throw Error("vae checkpoint size does not match its declared shape");
  return vae;
}

}  // namespace causalrec
