#pragma once

#include <cmath>
#include <map>
#include <optional>

#include "causalrec/common.hpp"
#include "causalrec/perturbation.hpp"

namespace causalrec {

struct CausalKey {
  ItemId cause = 0;
  ItemId effect = 0;

  friend auto operator<=>(const CausalKey&, const CausalKey&) = default;
};

using ThetaMap = std::map<CausalKey, double>;

/// Position weights gamma^(n-1-j) for j = 0..n-1 (oldest first).
inline std::vector<double> decay_weights(std::size_t n, double gamma) {
  std::vector<double> w(n);
  double v = 1.0;
  for (std::size_t j = n; j-- > 0;) {
    w[j] = v;
    v *= gamma;
  }
  return w;
}

/// sigma(sum_j theta[history_j, output] * gamma^(n-1-j)); absent entries are 0.
inline double predict_prob(std::span<const ItemId> history, ItemId output, const ThetaMap& theta, double gamma) {
  const auto w = decay_weights(history.size(), gamma);
  double s = 0;
  for (std::size_t j = 0; j < history.size(); ++j)
    if (auto it = theta.find({history[j], output}); it != theta.end()) s += it->second * w[j];
  return sigmoid(s);
}

struct FitOptions {
  double gamma = 0.7;
  double l2_lambda = 0.01;
  double learning_rate = 0.1;
  double tol = 1e-6;
  int max_iters = 1000;
};

struct CausalDependencies {
  UserId user = 0;
  double gamma = 0.7;
  ThetaMap theta;
  double objective = 0;  // final penalized log-likelihood
  int iterations = 0;
  bool converged = false;
};

/// Dense form of the fitting problem: one coefficient per distinct
/// (cause, effect) pair seen in the set, each record a list of
/// (coefficient index, decay weight) terms.
class DependencyProblem {
 public:
  DependencyProblem(const PerturbedPairSet& pairs, double gamma) {
    if (!(gamma > 0 && gamma <= 1)) throw ConfigError("gamma must be in (0, 1]");
    std::map<CausalKey, std::size_t> index;
    pairs.for_each([&](const IoPair& p) {
      for (auto item : p.history) index.emplace(CausalKey{item, p.output}, 0);
    });
    keys_.reserve(index.size());
    for (auto& [key, slot] : index) {
      slot = keys_.size();
      keys_.push_back(key);
    }
    pairs.for_each([&](const IoPair& p) {
      const auto w = decay_weights(p.history.size(), gamma);
      std::vector<std::pair<std::size_t, double>> terms;
      for (std::size_t j = 0; j < p.history.size(); ++j) terms.emplace_back(index.at({p.history[j], p.output}), w[j]);
      records_.push_back(std::move(terms));
    });
  }

  std::size_t dimension() const noexcept { return keys_.size(); }
  const std::vector<CausalKey>& keys() const noexcept { return keys_; }

  /// sum_i log sigma(s_i) - lambda * |theta|^2
  double objective(std::span<const double> theta, double lambda) const {
    double total = 0;
    for (const auto& rec : records_) total += log_sigmoid(score(rec, theta));
    double sq = 0;
    for (double t : theta) sq += t * t;
    return total - lambda * sq;
  }

  void gradient(std::span<const double> theta, double lambda, std::span<double> out) const {
    for (std::size_t k = 0; k < theta.size(); ++k) out[k] = -2 * lambda * theta[k];
    for (const auto& rec : records_) {
      const double g = 1.0 - sigmoid(score(rec, theta));
      for (auto [k, w] : rec) out[k] += g * w;
    }
  }

 private:
  static double score(const std::vector<std::pair<std::size_t, double>>& rec, std::span<const double> theta) {
    double s = 0;
    for (auto [k, w] : rec) s += theta[k] * w;
    return s;
  }

  std::vector<CausalKey> keys_;
  std::vector<std::vector<std::pair<std::size_t, double>>> records_;
};

/// Projected gradient ascent from theta = 0 on the penalized log-likelihood of
/// every pair being a true causal record. A step that lowers the objective is
/// rejected and the step size halved, so accepted objectives never decrease.
inline CausalDependencies fit_dependencies(const PerturbedPairSet& pairs, const FitOptions& opt = {}) {
  if (opt.l2_lambda < 0) throw ConfigError("l2_lambda must be >= 0");
  if (!(opt.learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  const DependencyProblem problem(pairs, opt.gamma);
  const std::size_t dim = problem.dimension();
  std::vector<double> theta(dim, 0.0), grad(dim), candidate(dim);
  double current = problem.objective(theta, opt.l2_lambda);
  double step = opt.learning_rate;

  CausalDependencies deps;
  deps.user = pairs.user;
  deps.gamma = opt.gamma;
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    problem.gradient(theta, opt.l2_lambda, grad);
    for (std::size_t k = 0; k < dim; ++k) candidate[k] = std::max(0.0, theta[k] + step * grad[k]);
    const double next = problem.objective(candidate, opt.l2_lambda);
    if (!std::isfinite(next))
      throw NumericError("causal objective is not finite for user " + std::to_string(pairs.user) + " at iteration " +
                         std::to_string(it) + " (step " + format_double(step) + ")");
    if (next < current) {
      step *= 0.5;
      if (step < 1e-12) {
        deps.converged = true;
        ++it;
        break;
      }
      continue;
    }
    const double delta = next - current;
    theta.swap(candidate);
    current = next;
    if (delta < opt.tol) {
      deps.converged = true;
      ++it;
      break;
    }
  }
  deps.iterations = it;
  deps.objective = current;
  for (std::size_t k = 0; k < dim; ++k) deps.theta.emplace(problem.keys()[k], theta[k]);
  return deps;
}

struct CausalExplanation {
  UserId user = 0;
  ItemId cause = 0;
  ItemId effect = 0;
  double dependency = 0;
  /// 1-based rank among the top-k candidates.
  int rank = 0;

  friend bool operator==(const CausalExplanation&, const CausalExplanation&) = default;
};

/// Candidates for `effect` ordered by descending dependency; ties prefer the
/// item seen later in `history` (items outside it rank after those inside),
/// then the smaller item id.
inline std::vector<std::pair<ItemId, double>> rank_causes(const ThetaMap& theta, ItemId effect,
                                                          std::span<const ItemId> history) {
  auto last_position = [&](ItemId item) -> std::ptrdiff_t {
    for (std::size_t j = history.size(); j-- > 0;)
      if (history[j] == item) return static_cast<std::ptrdiff_t>(j);
    return -1;
  };
  std::vector<std::pair<ItemId, double>> ranked;
  for (const auto& [key, value] : theta)
    if (key.effect == effect) ranked.emplace_back(key.cause, value);
  std::map<ItemId, std::ptrdiff_t> pos;
  for (auto& [item, v] : ranked) pos[item] = last_position(item);
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    const auto pa = pos[a.first], pb = pos[b.first];
    if (pa != pb) return pa > pb;
    return a.first < b.first;
  });
  return ranked;
}

/// Keeps dependencies whose effect is the original recommendation, takes the
/// top k by dependency, and returns the best of those whose cause occurs in
/// the original history. nullopt means the recommendation has no explanation.
inline std::optional<CausalExplanation> select_explanation(const CausalDependencies& deps,
                                                           std::span<const ItemId> original_history,
                                                           ItemId original_output, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  const auto ranked = rank_causes(deps.theta, original_output, original_history);
  const std::size_t top = std::min(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < top; ++r) {
    const auto [cause, value] = ranked[r];
    if (std::find(original_history.begin(), original_history.end(), cause) != original_history.end())
      return CausalExplanation{deps.user, cause, original_output, value, static_cast<int>(r + 1)};
  }
  return std::nullopt;
}

/// Dumps theta as "cause\teffect\tvalue" rows in key order.
inline std::string format_theta(const CausalDependencies& deps) {
  std::string text;
  for (const auto& [key, value] : deps.theta)
    text += std::to_string(key.cause) + '\t' + std::to_string(key.effect) + '\t' + format_double(value) + '\n';
  return text;
}

}  // namespace causalrec
