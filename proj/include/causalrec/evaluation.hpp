#pragma once

#include <map>
#include <optional>
#include <set>

#include "causalrec/causal.hpp"
#include "causalrec/common.hpp"
#include "causalrec/perturbation.hpp"

namespace causalrec {

class ContractError : public Error {
 public:
  using Error::Error;
};

/// Exact count ratio. A zero denominator means the ratio is undefined.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 0;

  bool defined() const noexcept { return den > 0; }
  double value() const noexcept { return defined() ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

  friend bool operator==(const Rational&, const Rational&) = default;
};

/// a > b for defined ratios, by cross-multiplication.
inline bool strictly_greater(const Rational& a, const Rational& b) {
  return a.defined() && b.defined() && a.num * b.den > b.num * a.den;
}

struct VerificationResult {
  UserId user = 0;
  ItemId cause = 0;
  ItemId effect = 0;
  Rational p_do_cause;      // #(cause in history and output = effect) / #(cause in history)
  Rational p_do_not_cause;  // same over pairs whose history lacks the cause
  bool verified = false;
  /// One of the two arms had no pairs, so the inequality cannot be decided.
  bool undefined_counterfactual = false;

  friend bool operator==(const VerificationResult&, const VerificationResult&) = default;
};

/// Checks Pr(effect | do(cause)) > Pr(effect | do(not cause)) with both
/// probabilities estimated by counting over every pair, original included.
/// "Contains" ignores position.
inline VerificationResult verify_rule(ItemId cause, ItemId effect, const PerturbedPairSet& pairs) {
  if (effect != pairs.original.output)
    throw ContractError("rule effect " + std::to_string(effect) + " is not the original recommendation " +
                        std::to_string(pairs.original.output));
  VerificationResult r;
  r.user = pairs.user;
  r.cause = cause;
  r.effect = effect;
  pairs.for_each([&](const IoPair& p) {
    const bool has = std::find(p.history.begin(), p.history.end(), cause) != p.history.end();
    Rational& arm = has ? r.p_do_cause : r.p_do_not_cause;
    ++arm.den;
    arm.num += p.output == effect;
  });
  r.undefined_counterfactual = !r.p_do_cause.defined() || !r.p_do_not_cause.defined();
  r.verified = !r.undefined_counterfactual && strictly_greater(r.p_do_cause, r.p_do_not_cause);
  return r;
}

inline VerificationResult verify_rule(const CausalExplanation& rule, const PerturbedPairSet& pairs) {
  return verify_rule(rule.cause, rule.effect, pairs);
}

/// Share of users that received an explanation.
inline double fidelity(std::size_t explained, std::size_t n_users) {
  if (n_users == 0) throw ConfigError("fidelity needs at least one user");
  return static_cast<double>(explained) / static_cast<double>(n_users);
}

template <class T>
double fidelity(std::span<const std::optional<T>> explanations, std::size_t n_users) {
  std::size_t explained = 0;
  for (const auto& e : explanations) explained += e.has_value();
  return fidelity(explained, n_users);
}

/// Share of checked explanations that satisfy the inequality; 0 when none
/// were checked.
inline double verified_percentage(std::span<const VerificationResult> results) {
  if (results.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : results) ok += r.verified;
  return static_cast<double>(ok) / static_cast<double>(results.size());
}

/// Informational quality of counting estimates from m samples: by Chebyshev,
/// P(|p_hat - p| >= error) <= 1 / (4 m error^2).
inline double chebyshev_confidence(std::size_t m, double error = 0.1) {
  if (m == 0) return 0.0;
  return std::max(0.0, 1.0 - 1.0 / (4.0 * static_cast<double>(m) * error * error));
}

// ---------------------------------------------------------------------------
// association-rule baseline

enum class RuleMeasure { support, confidence, lift };

inline const char* to_string(RuleMeasure m) {
  switch (m) {
    case RuleMeasure::support: return "support";
    case RuleMeasure::confidence: return "confidence";
    case RuleMeasure::lift: return "lift";
  }
  return "?";
}

inline constexpr RuleMeasure kRuleMeasures[] = {RuleMeasure::support, RuleMeasure::confidence, RuleMeasure::lift};

struct AssociationRule {
  ItemId antecedent = 0;
  ItemId consequent = 0;
  std::size_t joint_count = 0;
  std::size_t antecedent_count = 0;
  std::size_t consequent_count = 0;
  std::size_t transactions = 0;
  double support = 0;
  double confidence = 0;
  double lift = 0;

  double measure(RuleMeasure m) const {
    switch (m) {
      case RuleMeasure::support: return support;
      case RuleMeasure::confidence: return confidence;
      case RuleMeasure::lift: return lift;
    }
    return 0;
  }
};

/// Rules from frequent pairs, one list per interestingness filter. Every rule
/// meets min_support; the confidence and lift lists additionally require
/// their own threshold.
struct AssociationRuleSets {
  std::vector<AssociationRule> by_support;
  std::vector<AssociationRule> by_confidence;
  std::vector<AssociationRule> by_lift;

  const std::vector<AssociationRule>& get(RuleMeasure m) const {
    switch (m) {
      case RuleMeasure::support: return by_support;
      case RuleMeasure::confidence: return by_confidence;
      case RuleMeasure::lift: return by_lift;
    }
    return by_support;
  }
};

/// Apriori restricted to length-2 itemsets. Transactions are treated as sets.
inline AssociationRuleSets mine_association_rules(const std::vector<std::vector<ItemId>>& transactions,
                                                  double min_support, double min_confidence, double min_lift,
                                                  int max_len = 2) {
  if (transactions.empty()) throw DataError("no transactions to mine");
  if (max_len != 2) throw ConfigError("only length-2 rules are supported");
  if (min_support < 0 || min_support > 1 || min_confidence < 0 || min_confidence > 1 || min_lift < 0)
    throw ConfigError("association thresholds out of range");

  const auto n = static_cast<double>(transactions.size());
  std::vector<std::vector<ItemId>> sets;
  sets.reserve(transactions.size());
  std::map<ItemId, std::size_t> single;
  for (const auto& t : transactions) {
    std::vector<ItemId> s(t.begin(), t.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    for (auto item : s) ++single[item];
    sets.push_back(std::move(s));
  }

  // level 1: frequent items
  std::set<ItemId> frequent;
  for (auto [item, count] : single)
    if (static_cast<double>(count) / n >= min_support) frequent.insert(item);

  // level 2: pairs of frequent items
  std::map<std::pair<ItemId, ItemId>, std::size_t> pair_count;
  for (const auto& s : sets) {
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (!frequent.contains(s[a])) continue;
      for (std::size_t b = a + 1; b < s.size(); ++b)
        if (frequent.contains(s[b])) ++pair_count[{s[a], s[b]}];
    }
  }

  AssociationRuleSets out;
  for (const auto& [pair, joint] : pair_count) {
    if (static_cast<double>(joint) / n < min_support) continue;
    for (auto [x, y] : {pair, std::pair{pair.second, pair.first}}) {
      AssociationRule r;
      r.antecedent = x;
      r.consequent = y;
      r.joint_count = joint;
      r.antecedent_count = single.at(x);
      r.consequent_count = single.at(y);
      r.transactions = transactions.size();
      r.support = static_cast<double>(joint) / n;
      r.confidence = r.support / (static_cast<double>(r.antecedent_count) / n);
      r.lift = r.support / ((static_cast<double>(r.antecedent_count) / n) * (static_cast<double>(r.consequent_count) / n));
      out.by_support.push_back(r);
      if (r.confidence >= min_confidence) out.by_confidence.push_back(r);
      if (r.lift >= min_lift) out.by_lift.push_back(r);
    }
  }
  return out;
}

struct AssociationExplanation {
  ItemId antecedent = 0;
  ItemId consequent = 0;
  double score = 0;
};

/// Best-scoring rule (by `measure`) whose antecedent is in the history and
/// whose consequent is the recommendation; ties go to the smaller antecedent.
inline std::optional<AssociationExplanation> association_explain(std::span<const ItemId> history,
                                                                 ItemId recommendation,
                                                                 const std::vector<AssociationRule>& rules,
                                                                 RuleMeasure measure) {
  std::optional<AssociationExplanation> best;
  for (const auto& r : rules) {
    if (r.consequent != recommendation) continue;
    if (std::find(history.begin(), history.end(), r.antecedent) == history.end()) continue;
    const double s = r.measure(measure);
    if (!best || s > best->score || (s == best->score && r.antecedent < best->antecedent))
      best = AssociationExplanation{r.antecedent, r.consequent, s};
  }
  return best;
}

/// One transaction per user: original history plus the recommended item.
inline std::vector<std::vector<ItemId>> association_transactions(const std::vector<PerturbedPairSet>& pairs) {
  std::vector<std::vector<ItemId>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto t = p.original.history;
    t.push_back(p.original.output);
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// per-user explain + verify

struct UserOutcome {
  UserId user = 0;
  IoPair original;
  std::optional<CausalExplanation> explanation;
  std::optional<VerificationResult> verification;
  int fit_iterations = 0;
  std::optional<CausalDependencies> dependencies;  // kept only on request
};

inline UserOutcome explain_user(const PerturbedPairSet& pairs, const FitOptions& fit, int k,
                                bool keep_dependencies = false) {
  auto deps = fit_dependencies(pairs, fit);
  UserOutcome out;
  out.user = pairs.user;
  out.original = pairs.original;
  out.fit_iterations = deps.iterations;
  out.explanation = select_explanation(deps, pairs.original.history, pairs.original.output, k);
  if (out.explanation) out.verification = verify_rule(*out.explanation, pairs);
  if (keep_dependencies) out.dependencies = std::move(deps);
  return out;
}

inline std::vector<UserOutcome> explain_all(const std::vector<PerturbedPairSet>& pairs, const FitOptions& fit, int k,
                                            unsigned threads, bool keep_dependencies = false) {
  std::vector<UserOutcome> out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) { out[i] = explain_user(pairs[i], fit, k, keep_dependencies); });
  return out;
}

struct Metrics {
  std::size_t users = 0;
  std::size_t explained = 0;
  std::size_t verified = 0;
  std::size_t undefined_counterfactual = 0;
  double fidelity = 0;
  double verified_percentage = 0;
};

inline Metrics summarize(std::span<const UserOutcome> outcomes) {
  Metrics m;
  m.users = outcomes.size();
  std::vector<VerificationResult> checks;
  for (const auto& o : outcomes) {
    if (!o.explanation) continue;
    ++m.explained;
    checks.push_back(*o.verification);
    m.verified += o.verification->verified;
    m.undefined_counterfactual += o.verification->undefined_counterfactual;
  }
  m.fidelity = m.users ? fidelity(m.explained, m.users) : 0.0;
  m.verified_percentage = verified_percentage(checks);
  return m;
}

// ---------------------------------------------------------------------------
// parameter sweeps

enum class SweepParameter { gamma, m };

struct SweepRow {
  double value = 0;
  Metrics metrics;
};

/// Re-fits every user for each value. A gamma sweep reuses the pair sets as
/// they are; an m sweep truncates each set to its first m perturbations.
inline std::vector<SweepRow> sweep(SweepParameter parameter, std::span<const double> values,
                                   const std::vector<PerturbedPairSet>& pairs, const FitOptions& base, int k,
                                   unsigned threads) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double v : values) {
    FitOptions fit = base;
    std::vector<UserOutcome> outcomes;
    if (parameter == SweepParameter::gamma) {
      fit.gamma = v;
      outcomes = explain_all(pairs, fit, k, threads);
    } else {
      if (v < 0 || v != std::floor(v)) throw ConfigError("m sweep values must be non-negative integers");
      const auto m = static_cast<std::size_t>(v);
      std::vector<PerturbedPairSet> subset;
      subset.reserve(pairs.size());
      for (const auto& p : pairs) {
        if (m > p.m) throw ConfigError("m=" + std::to_string(m) + " exceeds the cached perturbation count " +
                                       std::to_string(p.m));
        subset.push_back(p.prefix(m));
      }
      outcomes = explain_all(subset, fit, k, threads);
    }
    rows.push_back({v, summarize(outcomes)});
  }
  return rows;
}

inline std::string format_sweep(SweepParameter parameter, const std::vector<SweepRow>& rows) {
  std::string text = std::string(parameter == SweepParameter::gamma ? "gamma" : "m") +
                     "\tfidelity\tverified_percentage\tusers\texplained\tverified\n";
  for (const auto& r : rows)
    text += format_double(r.value) + '\t' + format_double(r.metrics.fidelity) + '\t' +
            format_double(r.metrics.verified_percentage) + '\t' + std::to_string(r.metrics.users) + '\t' +
            std::to_string(r.metrics.explained) + '\t' + std::to_string(r.metrics.verified) + '\n';
  return text;
}

}  // namespace causalrec
