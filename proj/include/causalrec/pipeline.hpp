#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>

#include "causalrec/causal.hpp"
#include "causalrec/common.hpp"
#include "causalrec/data.hpp"
#include "causalrec/embedding.hpp"
#include "causalrec/evaluation.hpp"
#include "causalrec/io.hpp"
#include "causalrec/perturbation.hpp"
#include "causalrec/recommender.hpp"

namespace causalrec {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// A pipeline stage failed; `stage()` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// configuration

struct DatasetConfig {
  std::string path;
  char delimiter = '\t';
  std::string columns = "user,item,timestamp";
  /// 0 disables the k-core filter.
  std::size_t min_user_count = 0;
  std::size_t min_item_count = 0;
};

struct BlackBoxConfig {
  /// fpmc, markov, popularity or external
  std::string model = "fpmc";
  /// Prediction file for the external model (raw dataset ids).
  std::string predictions;
  FpmcOptions fpmc;
};

struct AssociationConfig {
  double min_support = 0.1;
  double min_confidence = 0.1;
  double min_lift = 0.1;
};

struct PipelineConfig {
  DatasetConfig dataset;
  std::size_t n = 5;
  std::size_t test_len = 6;
  BprOptions embedding;
  BlackBoxConfig blackbox;
  VaeOptions vae;
  PerturbOptions perturbation;
  FitOptions causal;
  int k = 1;
  AssociationConfig association;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::string out_dir = "runs/default";
  bool dump_theta = false;

  /// Stage seeds derive from the global seed.
  std::uint64_t stage_seed(std::uint64_t stage) const { return derive_seed(seed, stage); }

  void validate() const {
    if (dataset.path.empty()) throw ConfigError("dataset.path is required");
    if (test_len != n + 1) throw ConfigError("test_len must equal n + 1");
    if (embedding.dim < 1) throw ConfigError("embedding.dim must be >= 1");
    if (blackbox.model != "fpmc" && blackbox.model != "markov" && blackbox.model != "popularity" &&
        blackbox.model != "external")
      throw ConfigError("unknown blackbox model '" + blackbox.model + "'");
    if (blackbox.model == "external" && blackbox.predictions.empty())
      throw ConfigError("external blackbox needs blackbox.predictions");
    if (blackbox.fpmc.dim <= 0) throw ConfigError("blackbox.dim must be > 0");
    if (vae.latent_dim <= 0) throw ConfigError("vae.latent_dim must be > 0");
    if (!(perturbation.temperature > 0)) throw ConfigError("perturbation.temperature must be > 0");
    if (!(causal.gamma > 0 && causal.gamma <= 1)) throw ConfigError("causal.gamma must be in (0, 1]");
    if (k < 1) throw ConfigError("causal.k must be >= 1");
    if (causal.l2_lambda < 0) throw ConfigError("causal.l2_lambda must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }

  /// Informational remarks about the configuration.
  std::vector<std::string> notes() const {
    std::vector<std::string> out;
    const double conf = chebyshev_confidence(perturbation.m, 0.1);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "m=%zu: Chebyshev gives >= %.1f%% confidence that each counting estimate is within 0.1",
                  perturbation.m, 100.0 * conf);
    out.emplace_back(buf);
    if (causal.l2_lambda == 0) out.emplace_back("l2_lambda=0: dependencies grow until max_iters");
    return out;
  }
};

namespace detail {

template <class T>
void take(const json& obj, const char* key, T& field) {
  if (obj.contains(key)) field = obj.at(key).get<T>();
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

/// Reads a JSON config. Relative dataset and prediction paths resolve against
/// `base_dir`.
inline PipelineConfig parse_config(const json& j, const fs::path& base_dir = {}) {
  using detail::take;
  using detail::reject_unknown;
  PipelineConfig c;
  try {
    reject_unknown(j,
                   {"dataset", "n", "test_len", "embedding", "blackbox", "vae", "perturbation", "causal",
                    "association", "seed", "threads", "out_dir", "dump_theta"},
                   "config");
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      reject_unknown(d, {"path", "delimiter", "columns", "min_user_count", "min_item_count"}, "dataset");
      take(d, "path", c.dataset.path);
      if (d.contains("delimiter")) {
        const auto delim = d.at("delimiter").get<std::string>();
        if (delim.size() != 1) throw ConfigError("dataset.delimiter must be a single character");
        c.dataset.delimiter = delim[0];
      }
      take(d, "columns", c.dataset.columns);
      take(d, "min_user_count", c.dataset.min_user_count);
      take(d, "min_item_count", c.dataset.min_item_count);
    }
    take(j, "n", c.n);
    c.test_len = c.n + 1;
    take(j, "test_len", c.test_len);
    if (j.contains("embedding")) {
      const auto& e = j.at("embedding");
      reject_unknown(e, {"dim", "epochs", "learning_rate", "l2_reg"}, "embedding");
      take(e, "dim", c.embedding.dim);
      take(e, "epochs", c.embedding.epochs);
      take(e, "learning_rate", c.embedding.learning_rate);
      take(e, "l2_reg", c.embedding.l2_reg);
    }
    if (j.contains("blackbox")) {
      const auto& b = j.at("blackbox");
      reject_unknown(b, {"model", "predictions", "dim", "epochs", "learning_rate", "l2_reg"}, "blackbox");
      take(b, "model", c.blackbox.model);
      if (c.blackbox.model.rfind("external:", 0) == 0) {
        c.blackbox.predictions = c.blackbox.model.substr(9);
        c.blackbox.model = "external";
      }
      take(b, "predictions", c.blackbox.predictions);
      take(b, "dim", c.blackbox.fpmc.dim);
      take(b, "epochs", c.blackbox.fpmc.epochs);
      take(b, "learning_rate", c.blackbox.fpmc.learning_rate);
      take(b, "l2_reg", c.blackbox.fpmc.l2_reg);
    }
    if (j.contains("vae")) {
      const auto& v = j.at("vae");
      reject_unknown(v, {"latent_dim", "hidden", "epochs", "learning_rate", "kl_weight", "batch_size"}, "vae");
      take(v, "latent_dim", c.vae.latent_dim);
      take(v, "hidden", c.vae.hidden);
      take(v, "epochs", c.vae.epochs);
      take(v, "learning_rate", c.vae.learning_rate);
      take(v, "kl_weight", c.vae.kl_weight);
      take(v, "batch_size", c.vae.batch_size);
    }
    if (j.contains("perturbation")) {
      const auto& p = j.at("perturbation");
      reject_unknown(p, {"m", "temperature", "max_attempts"}, "perturbation");
      take(p, "m", c.perturbation.m);
      take(p, "temperature", c.perturbation.temperature);
      take(p, "max_attempts", c.perturbation.max_attempts);
    }
    if (j.contains("causal")) {
      const auto& f = j.at("causal");
      reject_unknown(f, {"gamma", "k", "l2_lambda", "learning_rate", "tol", "max_iters"}, "causal");
      take(f, "gamma", c.causal.gamma);
      take(f, "k", c.k);
      take(f, "l2_lambda", c.causal.l2_lambda);
      take(f, "learning_rate", c.causal.learning_rate);
      take(f, "tol", c.causal.tol);
      take(f, "max_iters", c.causal.max_iters);
    }
    if (j.contains("association")) {
      const auto& a = j.at("association");
      reject_unknown(a, {"min_support", "min_confidence", "min_lift"}, "association");
      take(a, "min_support", c.association.min_support);
      take(a, "min_confidence", c.association.min_confidence);
      take(a, "min_lift", c.association.min_lift);
    }
    take(j, "seed", c.seed);
    take(j, "threads", c.threads);
    take(j, "out_dir", c.out_dir);
    take(j, "dump_theta", c.dump_theta);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative() && !base_dir.empty()) p = (base_dir / p).lexically_normal().string();
  };
  resolve(c.dataset.path);
  resolve(c.blackbox.predictions);
  resolve(c.out_dir);
  c.validate();
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  return parse_config(io::read_json(path), path.parent_path());
}

inline json to_json(const PipelineConfig& c) {
  json j;
  j["dataset"] = {{"path", c.dataset.path},
                  {"delimiter", std::string(1, c.dataset.delimiter)},
                  {"columns", c.dataset.columns},
                  {"min_user_count", c.dataset.min_user_count},
                  {"min_item_count", c.dataset.min_item_count}};
  j["n"] = c.n;
  j["test_len"] = c.test_len;
  j["embedding"] = {{"dim", c.embedding.dim},
                    {"epochs", c.embedding.epochs},
                    {"learning_rate", c.embedding.learning_rate},
                    {"l2_reg", c.embedding.l2_reg}};
  j["blackbox"] = {{"model", c.blackbox.model},
                   {"predictions", c.blackbox.predictions},
                   {"dim", c.blackbox.fpmc.dim},
                   {"epochs", c.blackbox.fpmc.epochs},
                   {"learning_rate", c.blackbox.fpmc.learning_rate},
                   {"l2_reg", c.blackbox.fpmc.l2_reg}};
  j["vae"] = {{"latent_dim", c.vae.latent_dim},   {"hidden", c.vae.hidden},
              {"epochs", c.vae.epochs},           {"learning_rate", c.vae.learning_rate},
              {"kl_weight", c.vae.kl_weight},     {"batch_size", c.vae.batch_size}};
  j["perturbation"] = {{"m", c.perturbation.m},
                       {"temperature", c.perturbation.temperature},
                       {"max_attempts", c.perturbation.max_attempts}};
  j["causal"] = {{"gamma", c.causal.gamma},
                 {"k", c.k},
                 {"l2_lambda", c.causal.l2_lambda},
                 {"learning_rate", c.causal.learning_rate},
                 {"tol", c.causal.tol},
                 {"max_iters", c.causal.max_iters}};
  j["association"] = {{"min_support", c.association.min_support},
                      {"min_confidence", c.association.min_confidence},
                      {"min_lift", c.association.min_lift}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["out_dir"] = c.out_dir;
  j["dump_theta"] = c.dump_theta;
  return j;
}

// ---------------------------------------------------------------------------
// report

struct RunReport {
  std::string model;
  std::string dataset;
  std::size_t users = 0;
  int k = 1;
  std::size_t m = 0;
  double gamma = 0;
  double temperature = 0;
  Metrics causal;
  std::map<std::string, double> association_fidelity;
  std::map<std::string, std::size_t> association_rules;
  double vae_reconstruction_accuracy = 0;
  double mean_perturbations = 0;
  std::size_t shortfall_users = 0;
  double mean_hamming = 0;
  std::vector<std::string> notes;

  json to_json() const {
    json j;
    j["model"] = model;
    j["dataset"] = dataset;
    j["users"] = users;
    j["k"] = k;
    j["m"] = m;
    j["gamma"] = gamma;
    j["temperature"] = temperature;
    j["fidelity"] = causal.fidelity;
    j["verified_pct"] = causal.verified_percentage;
    j["explained"] = causal.explained;
    j["verified"] = causal.verified;
    j["undefined_counterfactual"] = causal.undefined_counterfactual;
    j["association_fidelity"] = association_fidelity;
    j["association_rules"] = association_rules;
    j["vae_reconstruction_accuracy"] = vae_reconstruction_accuracy;
    j["perturbation"] = {{"mean_distinct", mean_perturbations},
                         {"shortfall_users", shortfall_users},
                         {"mean_hamming", mean_hamming}};
    j["notes"] = notes;
    return j;
  }
};

// ---------------------------------------------------------------------------
// pipeline

/// Runs the explanation pipeline stage by stage. Expensive stages are cached
/// under <out_dir>/cache/<stage>-<key>, where the key hashes every input that
/// affects the stage (so changing gamma or k reuses the pair cache, while
/// changing m or temperature does not).
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
    out_ = cfg_.out_dir;
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const fs::path& out_dir() const noexcept { return out_; }

  const InteractionLog& interactions() {
    data();
    return *log_;
  }

  const SplitDataset& data() {
    if (split_) return *split_;
    staged("prepare", [&] {
      LoadOptions opt;
      opt.delimiter = cfg_.dataset.delimiter;
      opt.columns = LoadOptions::parse_columns(cfg_.dataset.columns);
      auto log = load_interactions(cfg_.dataset.path, opt);
      if (cfg_.dataset.min_user_count > 0 || cfg_.dataset.min_item_count > 0)
        log = filter_kcore(log, std::max<std::size_t>(1, cfg_.dataset.min_user_count),
                           std::max<std::size_t>(1, cfg_.dataset.min_item_count));
      split_ = chronological_split(log, cfg_.test_len, cfg_.n);
      log_ = std::move(log);
      write_split(out_ / "split", *split_, *log_);
      log::info("prepare: " + std::to_string(log_->rows.size()) + " interactions, " +
                std::to_string(split_->n_users()) + " users, " + std::to_string(split_->n_items) + " items");
    });
    return *split_;
  }

  const EmbeddingTable& embeddings() {
    if (table_) return *table_;
    const auto& split = data();
    staged("train-embeddings", [&] {
      auto opt = cfg_.embedding;
      opt.seed = cfg_.stage_seed(1);
      const fs::path dir = cache_dir("embedding", embedding_key());
      if (complete(dir)) {
        table_ = load_embeddings(dir);
      } else {
        auto table = train_bpr(split.train, split.n_items, opt);
        save_embeddings(dir, table);
        mark_complete(dir);
        // reload so cached and fresh runs see identical float32 values
        table_ = load_embeddings(dir);
      }
    });
    return *table_;
  }

  const BlackBox& blackbox() {
    if (blackbox_) return *blackbox_;
    const auto& split = data();
    staged("train-blackbox", [&] {
      const auto& model = cfg_.blackbox.model;
      if (model == "fpmc") {
        auto opt = cfg_.blackbox.fpmc;
        opt.seed = cfg_.stage_seed(2);
        const fs::path dir = cache_dir("fpmc", blackbox_key());
        if (!complete(dir)) {
          train_fpmc(split.train, split.n_items, opt).save(dir);
          mark_complete(dir);
        }
        blackbox_ = std::make_unique<FpmcModel>(FpmcModel::load(dir));
      } else if (model == "markov") {
        blackbox_ = std::make_unique<MarkovModel>(train_markov(split.train, split.n_items));
      } else if (model == "popularity") {
        blackbox_ = std::make_unique<PopularityModel>(popularity_model(split.train, split.n_items));
      } else {
        blackbox_ = std::make_unique<ExternalModel>(
            ExternalModel::load(cfg_.blackbox.predictions, split.n_items, &log_->items));
      }
    });
    return *blackbox_;
  }

  const Vae<float>& vae() {
    if (vae_) return *vae_;
    const auto& split = data();
    const auto& table = embeddings();
    staged("train-vae", [&] {
      auto opt = cfg_.vae;
      opt.seed = cfg_.stage_seed(3);
      const fs::path dir = cache_dir("vae", vae_key());
      if (!complete(dir)) {
        auto model = train_vae(split.test_input, table, opt, [&](int epoch, const VaeLoss& loss) {
          if ((epoch + 1) % 25 == 0 || epoch == 0)
            log::info("train-vae: epoch " + std::to_string(epoch + 1) + " reconstruction " +
                      format_double(loss.reconstruction) + " kl " + format_double(loss.kl));
        });
        save_vae(dir, model, opt);
        mark_complete(dir);
      }
      vae_ = load_vae(dir);
      reconstruction_ = reconstruction_accuracy(*vae_, split.test_input, table.items);
      log::info("train-vae: reconstruction accuracy " + format_double(reconstruction_));
    });
    return *vae_;
  }

  double vae_reconstruction_accuracy() {
    vae();
    return reconstruction_;
  }

  const std::vector<PerturbedPairSet>& pairs() {
    if (pairs_) return *pairs_;
    const auto& split = data();
    const auto& table = embeddings();
    const auto& box = blackbox();
    const auto& model = vae();
    staged("perturb", [&] {
      const fs::path dir = cache_dir("pairs", pairs_key());
      std::vector<PerturbedPairSet> sets(split.n_users());
      if (complete(dir)) {
        for (std::size_t u = 0; u < sets.size(); ++u) {
          const auto path = dir / (std::to_string(u) + ".tsv");
          sets[u] = parse_pairs(io::read_text(path), static_cast<UserId>(u), path.string());
          sets[u].m = cfg_.perturbation.m;
        }
      } else {
        const auto base = cfg_.stage_seed(4);
        parallel_for(sets.size(), cfg_.threads, [&](std::size_t u) {
          sets[u] = build_pairs(static_cast<UserId>(u), split.test_input[u], box, model, table, cfg_.perturbation,
                                derive_seed(base, u));
        });
        for (std::size_t u = 0; u < sets.size(); ++u)
          io::write_text(dir / (std::to_string(u) + ".tsv"), format_pairs(sets[u]));
        mark_complete(dir);
      }
      pairs_ = std::move(sets);
    });
    return *pairs_;
  }

  /// Fits, selects and verifies for every user; writes explanations.tsv.
  const std::vector<UserOutcome>& explain() {
    if (outcomes_) return *outcomes_;
    const auto& sets = pairs();
    staged("explain", [&] {
      outcomes_ = explain_all(sets, cfg_.causal, cfg_.k, cfg_.threads, cfg_.dump_theta);
      std::string text = "user\tcause\teffect\ttheta\trank\texplained\n";
      for (const auto& o : *outcomes_) {
        text += raw_user(o.user) + '\t';
        if (o.explanation)
          text += raw_item(o.explanation->cause) + '\t' + raw_item(o.explanation->effect) + '\t' +
                  format_double(o.explanation->dependency) + '\t' + std::to_string(o.explanation->rank) + "\t1\n";
        else
          text += "-\t" + raw_item(o.original.output) + "\t0\t0\t0\n";
      }
      io::write_text(out_ / "explanations.tsv", text);
      if (cfg_.dump_theta)
        for (const auto& o : *outcomes_)
          io::write_text(out_ / "theta" / (std::to_string(o.user) + ".tsv"), format_theta(*o.dependencies));
    });
    return *outcomes_;
  }

  /// Verification, association baseline and the JSON report.
  RunReport evaluate() {
    const auto& outcomes = explain();
    const auto& sets = pairs();
    RunReport report;
    staged("evaluate", [&] {
      report.model = cfg_.blackbox.model;
      report.dataset = cfg_.dataset.path;
      report.users = outcomes.size();
      report.k = cfg_.k;
      report.m = cfg_.perturbation.m;
      report.gamma = cfg_.causal.gamma;
      report.temperature = cfg_.perturbation.temperature;
      report.causal = summarize(outcomes);
      report.vae_reconstruction_accuracy = vae_reconstruction_accuracy();
      report.notes = cfg_.notes();

      double hamming = 0, distinct = 0;
      std::size_t pair_count = 0;
      for (const auto& s : sets) {
        distinct += static_cast<double>(s.perturbed.size());
        report.shortfall_users += s.perturbed.size() < s.m;
        for (const auto& p : s.perturbed) {
          hamming += static_cast<double>(hamming_distance(p.history, s.original.history));
          ++pair_count;
        }
      }
      report.mean_perturbations = sets.empty() ? 0 : distinct / static_cast<double>(sets.size());
      report.mean_hamming = pair_count ? hamming / static_cast<double>(pair_count) : 0;

      const auto rules = mine_association_rules(association_transactions(sets), cfg_.association.min_support,
                                                cfg_.association.min_confidence, cfg_.association.min_lift);
      std::map<RuleMeasure, std::vector<std::optional<AssociationExplanation>>> assoc;
      for (auto measure : kRuleMeasures) {
        auto& list = assoc[measure];
        for (const auto& s : sets)
          list.push_back(association_explain(s.original.history, s.original.output, rules.get(measure), measure));
        report.association_fidelity[to_string(measure)] =
            fidelity(std::span<const std::optional<AssociationExplanation>>(list), sets.size());
        report.association_rules[to_string(measure)] = rules.get(measure).size();
      }

      std::string detail =
          "user\thistory\trecommendation\texplained\tcause\ttheta\trank\tverified\tp_do_cause\tp_do_not_cause"
          "\tassoc_support\tassoc_confidence\tassoc_lift\n";
      for (std::size_t u = 0; u < outcomes.size(); ++u) {
        const auto& o = outcomes[u];
        std::string history;
        for (std::size_t j = 0; j < o.original.history.size(); ++j)
          history += (j ? "," : "") + raw_item(o.original.history[j]);
        detail += raw_user(o.user) + '\t' + history + '\t' + raw_item(o.original.output) + '\t';
        if (o.explanation) {
          const auto& v = *o.verification;
          detail += "1\t" + raw_item(o.explanation->cause) + '\t' + format_double(o.explanation->dependency) + '\t' +
                    std::to_string(o.explanation->rank) + '\t' + (v.verified ? "1" : "0") + '\t' +
                    ratio(v.p_do_cause) + '\t' + ratio(v.p_do_not_cause);
        } else {
          detail += "0\t-\t0\t0\t0\t-\t-";
        }
        for (auto measure : kRuleMeasures) {
          const auto& a = assoc[measure][u];
          detail += '\t' + (a ? raw_item(a->antecedent) : std::string("-"));
        }
        detail += '\n';
      }
      io::write_text(out_ / "users.tsv", detail);
      io::write_json(out_ / "report.json", report.to_json());
      for (const auto& note : report.notes) log::info("note: " + note);
      log::info("evaluate: fidelity " + format_double(report.causal.fidelity) + ", verified " +
                format_double(report.causal.verified_percentage));
    });
    return report;
  }

  /// Gamma sweeps reuse the cached pairs; m sweeps generate max(values)
  /// perturbations once (reusing the perturbation model) and truncate.
  std::vector<SweepRow> sweep(SweepParameter parameter, std::span<const double> values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (parameter == SweepParameter::m) {
      const double top = *std::max_element(values.begin(), values.end());
      if (top < 0 || top != std::floor(top)) throw ConfigError("m sweep values must be non-negative integers");
      if (static_cast<std::size_t>(top) != cfg_.perturbation.m) {
        cfg_.perturbation.m = static_cast<std::size_t>(top);
        pairs_.reset();
        outcomes_.reset();
      }
    }
    const auto& sets = pairs();
    std::vector<SweepRow> rows;
    staged("sweep", [&] {
      rows = causalrec::sweep(parameter, values, sets, cfg_.causal, cfg_.k, cfg_.threads);
      const char* name = parameter == SweepParameter::gamma ? "gamma" : "m";
      io::write_text(out_ / (std::string("sweep_") + name + ".tsv"), format_sweep(parameter, rows));
    });
    return rows;
  }

  // cache keys ---------------------------------------------------------------

  std::string data_key() {
    if (data_key_.empty()) {
      json j = to_json(cfg_)["dataset"];
      j.erase("path");
      j["n"] = cfg_.n;
      j["test_len"] = cfg_.test_len;
      j["content"] = hex64(fnv1a64(io::read_text(cfg_.dataset.path)));
      data_key_ = hash_of(j);
    }
    return data_key_;
  }

  std::string embedding_key() {
    json j = to_json(cfg_)["embedding"];
    j["data"] = data_key();
    j["seed"] = cfg_.stage_seed(1);
    return hash_of(j);
  }

  std::string blackbox_key() {
    json j = to_json(cfg_)["blackbox"];
    j["data"] = data_key();
    j["seed"] = cfg_.stage_seed(2);
    if (cfg_.blackbox.model == "external") {
      j.erase("predictions");
      j["content"] = hex64(fnv1a64(io::read_text(cfg_.blackbox.predictions)));
    }
    return hash_of(j);
  }

  std::string vae_key() {
    json j = to_json(cfg_)["vae"];
    j["embedding"] = embedding_key();
    j["seed"] = cfg_.stage_seed(3);
    return hash_of(j);
  }

  std::string pairs_key() {
    json j = to_json(cfg_)["perturbation"];
    j["vae"] = vae_key();
    j["blackbox"] = blackbox_key();
    j["seed"] = cfg_.stage_seed(4);
    return hash_of(j);
  }

 private:
  template <class F>
  void staged(const char* stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s: done in %.1fs", stage, secs);
    log::info(buf);
  }

  // Bump when a stage's algorithm changes so stale caches are not reused.
  static constexpr int kCacheVersion = 2;

  static std::string hash_of(json j) {
    j["cache_version"] = kCacheVersion;
    return hex64(fnv1a64(j.dump()));
  }

  fs::path cache_dir(const std::string& stage, const std::string& key) const {
    return out_ / "cache" / (stage + "-" + key);
  }

  static bool complete(const fs::path& dir) { return fs::exists(dir / "COMPLETE"); }
  static void mark_complete(const fs::path& dir) { io::write_text(dir / "COMPLETE", ""); }

  std::string raw_user(UserId u) const { return log_->users.raw(split_->log_user.at(static_cast<std::size_t>(u))); }
  std::string raw_item(ItemId i) const { return log_->items.raw(i); }
  static std::string ratio(const Rational& r) { return std::to_string(r.num) + "/" + std::to_string(r.den); }

  PipelineConfig cfg_;
  fs::path out_;
  std::string data_key_;
  std::optional<InteractionLog> log_;
  std::optional<SplitDataset> split_;
  std::optional<EmbeddingTable> table_;
  std::unique_ptr<BlackBox> blackbox_;
  std::optional<Vae<float>> vae_;
  double reconstruction_ = 0;
  std::optional<std::vector<PerturbedPairSet>> pairs_;
  std::optional<std::vector<UserOutcome>> outcomes_;
};

/// Full run: every stage through the report.
inline RunReport run_pipeline(const PipelineConfig& config) {
  Pipeline pipeline(config);
  return pipeline.evaluate();
}

inline std::vector<SweepRow> run_sweep(const PipelineConfig& config, SweepParameter parameter,
                                       std::span<const double> values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  Pipeline pipeline(config);
  return pipeline.sweep(parameter, values);
}

}  // namespace causalrec
