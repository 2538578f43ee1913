#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "causalrec/causalrec.hpp"

using namespace causalrec;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
  bool quiet = false;
  bool dump_theta = false;
};

PipelineConfig resolve(const Common& c) {
  auto cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out_dir) cfg.out_dir = *c.out_dir;
  if (c.threads) cfg.threads = *c.threads;
  if (c.dump_theta) cfg.dump_theta = true;
  cfg.validate();
  return cfg;
}

void print_report(const RunReport& r) {
  std::printf("model              %s\n", r.model.c_str());
  std::printf("users              %zu\n", r.users);
  std::printf("k / m / gamma      %d / %zu / %g\n", r.k, r.m, r.gamma);
  std::printf("fidelity           %.4f\n", r.causal.fidelity);
  std::printf("verified           %.4f (%zu of %zu, %zu undefined)\n", r.causal.verified_percentage,
              r.causal.verified, r.causal.explained, r.causal.undefined_counterfactual);
  for (const auto& [measure, value] : r.association_fidelity)
    std::printf("assoc %-12s %.4f\n", measure.c_str(), value);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual causal explanations for sequential recommenders"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "override the global seed");
  app.add_option("--out-dir", common.out_dir, "override the output directory");
  app.add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", common.quiet, "suppress progress logging");
  app.add_flag("--dump-theta", common.dump_theta, "write per-user dependency tables");

  auto* prepare = app.add_subcommand("prepare", "load, filter and split the dataset");
  auto* embed = app.add_subcommand("train-embeddings", "train BPR item embeddings");
  auto* box = app.add_subcommand("train-blackbox", "train the recommender to explain");
  auto* vae = app.add_subcommand("train-vae", "train the perturbation model");
  auto* explain = app.add_subcommand("explain", "perturb, fit and select explanations");
  auto* evaluate = app.add_subcommand("evaluate", "verify explanations and write report.json");
  auto* run_all = app.add_subcommand("run-all", "every stage through the report");
  auto* sweep_cmd = app.add_subcommand("sweep", "evaluate over a range of gamma or m");
  std::string param;
  std::vector<double> values;
  sweep_cmd->add_option("--param", param, "gamma or m")->required()->check(CLI::IsMember({"gamma", "m"}));
  sweep_cmd->add_option("--values", values, "comma-separated values")->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  log::set_quiet(common.quiet);

  PipelineConfig cfg;
  try {
    cfg = resolve(common);
  } catch (const std::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 1;
  }

  try {
    Pipeline pipeline(cfg);
    if (prepare->parsed()) {
      const auto& split = pipeline.data();
      std::printf("%zu users, %zu items, %zu train / %zu test interactions\n", split.n_users(), split.n_items,
                  split.train_interactions(), split.test_interactions());
    } else if (embed->parsed()) {
      pipeline.embeddings();
    } else if (box->parsed()) {
      pipeline.blackbox();
    } else if (vae->parsed()) {
      std::printf("reconstruction accuracy %.4f\n", pipeline.vae_reconstruction_accuracy());
    } else if (explain->parsed()) {
      const auto m = summarize(pipeline.explain());
      std::printf("explained %zu of %zu users\n", m.explained, m.users);
    } else if (evaluate->parsed() || run_all->parsed()) {
      print_report(pipeline.evaluate());
    } else if (sweep_cmd->parsed()) {
      const auto p = param == "gamma" ? SweepParameter::gamma : SweepParameter::m;
      std::fputs(format_sweep(p, pipeline.sweep(p, values)).c_str(), stdout);
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
