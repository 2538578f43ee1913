#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace causalrec;

namespace {

struct Trained {
  std::vector<History> histories;
  EmbeddingTable table;
  Vae<float> vae;
};

// Small model on planted walks, shared across tests.
const Trained& trained() {
  static const Trained t = [] {
    const auto planted = support::planted_log(120, 40, 12, 20, 0.7, 17);
    std::vector<History> seqs(120);
    for (const auto& [u, i, ts] : planted.rows) seqs[static_cast<std::size_t>(u)].push_back(static_cast<ItemId>(i));
    std::vector<History> train, inputs;
    for (auto& s : seqs) {
      inputs.emplace_back(s.end() - 6, s.end() - 1);
      train.emplace_back(s.begin(), s.end() - 6);
    }
    auto table = train_bpr(train, 40);
    VaeOptions opt;
    opt.hidden = 128;
    opt.epochs = 150;
    auto vae = train_vae(inputs, table, opt);
    return Trained{inputs, std::move(table), std::move(vae)};
  }();
  return t;
}

Matrix<double> random_items(std::mt19937_64& rng, int count, int dim) {
  std::normal_distribution<double> normal;
  Matrix<double> items(count, dim);
  for (Eigen::Index i = 0; i < items.size(); ++i) items.data()[i] = normal(rng);
  return items;
}

}  // namespace

TEST(Vae, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const auto items = random_items(rng, 7, 4);
  const VaeShape shape{3, 4, 3, 6};
  Vae<double> vae(shape, 5);
  // push log_var away from zero so its path is exercised
  vae.params().log_var.bias.setConstant(-0.3);
  const std::vector<History> histories{{0, 3, 6}, {2, 2, 5}};
  ColMatrix<double> eps(3, 2);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  const double kl_weight = 0.7;

  auto grad = VaeParams<double>::zeros_like(vae.params());
  vae.loss(histories, items, eps, kl_weight, &grad);

  std::vector<double*> coords;
  vae.params().for_each([&](ColMatrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) coords.push_back(m.data() + i);
  });
  std::vector<double> analytic;
  grad.for_each([&](const ColMatrix<double>& m) { analytic.insert(analytic.end(), m.data(), m.data() + m.size()); });
  ASSERT_EQ(coords.size(), analytic.size());

  std::size_t checked = 0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const double h = 1e-6, saved = *coords[k];
    *coords[k] = saved + h;
    const double up = vae.loss(histories, items, eps, kl_weight).total;
    *coords[k] = saved - h;
    const double down = vae.loss(histories, items, eps, kl_weight).total;
    *coords[k] = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-3});
    EXPECT_LT(std::abs(numeric - analytic[k]) / scale, 1e-4) << "parameter " << k;
    ++checked;
  }
  EXPECT_EQ(checked, coords.size());
}

TEST(Vae, KlOfStandardPosteriorIsZero) {
  std::mt19937_64 rng(1);
  const auto items = random_items(rng, 5, 2);
  Vae<double> vae({2, 2, 3, 4}, 1);
  for (auto* layer : {&vae.params().mu, &vae.params().log_var}) {
    layer->weight.setZero();
    layer->bias.setZero();
  }
  const auto loss = vae.loss({{0, 1}}, items, ColMatrix<double>::Zero(3, 1), 1.0);
  EXPECT_EQ(loss.kl, 0.0);
  EXPECT_EQ(loss.total, loss.reconstruction);
}

TEST(Vae, ShapesAndConfigErrors) {
  std::mt19937_64 rng(1);
  const auto items = random_items(rng, 6, 4);
  const Vae<double> vae({5, 4, 3, 8}, 1);
  const auto x = Vae<double>::embed({{0, 1, 2, 3, 4}, {5, 5, 5, 5, 5}}, items);
  EXPECT_EQ(x.rows(), 20);
  const auto enc = vae.encode(x);
  EXPECT_EQ(enc.mu.rows(), 3);
  EXPECT_EQ(vae.decode(enc.mu).rows(), 20);
  EXPECT_TRUE(enc.log_var.allFinite());
  for (const auto& h : vae.reconstruct({{0, 1, 2, 3, 4}}, items)) EXPECT_EQ(h.size(), 5u);
  EXPECT_THROW(Vae<double>({5, 4, 0, 8}, 1), ConfigError);

  EmbeddingTable table;
  table.items = random_items(rng, 6, 4).cast<float>();
  VaeOptions opt;
  opt.latent_dim = 0;
  EXPECT_THROW(train_vae({{0, 1}}, table, opt), ConfigError);
  EXPECT_THROW(train_vae({{0, 1}, {0}}, table, {}), DataError);
}

TEST(Vae, TrainingReconstructsAndIsDeterministic) {
  const auto& t = trained();
  EXPECT_GE(reconstruction_accuracy(t.vae, t.histories, t.table.items), 0.9);
  VaeOptions opt;
  opt.hidden = 16;
  opt.epochs = 3;
  const auto a = train_vae(t.histories, t.table, opt), b = train_vae(t.histories, t.table, opt);
  std::vector<float> fa, fb;
  a.params().for_each([&](const ColMatrix<float>& m) { fa.insert(fa.end(), m.data(), m.data() + m.size()); });
  b.params().for_each([&](const ColMatrix<float>& m) { fb.insert(fb.end(), m.data(), m.data() + m.size()); });
  EXPECT_EQ(fa, fb);
}

TEST(Vae, CheckpointRoundTrip) {
  const auto& t = trained();
  const auto dir = support::temp_dir("vae_ckpt");
  save_vae(dir, t.vae, {});
  const auto back = load_vae(dir);
  EXPECT_EQ(back.reconstruct(t.histories, t.table.items), t.vae.reconstruct(t.histories, t.table.items));
  std::filesystem::resize_file(dir / "vae.f32", 16);
  EXPECT_ANY_THROW(load_vae(dir));
}

TEST(Perturb, ZeroTemperatureGivesReconstruction) {
  const auto& t = trained();
  std::mt19937_64 rng(3);
  const auto& h = t.histories[0];
  const auto expected = t.vae.reconstruct({h}, t.table.items)[0];
  for (const auto& draw : sample_histories(t.vae, h, t.table.items, 20, 1e-12, rng)) EXPECT_EQ(draw, expected);
}

TEST(Perturb, DistinctExcludesOriginalAndDeterministic) {
  const auto& t = trained();
  PerturbOptions opt;
  opt.m = 40;
  opt.temperature = 2.0;
  const auto& h = t.histories[5];
  const auto a = perturb_history(t.vae, h, t.table.items, opt, 99);
  const auto b = perturb_history(t.vae, h, t.table.items, opt, 99);
  EXPECT_EQ(a.histories, b.histories);
  EXPECT_LE(a.histories.size(), 40u);
  EXPECT_LE(a.draws, 800u);
  std::set<History> unique(a.histories.begin(), a.histories.end());
  EXPECT_EQ(unique.size(), a.histories.size());
  EXPECT_FALSE(unique.contains(h));
  for (const auto& p : a.histories) {
    ASSERT_EQ(p.size(), h.size());
    for (auto i : p) EXPECT_TRUE(i >= 0 && i < 40);
  }
}

TEST(Perturb, SmallerMIsAPrefix) {
  const auto& t = trained();
  PerturbOptions big;
  big.m = 30;
  big.temperature = 3.0;
  auto small = big;
  small.m = 10;
  const auto& h = t.histories[9];
  const auto a = perturb_history(t.vae, h, t.table.items, big, 7);
  const auto b = perturb_history(t.vae, h, t.table.items, small, 7);
  ASSERT_EQ(a.histories.size(), 30u);
  EXPECT_EQ(b.histories, std::vector<History>(a.histories.begin(), a.histories.begin() + 10));
}

TEST(Perturb, BudgetAndErrors) {
  const auto& t = trained();
  PerturbOptions opt;
  opt.m = 1000;
  opt.max_attempts = 50;
  opt.temperature = 1e-6;  // collapses onto one history
  const auto r = perturb_history(t.vae, t.histories[0], t.table.items, opt, 1);
  EXPECT_EQ(r.draws, 50u);
  EXPECT_LE(r.histories.size(), 1u);
  opt.temperature = 0;
  EXPECT_THROW(perturb_history(t.vae, t.histories[0], t.table.items, opt, 1), ConfigError);
  const MatrixF narrow = t.table.items.leftCols(8);
  opt.temperature = 1;
  EXPECT_THROW(perturb_history(t.vae, t.histories[0], narrow, opt, 1), ConfigError);
}

TEST(Perturb, CoverageGrowsWithTemperature) {
  const auto& t = trained();
  std::size_t previous = 0;
  for (double temperature : {0.5, 1.0, 2.0}) {
    std::set<ItemId> seen;
    for (std::size_t u = 0; u < 20; ++u) {
      std::mt19937_64 rng(derive_seed(5, u));
      for (const auto& h : sample_histories(t.vae, t.histories[u], t.table.items, 50, temperature, rng))
        seen.insert(h.begin(), h.end());
    }
    EXPECT_GE(seen.size(), previous) << "temperature " << temperature;
    previous = seen.size();
  }
}

TEST(Pairs, BlackBoxContracts) {
  const auto& t = trained();
  PerturbOptions opt;
  opt.m = 30;
  opt.temperature = 2.0;
  std::vector<History> train(t.histories);
  const auto popular = popularity_model(train, 40);
  const auto pop_set = build_pairs(0, t.histories[0], popular, t.vae, t.table, opt, 4);
  pop_set.for_each([&](const IoPair& p) { EXPECT_EQ(p.output, pop_set.original.output); });

  const auto markov = train_markov(train, 40);
  const auto mk = build_pairs(1, t.histories[1], markov, t.vae, t.table, opt, 4);
  EXPECT_EQ(mk.original.output, markov.recommend(1, t.histories[1]));
  for (const auto& p : mk.perturbed) {
    if (p.history.back() == mk.original.history.back()) {
      EXPECT_EQ(p.output, mk.original.output);
    }
  }

  opt.m = 0;
  const auto only = build_pairs(2, t.histories[2], markov, t.vae, t.table, opt, 4);
  EXPECT_EQ(only.size(), 1u);
  EXPECT_TRUE(only.perturbed.empty());
}

TEST(Pairs, ExternalErrorsPropagate) {
  const auto& t = trained();
  const auto dir = support::temp_dir("pairs_external");
  io::write_text(dir / "pred.tsv", join_items(t.histories[0]) + "\t3\n");
  const auto external = ExternalModel::load(dir / "pred.tsv", 40);
  PerturbOptions opt;
  opt.m = 5;
  opt.temperature = 2.0;
  EXPECT_THROW(build_pairs(0, t.histories[0], external, t.vae, t.table, opt, 1), UnmappedHistory);
}

TEST(Pairs, DumpRoundTrip) {
  PerturbedPairSet set;
  set.user = 4;
  set.original = {{1, 2, 3}, 9};
  set.perturbed = {{{1, 2, 4}, 9}, {{0, 2, 3}, 7}};
  set.m = 2;
  const auto text = format_pairs(set);
  EXPECT_EQ(text, "1,2,3\t9\t1\n1,2,4\t9\t0\n0,2,3\t7\t0\n");
  EXPECT_EQ(parse_pairs(text, 4), set);
  EXPECT_THROW(parse_pairs("1,2\t3\t0\n", 0), ParseError);
  EXPECT_EQ(set.prefix(1).perturbed.size(), 1u);
  EXPECT_EQ(hamming_distance(History{1, 2, 3}, History{1, 0, 0}), 2u);
}
