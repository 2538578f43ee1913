#include <gtest/gtest.h>

#include "support.hpp"

using namespace causalrec;

namespace {

double relative_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace

TEST(Bpr, TripleGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> init(-0.5, 0.5);
  const double l2 = 1e-2;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> vec(3 * 8);
    for (auto& v : vec) v = init(rng);
    if (trial == 0) std::fill(vec.begin(), vec.end(), 0.0);  // zero-init step
    auto u = std::span<double>(vec).subspan(0, 8), p = std::span<double>(vec).subspan(8, 8),
         q = std::span<double>(vec).subspan(16, 8);
    std::vector<double> g(24);
    bpr_triple_gradient<double>(u, p, q, l2, std::span<double>(g).subspan(0, 8), std::span<double>(g).subspan(8, 8),
                                std::span<double>(g).subspan(16, 8));
    auto f = [&] { return bpr_triple_objective<double>(u, p, q, l2); };
    for (std::size_t k = 0; k < vec.size(); ++k) {
      const double h = 1e-6, saved = vec[k];
      vec[k] = saved + h;
      const double up = f();
      vec[k] = saved - h;
      const double down = f();
      vec[k] = saved;
      const double numeric = (up - down) / (2 * h);
      if (std::abs(g[k]) < 1e-9 && std::abs(numeric) < 1e-9) continue;
      EXPECT_LT(relative_error(g[k], numeric), 1e-6) << "coordinate " << k;
    }
  }
}

TEST(Bpr, ShapeAndDeterminism) {
  const std::vector<History> train{{0, 1, 2}, {2, 3, 4}, {4, 5, 0}};
  BprOptions opt;
  opt.epochs = 5;
  const auto a = train_bpr(train, 6, opt), b = train_bpr(train, 6, opt);
  EXPECT_EQ(a.items.rows(), 6);
  EXPECT_EQ(a.items.cols(), 16);
  EXPECT_EQ(a.users.rows(), 3);
  EXPECT_TRUE(a.items.allFinite());
  EXPECT_TRUE(a.items == b.items);
  EXPECT_TRUE(a.users == b.users);
  opt.seed = 43;
  EXPECT_FALSE(train_bpr(train, 6, opt).items == a.items);
}

TEST(Bpr, RejectsBadDimension) {
  BprOptions opt;
  opt.dim = 0;
  EXPECT_THROW(train_bpr({{0}}, 1, opt), ConfigError);
}

TEST(Bpr, UserCoveringAllItemsIsSkipped) {
  BprOptions opt;
  opt.epochs = 3;
  const auto table = train_bpr({{0, 1}, {0}}, 2, opt);
  EXPECT_TRUE(table.items.allFinite());
}

TEST(Bpr, ObjectiveIsMonotoneForSmallSteps) {
  const std::vector<History> train{{0, 1}, {1, 2}, {3, 4}, {4, 5}};
  std::vector<BprTriple> triples;
  for (std::size_t u = 0; u < train.size(); ++u)
    for (auto pos : train[u])
      for (ItemId neg = 0; neg < 6; ++neg)
        if (std::find(train[u].begin(), train[u].end(), neg) == train[u].end()) triples.push_back({u, pos, neg});
  BprOptions opt;
  opt.learning_rate = 1e-3;
  opt.epochs = 50;
  opt.init_scale = 0.5;
  std::vector<double> curve;
  train_bpr(train, 6, opt, [&](int, const MatrixD& users, const MatrixD& items) {
    curve.push_back(bpr_objective(users, items, triples, opt.l2_reg));
  });
  for (std::size_t e = 1; e < curve.size(); ++e) EXPECT_GE(curve[e], curve[e - 1]) << "epoch " << e;
  EXPECT_GT(curve.back(), curve.front());
}

TEST(Bpr, SeparatesDisjointClusters) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<ItemId> pick(0, 9);
  std::vector<History> train(20);
  for (std::size_t u = 0; u < train.size(); ++u) {
    const ItemId base = u < 10 ? 0 : 10;
    for (int k = 0; k < 8; ++k) train[u].push_back(base + pick(rng));
  }
  BprOptions opt;
  opt.epochs = 200;
  const auto table = train_bpr(train, 20, opt);
  double intra = 0, inter = 0;
  int n_intra = 0, n_inter = 0;
  for (Eigen::Index i = 0; i < 20; ++i)
    for (Eigen::Index j = i + 1; j < 20; ++j) {
      const double d = table.items.row(i).dot(table.items.row(j));
      if ((i < 10) == (j < 10)) intra += d, ++n_intra;
      else inter += d, ++n_inter;
    }
  EXPECT_GT(intra / n_intra, inter / n_inter);
}

TEST(Nearest, HandExamples) {
  MatrixF items(2, 2);
  items << 1, 0, 0, 2;
  EXPECT_EQ(nearest_item(Eigen::Vector2f(1, 0), items), 0);
  EXPECT_EQ(nearest_item(Eigen::Vector2f(1, 1), items), 1);
  EXPECT_EQ(nearest_item(Eigen::Vector2f(1, 1), items, {1}), 0);
  EXPECT_THROW(nearest_item(Eigen::Vector2f(1, 1), items, {0, 1}), DataError);
  EXPECT_THROW(nearest_item(Eigen::Vector3f(1, 1, 1), items), ConfigError);
}

TEST(Nearest, TiesGoToSmallestIdRegardlessOfRowOrder) {
  MatrixF items(3, 2);
  items << 0, 1, 1, 0, 1, 0;
  EXPECT_EQ(nearest_item(Eigen::Vector2f(1, 0), items), 1);
  EXPECT_EQ(nearest_items(items, Eigen::MatrixXf(Eigen::Vector2f(1, 0))), std::vector<ItemId>{1});
}

TEST(Nearest, AgreesWithExhaustiveScan) {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> normal;
  MatrixF items(50, 16);
  for (Eigen::Index i = 0; i < items.size(); ++i) items.data()[i] = normal(rng);
  Eigen::MatrixXf queries(16, 100);
  for (Eigen::Index i = 0; i < queries.size(); ++i) queries.data()[i] = normal(rng);
  const auto batched = nearest_items(items, queries);
  for (Eigen::Index c = 0; c < 100; ++c) {
    ItemId best = 0;
    double best_score = -1e300;
    for (Eigen::Index i = 0; i < 50; ++i) {
      double s = 0;
      for (Eigen::Index f = 0; f < 16; ++f) s += double(items(i, f)) * double(queries(f, c));
      if (s > best_score) best_score = s, best = static_cast<ItemId>(i);
    }
    EXPECT_EQ(nearest_item(queries.col(c), items), best);
    EXPECT_EQ(batched[static_cast<std::size_t>(c)], best);
  }
}

TEST(Checkpoint, RoundTripsExactly) {
  BprOptions opt;
  opt.epochs = 2;
  const auto table = train_bpr({{0, 1, 2}, {1, 2}}, 3, opt);
  const auto dir = support::temp_dir("embedding_ckpt");
  save_embeddings(dir, table);
  const auto back = load_embeddings(dir);
  EXPECT_TRUE(back.items == table.items);
  EXPECT_TRUE(back.users == table.users);
  EXPECT_EQ(back.seed, table.seed);
  const auto header = io::read_json(dir / "embedding.json");
  EXPECT_EQ(header.at("dim").get<int>(), 16);
  std::filesystem::resize_file(dir / "items.f32", 8);
  EXPECT_ANY_THROW(load_embeddings(dir));
}
