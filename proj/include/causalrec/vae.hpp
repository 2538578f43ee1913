#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "causalrec/common.hpp"
#include "causalrec/io.hpp"

namespace causalrec {

template <class S>
using ColMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using ColVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct DenseLayer {
  ColMatrix<S> weight;  // out x in
  ColMatrix<S> bias;    // out x 1

  DenseLayer() = default;
  DenseLayer(Eigen::Index in, Eigen::Index out) : weight(ColMatrix<S>::Zero(out, in)), bias(ColMatrix<S>::Zero(out, 1)) {}

  ColMatrix<S> forward(const ColMatrix<S>& x) const { return (weight * x).colwise() + bias.col(0); }
};

/// Encoder: x -> tanh -> tanh -> (mu, log_var); decoder: z -> tanh -> tanh -> linear.
template <class S>
struct VaeParams {
  DenseLayer<S> enc1, enc2, mu, log_var, dec1, dec2, out;

  template <class F>
  void for_each(F&& f) {
    for (auto* layer : {&enc1, &enc2, &mu, &log_var, &dec1, &dec2, &out}) {
      f(layer->weight);
      f(layer->bias);
    }
  }

  template <class F>
  void for_each(F&& f) const {
    for (const auto* layer : {&enc1, &enc2, &mu, &log_var, &dec1, &dec2, &out}) {
      f(layer->weight);
      f(layer->bias);
    }
  }

  static VaeParams zeros_like(const VaeParams& other) {
    VaeParams z = other;
    z.for_each([](auto& m) { m.setZero(); });
    return z;
  }
};

struct VaeShape {
  int n = 5;          // positions per history
  int dim = 16;       // item embedding size
  int latent = 16;
  int hidden = 1024;

  int input() const { return n * dim; }
};

struct VaeLoss {
  double reconstruction = 0;  // summed cross-entropy, averaged over the batch
  double kl = 0;              // averaged over the batch, before weighting
  double total = 0;
};

/// Variational autoencoder over concatenated item embeddings. Reconstruction
/// is scored by a softmax over all items at every position, with logits given
/// by dot products between the decoded position vector and the (frozen) item
/// embeddings.
template <class S>
class Vae {
 public:
  using Mat = ColMatrix<S>;

  Vae() = default;

  /// Glorot-uniform weights, zero biases.
  Vae(const VaeShape& shape, std::uint64_t seed) : shape_(shape) {
    if (shape.latent <= 0) throw ConfigError("latent_dim must be > 0");
    if (shape.hidden <= 0 || shape.n <= 0 || shape.dim <= 0) throw ConfigError("vae shape must be positive");
    const Eigen::Index in = shape.input(), h = shape.hidden, l = shape.latent;
    params_.enc1 = DenseLayer<S>(in, h);
    params_.enc2 = DenseLayer<S>(h, h);
    params_.mu = DenseLayer<S>(h, l);
    params_.log_var = DenseLayer<S>(h, l);
    params_.dec1 = DenseLayer<S>(l, h);
    params_.dec2 = DenseLayer<S>(h, h);
    params_.out = DenseLayer<S>(h, in);
    std::mt19937_64 rng(seed);
    for (auto* layer : {&params_.enc1, &params_.enc2, &params_.mu, &params_.log_var, &params_.dec1, &params_.dec2,
                        &params_.out}) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer->weight.rows() + layer->weight.cols()));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < layer->weight.size(); ++i) layer->weight.data()[i] = static_cast<S>(dist(rng));
    }
  }

  Vae(const VaeShape& shape, VaeParams<S> params) : shape_(shape), params_(std::move(params)) {}

  const VaeShape& shape() const { return shape_; }
  VaeParams<S>& params() { return params_; }
  const VaeParams<S>& params() const { return params_; }

  /// Columns of the result are concatenated embeddings of each history.
  static Mat embed(const std::vector<History>& histories, const Matrix<S>& items) {
    const Eigen::Index d = items.cols();
    const Eigen::Index n = histories.empty() ? 0 : static_cast<Eigen::Index>(histories.front().size());
    Mat x(n * d, static_cast<Eigen::Index>(histories.size()));
    for (std::size_t b = 0; b < histories.size(); ++b) {
      if (static_cast<Eigen::Index>(histories[b].size()) != n) throw DataError("histories differ in length");
      for (Eigen::Index p = 0; p < n; ++p)
        x.block(p * d, static_cast<Eigen::Index>(b), d, 1) = items.row(histories[b][static_cast<std::size_t>(p)]).transpose();
    }
    return x;
  }

  struct Encoded {
    Mat mu;
    Mat log_var;
  };

  Encoded encode(const Mat& x) const {
    const Mat g2 = hidden_pass(params_.enc1, params_.enc2, x);
    return {params_.mu.forward(g2), params_.log_var.forward(g2)};
  }

  Mat decode(const Mat& z) const { return params_.out.forward(hidden_pass(params_.dec1, params_.dec2, z)); }

  /// Position-wise nearest items of decoded columns.
  std::vector<History> to_histories(const Mat& decoded, const Matrix<S>& items) const {
    const Eigen::Index d = shape_.dim;
    std::vector<History> out(static_cast<std::size_t>(decoded.cols()), History(static_cast<std::size_t>(shape_.n)));
    for (int p = 0; p < shape_.n; ++p) {
      const Mat scores = items * decoded.middleRows(p * d, d);
      for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < scores.rows(); ++i)
          if (scores(i, c) > scores(best, c)) best = i;
        out[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)] = static_cast<ItemId>(best);
      }
    }
    return out;
  }

  /// Deterministic reconstruction: decode the posterior mean.
  std::vector<History> reconstruct(const std::vector<History>& histories, const Matrix<S>& items) const {
    return to_histories(decode(encode(embed(histories, items)).mu), items);
  }

  /// Mean batch loss for fixed reparameterization noise `eps` (latent x B).
  /// When `grad` is non-null it receives d(loss)/d(params).
  VaeLoss loss(const std::vector<History>& histories, const Matrix<S>& items, const Mat& eps, S kl_weight,
               VaeParams<S>* grad = nullptr) const {
    const auto batch = static_cast<Eigen::Index>(histories.size());
    const S inv_batch = S(1) / static_cast<S>(batch);
    const Eigen::Index d = shape_.dim;
    const Mat x = embed(histories, items);

    // encoder
    const Mat c1 = params_.enc1.forward(x);
    const Mat g1 = c1.array().tanh().matrix();
    const Mat g2 = params_.enc2.forward(g1).array().tanh().matrix();
    const Mat mu = params_.mu.forward(g2);
    const Mat log_var = params_.log_var.forward(g2);
    const Mat std_dev = (log_var.array() * S(0.5)).exp().matrix();
    const Mat z = mu + std_dev.cwiseProduct(eps);

    // decoder
    const Mat h1 = params_.dec1.forward(z).array().tanh().matrix();
    const Mat h2 = params_.dec2.forward(h1).array().tanh().matrix();
    const Mat out = params_.out.forward(h2);

    VaeLoss result;
    Mat d_out(out.rows(), out.cols());
    for (int p = 0; p < shape_.n; ++p) {
      Mat logits = items * out.middleRows(p * d, d);  // items x B
      for (Eigen::Index b = 0; b < batch; ++b) {
        auto col = logits.col(b);
        const auto target = histories[static_cast<std::size_t>(b)][static_cast<std::size_t>(p)];
        const S peak = col.maxCoeff();
        const S target_logit = col(target) - peak;
        col.array() = (col.array() - peak).exp();
        const S norm = col.sum();
        result.reconstruction += std::log(static_cast<double>(norm)) - static_cast<double>(target_logit);
        col /= norm;
        col(target) -= S(1);
      }
      d_out.middleRows(p * d, d) = items.transpose() * logits * inv_batch;
    }
    result.reconstruction /= static_cast<double>(batch);
    result.kl = static_cast<double>(
        (S(0.5) * (mu.array().square() + log_var.array().exp() - S(1) - log_var.array())).sum() * inv_batch);
    result.total = result.reconstruction + static_cast<double>(kl_weight) * result.kl;
    if (!grad) return result;

    auto& g = *grad;
    auto dense_back = [](const DenseLayer<S>& layer, DenseLayer<S>& layer_grad, const Mat& input, const Mat& d_pre) {
      layer_grad.weight.noalias() = d_pre * input.transpose();
      layer_grad.bias = d_pre.rowwise().sum();
      return Mat(layer.weight.transpose() * d_pre);
    };
    auto tanh_back = [](const Mat& d_act, const Mat& act) {
      return Mat(d_act.array() * (S(1) - act.array().square()));
    };

    Mat d_h2 = dense_back(params_.out, g.out, h2, d_out);
    Mat d_h1 = dense_back(params_.dec2, g.dec2, h1, tanh_back(d_h2, h2));
    const Mat d_z = dense_back(params_.dec1, g.dec1, z, tanh_back(d_h1, h1));

    const S kl_scale = kl_weight * inv_batch;
    const Mat d_mu = d_z + kl_scale * mu;
    const Mat d_log_var = (d_z.array() * S(0.5) * std_dev.array() * eps.array() +
                           kl_scale * S(0.5) * (log_var.array().exp() - S(1)))
                              .matrix();
    Mat d_g2 = dense_back(params_.mu, g.mu, g2, d_mu);
    d_g2 += dense_back(params_.log_var, g.log_var, g2, d_log_var);
    Mat d_g1 = dense_back(params_.enc2, g.enc2, g1, tanh_back(d_g2, g2));
    dense_back(params_.enc1, g.enc1, x, tanh_back(d_g1, g1));
    return result;
  }

 private:
  static Mat hidden_pass(const DenseLayer<S>& a, const DenseLayer<S>& b, const Mat& x) {
    const Mat h = a.forward(x).array().tanh().matrix();
    return b.forward(h).array().tanh().matrix();
  }

  VaeShape shape_;
  VaeParams<S> params_;
};

// ---------------------------------------------------------------------------
// training

struct VaeOptions {
  int latent_dim = 16;
  int hidden = 1024;
  int epochs = 200;
  double learning_rate = 1e-3;
  double kl_weight = 0.1;
  int batch_size = 64;
  std::uint64_t seed = 42;
};

/// Adam state over every parameter tensor.
template <class S>
class Adam {
 public:
  Adam(const VaeParams<S>& like, double lr) : lr_(lr), m_(VaeParams<S>::zeros_like(like)), v_(m_) {}

  void step(VaeParams<S>& params, const VaeParams<S>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
    const S step_size = static_cast<S>(lr_ * std::sqrt(c2) / c1);
    std::vector<ColMatrix<S>*> p, m, v;
    std::vector<const ColMatrix<S>*> g;
    params.for_each([&](ColMatrix<S>& x) { p.push_back(&x); });
    m_.for_each([&](ColMatrix<S>& x) { m.push_back(&x); });
    v_.for_each([&](ColMatrix<S>& x) { v.push_back(&x); });
    grad.for_each([&](const ColMatrix<S>& x) { g.push_back(&x); });
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k]->array() = S(beta1_) * m[k]->array() + S(1 - beta1_) * g[k]->array();
      v[k]->array() = S(beta2_) * v[k]->array() + S(1 - beta2_) * g[k]->array().square();
      p[k]->array() -= step_size * m[k]->array() / (v[k]->array().sqrt() + S(eps_));
    }
  }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  VaeParams<S> m_, v_;
};

}  // namespace causalrec
