#pragma once

// Mean-field variational Bayesian MLP (Bayes by backprop).
//
// Every weight and bias theta has a Gaussian posterior N(mu, softplus(rho)^2)
// and a zero-mean Gaussian prior N(0, prior_std^2). Training maximises the
// ELBO  E_q[log p(y | x, theta)] - kl_weight * KL(q || p)  with the
// reparameterisation theta = mu + softplus(rho) * eps. The likelihood is
// Gaussian with one learnable noise std. Inputs and outputs are standardised
// internally; all ELBO quantities are in standardised units.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"

namespace rdo::bnn {

enum class Activation { Tanh, ReLU, SiLU };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::SiLU: return "silu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::ReLU;
  if (s == "silu") return Activation::SiLU;
  throw InvalidArgument("unknown activation '" + s + "' (expected tanh, relu or silu)");
}

struct Architecture {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::ReLU;

  std::size_t num_layers() const { return hidden.size() + 1; }
  std::size_t fan_in(std::size_t l) const { return l == 0 ? input_dim : hidden[l - 1]; }
  std::size_t fan_out(std::size_t l) const { return l < hidden.size() ? hidden[l] : 1; }

  /// Number of weights plus biases.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) n += fan_in(l) * fan_out(l) + fan_out(l);
    return n;
  }

  void validate() const {
    rdo::detail::require(input_dim >= 1, "bnn: input_dim must be at least 1");
    for (std::size_t w : hidden) rdo::detail::require(w >= 1, "bnn: hidden widths must be at least 1");
  }
};

inline double softplus(double r) { return r > 30.0 ? r : std::log1p(std::exp(r)); }
inline double softplus_inverse(double s) { return s > 30.0 ? s : std::log(std::expm1(s)); }
inline double sigmoid(double r) { return 1.0 / (1.0 + std::exp(-r)); }

struct Normalization {
  Vector x_mean;
  Vector x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
};

/// Offsets of one layer's blocks inside the flat parameter vector.
struct LayerOffsets {
  Eigen::Index in = 0, out = 0;
  Eigen::Index w_mu = 0, w_rho = 0, b_mu = 0, b_rho = 0;
};

/// Flat layout: per layer [w_mu (in x out, column-major), w_rho, b_mu, b_rho],
/// then the likelihood noise parameter.
struct ParamLayout {
  std::vector<LayerOffsets> layers;
  Eigen::Index noise = 0;
  Eigen::Index total = 0;

  explicit ParamLayout(const Architecture& arch) {
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
      LayerOffsets lo;
      lo.in = static_cast<Eigen::Index>(arch.fan_in(l));
      lo.out = static_cast<Eigen::Index>(arch.fan_out(l));
      lo.w_mu = off;
      off += lo.in * lo.out;
      lo.w_rho = off;
      off += lo.in * lo.out;
      lo.b_mu = off;
      off += lo.out;
      lo.b_rho = off;
      off += lo.out;
      layers.push_back(lo);
    }
    noise = off++;
    total = off;
  }

  /// Number of stochastic parameters (weights + biases).
  Eigen::Index stochastic_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.in * l.out + l.out;
    return n;
  }
};

struct VariationalState {
  Architecture arch;
  double prior_std = 1.0;
  Vector params;  // see ParamLayout
  Normalization norm;
  bool constant_output = false;

  ParamLayout layout() const { return ParamLayout(arch); }
  double noise_std() const { return softplus(params[layout().noise]); }
};

/// Fan-in scaled N(0, 1/fan_in) means, zero bias means, posterior std
/// 0.05 * prior_std everywhere, noise std 0.1 (standardised units).
inline VariationalState bnn_init(const Architecture& arch, double prior_std, std::uint64_t seed) {
  arch.validate();
  rdo::detail::require(prior_std > 0.0, "bnn_init: prior_std must be positive");
  VariationalState s;
  s.arch = arch;
  s.prior_std = prior_std;
  const ParamLayout layout(arch);
  s.params = Vector::Zero(layout.total);
  Rng rng = make_rng(seed, {0x494e4954});
  std::normal_distribution<double> normal;
  const double rho0 = softplus_inverse(0.05 * prior_std);
  for (const auto& l : layout.layers) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (Eigen::Index i = 0; i < l.in * l.out; ++i) s.params[l.w_mu + i] = scale * normal(rng);
    s.params.segment(l.w_rho, l.in * l.out).setConstant(rho0);
    s.params.segment(l.b_rho, l.out).setConstant(rho0);
  }
  s.params[layout.noise] = softplus_inverse(0.1);
  const auto n = static_cast<Eigen::Index>(arch.input_dim);
  s.norm.x_mean = Vector::Zero(n);
  s.norm.x_std = Vector::Ones(n);
  return s;
}

namespace detail {

/// One draw theta = mu + softplus(rho) * eps of every weight and bias.
struct SampledNetwork {
  std::vector<Matrix> w;    // in x out
  std::vector<Vector> b;    // out
  std::vector<Matrix> eps_w;
  std::vector<Vector> eps_b;
};

/// Vector over the flat layout holding f(rho) at every rho slot, 0 elsewhere.
template <class F>
inline Vector map_rho(const VariationalState& s, const ParamLayout& layout, F f) {
  Vector out = Vector::Zero(layout.total);
  for (const auto& l : layout.layers) {
    for (Eigen::Index i = 0; i < l.in * l.out; ++i) out[l.w_rho + i] = f(s.params[l.w_rho + i]);
    for (Eigen::Index i = 0; i < l.out; ++i) out[l.b_rho + i] = f(s.params[l.b_rho + i]);
  }
  return out;
}

inline Vector posterior_scales(const VariationalState& s, const ParamLayout& layout) {
  return map_rho(s, layout, [](double r) { return softplus(r); });
}

/// Draws the network from `rng`, or takes the posterior means when rng is null.
/// `scales` comes from posterior_scales().
inline SampledNetwork sample_network(const VariationalState& s, const ParamLayout& layout, const Vector& scales,
                                     Rng* rng, bool keep_noise) {
  SampledNetwork net;
  std::normal_distribution<double> normal;
  for (const auto& l : layout.layers) {
    Eigen::Map<const Matrix> w_mu(s.params.data() + l.w_mu, l.in, l.out);
    Eigen::Map<const Vector> b_mu(s.params.data() + l.b_mu, l.out);
    if (rng == nullptr) {
      net.w.emplace_back(w_mu);
      net.b.emplace_back(b_mu);
      continue;
    }
    Eigen::Map<const Matrix> w_sd(scales.data() + l.w_rho, l.in, l.out);
    Eigen::Map<const Vector> b_sd(scales.data() + l.b_rho, l.out);
    Matrix ew(l.in, l.out);
    for (Eigen::Index i = 0; i < ew.size(); ++i) ew.data()[i] = normal(*rng);
    Vector eb(l.out);
    for (Eigen::Index i = 0; i < eb.size(); ++i) eb[i] = normal(*rng);
    net.w.emplace_back(w_mu.array() + w_sd.array() * ew.array());
    net.b.emplace_back(b_mu.array() + b_sd.array() * eb.array());
    if (keep_noise) {
      net.eps_w.push_back(std::move(ew));
      net.eps_b.push_back(std::move(eb));
    }
  }
  return net;
}

inline void activate(Activation a, Matrix& z) {
  switch (a) {
    // Eigen has no vectorised double tanh; 1 - 2 / (exp(2z) + 1) uses the vectorised exp.
    case Activation::Tanh: z = 1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0); break;
    case Activation::ReLU: z = z.array().max(0.0); break;
    case Activation::SiLU: z = z.array() / (1.0 + (-z.array()).exp()); break;
  }
}

/// Multiplies `grad` by the activation derivative, given pre-activation z and output h.
inline void activation_backward(Activation a, const Matrix& z, const Matrix& h, Matrix& grad) {
  switch (a) {
    case Activation::Tanh: grad.array() *= 1.0 - h.array().square(); break;
    case Activation::ReLU: grad.array() *= (z.array() > 0.0).cast<double>(); break;
    case Activation::SiLU: {
      const Eigen::ArrayXXd sg = 1.0 / (1.0 + (-z.array()).exp());
      grad.array() *= sg * (1.0 + z.array() * (1.0 - sg));
      break;
    }
  }
}

/// Forward pass on standardised inputs; keeps pre-activations and outputs
/// when `zs`/`hs` are given (needed for backprop).
inline Vector forward(const Architecture& arch, const SampledNetwork& net, const Matrix& xn,
                      std::vector<Matrix>* zs = nullptr, std::vector<Matrix>* hs = nullptr) {
  Matrix h = xn;
  const std::size_t layers = net.w.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = h * net.w[l];
    z.rowwise() += net.b[l].transpose();
    if (hs) hs->push_back(h);
    if (l + 1 == layers) return z.col(0);
    if (zs) zs->push_back(z);
    activate(arch.activation, z);
    h = std::move(z);
  }
  return Vector();
}

inline Matrix standardise_inputs(const VariationalState& s, const Matrix& x) {
  return (x.rowwise() - s.norm.x_mean.transpose()).array().rowwise() / s.norm.x_std.transpose().array();
}

/// Standardised-output forward pass over row blocks. Small blocks keep the
/// hidden-layer temporaries cache-sized and off the mmap path of malloc.
inline Vector forward_blocked(const VariationalState& s, const SampledNetwork& net, const Matrix& x) {
  constexpr Eigen::Index kBlock = 128;
  Vector out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); r += kBlock) {
    const Eigen::Index len = std::min(kBlock, x.rows() - r);
    out.segment(r, len) = forward(s.arch, net, standardise_inputs(s, x.middleRows(r, len)));
  }
  return out;
}

}  // namespace detail

/// KL(N(mu_q, sd_q^2) || N(mu_p, sd_p^2)) for scalars.
inline double kl_gaussian(double mu_q, double sd_q, double mu_p, double sd_p) {
  return std::log(sd_p / sd_q) + (sd_q * sd_q + (mu_q - mu_p) * (mu_q - mu_p)) / (2.0 * sd_p * sd_p) - 0.5;
}

/// Closed-form KL(q || p) summed over every weight and bias.
inline double kl_divergence(const VariationalState& s) {
  const ParamLayout layout = s.layout();
  double kl = 0.0;
  for (const auto& l : layout.layers) {
    auto add = [&](Eigen::Index mu_off, Eigen::Index rho_off, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i)
        kl += kl_gaussian(s.params[mu_off + i], softplus(s.params[rho_off + i]), 0.0, s.prior_std);
    };
    add(l.w_mu, l.w_rho, l.in * l.out);
    add(l.b_mu, l.b_rho, l.out);
  }
  return kl;
}

struct ElboResult {
  double elbo = 0.0;
  double log_likelihood = 0.0;  // MC average of sum_n log p(y_n | x_n, theta)
  double kl = 0.0;
  Vector gradient;              // d elbo / d params (flat layout)
};

/// ELBO on a batch (raw units; standardised with the state's normalisation)
/// estimated with `mc_samples` reparameterised weight draws from `seed`,
/// plus its exact gradient w.r.t. every variational parameter.
inline ElboResult elbo(const VariationalState& s, const Matrix& x, const Vector& y, std::size_t mc_samples,
                       double kl_weight, std::uint64_t seed) {
  rdo::detail::require(x.rows() >= 1 && x.rows() == y.size(), "elbo: batch must be nonempty with matching sizes");
  rdo::detail::require(mc_samples >= 1, "elbo: mc_samples must be at least 1");
  const ParamLayout layout = s.layout();
  const Matrix xn = rdo::bnn::detail::standardise_inputs(s, x);
  const Vector yn = (y.array() - s.norm.y_mean) / s.norm.y_std;

  ElboResult r;
  r.gradient = Vector::Zero(layout.total);
  const double noise_rho = s.params[layout.noise];
  const double sn = softplus(noise_rho);
  const double inv_var = 1.0 / (sn * sn);
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sn);
  const double inv_mc = 1.0 / static_cast<double>(mc_samples);
  const auto nb = static_cast<double>(x.rows());

  const Vector scales = rdo::bnn::detail::posterior_scales(s, layout);
  // Rho slots of the gradient first accumulate d/d(scale); the chain rule
  // through softplus is applied once at the end.
  for (std::size_t t = 0; t < mc_samples; ++t) {
    Rng rng = make_rng(seed, {t});
    const auto net = rdo::bnn::detail::sample_network(s, layout, scales, &rng, true);
    std::vector<Matrix> zs, hs;
    const Vector f = rdo::bnn::detail::forward(s.arch, net, xn, &zs, &hs);
    const Vector resid = yn - f;
    const double sq = resid.squaredNorm();
    r.log_likelihood += inv_mc * (nb * log_norm - 0.5 * sq * inv_var);

    // d loglik / d noise_rho
    r.gradient[layout.noise] += inv_mc * (-nb / sn + sq / (sn * sn * sn)) * sigmoid(noise_rho);

    // Backprop d loglik / d f = resid / sigma^2.
    Matrix g = (inv_mc * inv_var) * resid;
    for (std::size_t li = net.w.size(); li-- > 0;) {
      const auto& lo = layout.layers[li];
      const Matrix gw = hs[li].transpose() * g;
      const Vector gb = g.colwise().sum().transpose();
      r.gradient.segment(lo.w_mu, lo.in * lo.out) += gw.reshaped();
      r.gradient.segment(lo.w_rho, lo.in * lo.out) += gw.cwiseProduct(net.eps_w[li]).reshaped();
      r.gradient.segment(lo.b_mu, lo.out) += gb;
      r.gradient.segment(lo.b_rho, lo.out) += gb.cwiseProduct(net.eps_b[li]);
      if (li == 0) break;
      Matrix gh = g * net.w[li].transpose();
      rdo::bnn::detail::activation_backward(s.arch.activation, zs[li - 1], hs[li], gh);
      g = std::move(gh);
    }
  }

  const double inv_prior_var = 1.0 / (s.prior_std * s.prior_std);
  const double log_prior = std::log(s.prior_std);
  double kl = 0.0;
  for (const auto& lo : layout.layers) {
    auto add = [&](Eigen::Index mu_off, Eigen::Index rho_off, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = s.params[mu_off + i];
        const double rho = s.params[rho_off + i];
        const double sd = scales[rho_off + i];
        kl += log_prior - std::log(sd) + 0.5 * (sd * sd + mu * mu) * inv_prior_var - 0.5;
        double g_scale = r.gradient[rho_off + i];
        if (kl_weight != 0.0) {
          r.gradient[mu_off + i] -= kl_weight * mu * inv_prior_var;
          g_scale -= kl_weight * (-1.0 / sd + sd * inv_prior_var);
        }
        r.gradient[rho_off + i] = g_scale * sigmoid(rho);
      }
    };
    add(lo.w_mu, lo.w_rho, lo.in * lo.out);
    add(lo.b_mu, lo.b_rho, lo.out);
  }
  r.kl = kl;
  r.elbo = kl_weight != 0.0 ? r.log_likelihood - kl_weight * r.kl : r.log_likelihood;
  return r;
}

struct Prediction {
  double mean = 0.0;
  double epistemic_variance = 0.0;
  std::size_t samples = 0;
  bool variance_available = false;
};

struct BatchPrediction {
  Vector mean;
  Vector epistemic_variance;
  std::size_t samples = 0;
  bool variance_available = false;
};

/// Monte-Carlo predictive mean and epistemic variance over T posterior draws.
/// Draw t uses the stream (seed, first_sample + t), shared by every input row,
/// so a batch prediction equals the per-row predictions.
inline BatchPrediction bnn_predict_batch(const VariationalState& s, const Matrix& x, std::size_t samples, std::uint64_t seed,
                                   std::size_t first_sample = 0) {
  rdo::detail::require(samples >= 1, "bnn_predict: need at least one sample");
  rdo::detail::require(static_cast<std::size_t>(x.cols()) == s.arch.input_dim, "bnn_predict: input dimension mismatch");
  BatchPrediction p;
  p.samples = samples;
  p.variance_available = samples >= 2;
  if (s.constant_output) {
    p.mean = Vector::Constant(x.rows(), s.norm.y_mean);
    p.epistemic_variance = Vector::Zero(x.rows());
    return p;
  }
  const ParamLayout layout = s.layout();
  const Vector scales = rdo::bnn::detail::posterior_scales(s, layout);
  Vector mean = Vector::Zero(x.rows());
  Vector m2 = Vector::Zero(x.rows());
  for (std::size_t t = 0; t < samples; ++t) {
    Rng rng = make_rng(seed, {first_sample + t});
    const auto net = rdo::bnn::detail::sample_network(s, layout, scales, &rng, false);
    const Vector f = rdo::bnn::detail::forward_blocked(s, net, x);
    // Welford update
    const Vector delta = f - mean;
    mean += delta / static_cast<double>(t + 1);
    m2.array() += delta.array() * (f - mean).array();
  }
  p.mean = (mean.array() * s.norm.y_std + s.norm.y_mean).matrix();
  if (p.variance_available)
    p.epistemic_variance = (m2 / static_cast<double>(samples)).cwiseMax(0.0) * (s.norm.y_std * s.norm.y_std);
  else
    p.epistemic_variance = Vector::Zero(x.rows());
  return p;
}

inline Prediction bnn_predict(const VariationalState& s, const Vector& x, std::size_t samples, std::uint64_t seed,
                              std::size_t first_sample = 0) {
  const auto b = bnn_predict_batch(s, Matrix(x.transpose()), samples, seed, first_sample);
  return {b.mean[0], b.epistemic_variance[0], b.samples, b.variance_available};
}

/// Network output at the posterior-mean weights (no sampling).
inline Vector predict_at_posterior_mean(const VariationalState& s, const Matrix& x) {
  if (s.constant_output) return Vector::Constant(x.rows(), s.norm.y_mean);
  const ParamLayout layout = s.layout();
  const auto net = rdo::bnn::detail::sample_network(s, layout, Vector(), nullptr, false);
  const Vector f = rdo::bnn::detail::forward_blocked(s, net, x);
  return (f.array() * s.norm.y_std + s.norm.y_mean).matrix();
}

/// Precomputed set of T posterior draws. Evaluating the averaged network at
/// many inputs reuses the same draws (common random numbers).
class SampledEnsemble {
 public:
  SampledEnsemble(const VariationalState& s, std::size_t samples, std::uint64_t seed) : state_(&s) {
    const ParamLayout layout = s.layout();
    const Vector scales = rdo::bnn::detail::posterior_scales(s, layout);
    for (std::size_t t = 0; t < samples; ++t) {
      Rng rng = make_rng(seed, {t});
      nets_.push_back(rdo::bnn::detail::sample_network(s, layout, scales, &rng, false));
    }
  }

  Vector mean(const Matrix& x) const {
    const auto& s = *state_;
    if (s.constant_output) return Vector::Constant(x.rows(), s.norm.y_mean);
    Vector acc = Vector::Zero(x.rows());
    for (const auto& net : nets_) acc += rdo::bnn::detail::forward_blocked(s, net, x);
    acc /= static_cast<double>(nets_.size());
    return (acc.array() * s.norm.y_std + s.norm.y_mean).matrix();
  }

 private:
  const VariationalState* state_;
  std::vector<rdo::bnn::detail::SampledNetwork> nets_;
};

struct Hyperparameters {
  double learning_rate = 1e-2;
  double prior_std = 1.0;
  double kl_weight = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 600;
  std::size_t mc_samples = 4;
  double kl_warmup_fraction = 0.2;
  double holdout_fraction = 0.1;
  std::size_t validation_samples = 16;
  /// Learning rate at the last epoch as a fraction of the initial one (cosine decay).
  double final_lr_fraction = 0.01;
};

struct TrainDiagnostics {
  bool constant_output = false;
  std::size_t lr_halvings = 0;
  std::size_t best_epoch = 0;
  double best_heldout_loglik = -std::numeric_limits<double>::infinity();
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
};

struct TrainResult {
  VariationalState state;
  TrainDiagnostics diagnostics;
};

/// Mean Gaussian predictive log density (standardised units) of (x, y)
/// under the state, using `samples` posterior draws plus the noise variance.
inline double predictive_loglik(const VariationalState& s, const Matrix& x, const Vector& y, std::size_t samples,
                                std::uint64_t seed) {
  const auto p = bnn_predict_batch(s, x, std::max<std::size_t>(samples, 2), seed);
  const double sn = s.noise_std();
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = (p.mean[i] - s.norm.y_mean) / s.norm.y_std;
    const double yn = (y[i] - s.norm.y_mean) / s.norm.y_std;
    const double var = p.epistemic_variance[i] / (s.norm.y_std * s.norm.y_std) + sn * sn;
    ll += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (yn - mu) * (yn - mu) / var;
  }
  return ll / static_cast<double>(x.rows());
}

/// Mini-batch stochastic ELBO ascent with Adam. Holds out a fraction of the
/// data and returns the state with the best held-out predictive
/// log-likelihood. Deterministic for a fixed seed.
/// With `init`, training continues from its parameters and keeps its
/// normalisation instead of starting from bnn_init.
inline TrainResult train_bnn(const Matrix& x, const Vector& y, const Architecture& arch_in, const Hyperparameters& hp,
                             std::uint64_t seed, const VariationalState* init = nullptr) {
  rdo::detail::require(x.rows() >= 2 && x.rows() == y.size(), "train_bnn: need at least two samples");
  rdo::detail::require(y.allFinite() && x.allFinite(), "train_bnn: non-finite training data");
  rdo::detail::require(hp.batch_size >= 1 && hp.mc_samples >= 1, "train_bnn: batch size and MC samples must be positive");
  Architecture arch = arch_in;
  arch.input_dim = static_cast<std::size_t>(x.cols());

  TrainResult result;
  VariationalState s = bnn_init(arch, hp.prior_std, seed);
  s.norm.x_mean = x.colwise().mean().transpose();
  s.norm.x_std = ((x.rowwise() - s.norm.x_mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index k = 0; k < s.norm.x_std.size(); ++k)
    if (!(s.norm.x_std[k] > 0.0)) s.norm.x_std[k] = 1.0;
  s.norm.y_mean = y.mean();
  const double y_std = std::sqrt((y.array() - s.norm.y_mean).square().mean());
  if (!(y_std > 1e-12 * std::max(1.0, std::abs(s.norm.y_mean)))) {
    s.norm.y_std = 1.0;
    s.constant_output = true;
    result.state = std::move(s);
    result.diagnostics.constant_output = true;
    result.diagnostics.train_size = static_cast<std::size_t>(x.rows());
    return result;
  }
  s.norm.y_std = y_std;
  if (init != nullptr && !init->constant_output) {
    rdo::detail::require(init->arch.input_dim == arch.input_dim && init->arch.hidden == arch.hidden,
                         "train_bnn: warm-start state has a different architecture");
    s = *init;
    s.arch.activation = arch.activation;
  }

  // Train / held-out split.
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = make_rng(seed, {0x53504c4954});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::min<std::size_t>(i - 1, static_cast<std::size_t>(uniform01(split_rng) * i))]);
  std::size_t n_hold = n >= 10 ? static_cast<std::size_t>(std::round(hp.holdout_fraction * static_cast<double>(n))) : 0;
  n_hold = std::min(n_hold, n - 2);
  const std::size_t n_train = n - n_hold;
  Matrix x_train(static_cast<Eigen::Index>(n_train), x.cols()), x_hold(static_cast<Eigen::Index>(n_hold), x.cols());
  Vector y_train(static_cast<Eigen::Index>(n_train)), y_hold(static_cast<Eigen::Index>(n_hold));
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = static_cast<Eigen::Index>(order[i]);
    if (i < n_train) {
      x_train.row(static_cast<Eigen::Index>(i)) = x.row(src);
      y_train[static_cast<Eigen::Index>(i)] = y[src];
    } else {
      x_hold.row(static_cast<Eigen::Index>(i - n_train)) = x.row(src);
      y_hold[static_cast<Eigen::Index>(i - n_train)] = y[src];
    }
  }
  const Matrix& x_val = n_hold > 0 ? x_hold : x_train;
  const Vector& y_val = n_hold > 0 ? y_hold : y_train;
  result.diagnostics.train_size = n_train;
  result.diagnostics.heldout_size = n_hold;

  const ParamLayout layout = s.layout();
  Vector m1 = Vector::Zero(layout.total), m2 = Vector::Zero(layout.total);
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double lr = hp.learning_rate;
  std::size_t step = 0;
  const std::size_t batch = std::min(hp.batch_size, n_train);
  const std::size_t warmup_epochs =
      static_cast<std::size_t>(std::ceil(hp.kl_warmup_fraction * static_cast<double>(hp.epochs)));

  // Held-out scoring every few epochs (about 60 checkpoints per run).
  const std::size_t validate_every = std::max<std::size_t>(1, hp.epochs / 60);
  VariationalState best = s;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(n_train);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Matrix xb;
  Vector yb;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    const double anneal =
        warmup_epochs == 0 ? 1.0 : std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs));
    const double progress = hp.epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(hp.epochs - 1) : 0.0;
    const double lr_epoch =
        lr * (hp.final_lr_fraction + (1.0 - hp.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    Rng shuffle_rng = make_rng(seed, {0x53485546, epoch});
    for (std::size_t i = n_train; i > 1; --i)
      std::swap(idx[i - 1], idx[std::min<std::size_t>(i - 1, static_cast<std::size_t>(uniform01(shuffle_rng) * i))]);
    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t len = std::min(batch, n_train - start);
      xb.resize(static_cast<Eigen::Index>(len), x.cols());
      yb.resize(static_cast<Eigen::Index>(len));
      for (std::size_t i = 0; i < len; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = x_train.row(static_cast<Eigen::Index>(idx[start + i]));
        yb[static_cast<Eigen::Index>(i)] = y_train[static_cast<Eigen::Index>(idx[start + i])];
      }
      // Minibatch share of the KL so that one epoch adds up to the full ELBO.
      const double kl_w = hp.kl_weight * anneal * static_cast<double>(len) / static_cast<double>(n_train);
      const auto e = elbo(s, xb, yb, hp.mc_samples, kl_w, derive_seed(seed, {0x53544550, step}));
      ++step;
      if (!std::isfinite(e.elbo) || !e.gradient.allFinite()) {
        lr *= 0.5;
        ++result.diagnostics.lr_halvings;
        continue;
      }
      const Vector g = -e.gradient / static_cast<double>(len);
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      s.params.array() -= lr_epoch * (m1.array() / c1) / ((m2.array() / c2).sqrt() + adam_eps);
    }
    if ((epoch + 1) % validate_every != 0 && epoch + 1 != hp.epochs) continue;
    const double score = predictive_loglik(s, x_val, y_val, hp.validation_samples, derive_seed(seed, {0x56414c}));
    if (std::isfinite(score) && score > best_score) {
      best_score = score;
      best = s;
      result.diagnostics.best_epoch = epoch;
    }
  }
  result.diagnostics.best_heldout_loglik = best_score;
  if (!std::isfinite(best_score)) throw NumericalError("train_bnn: training diverged (no finite held-out score)");
  result.state = std::move(best);
  return result;
}

/// Bounds of the random search over hyperparameters. A range with
/// lower == upper pins that parameter.
struct SearchSpace {
  Interval learning_rate{1e-3, 2e-2};
  std::vector<std::size_t> hidden_widths{16, 32, 64};
  Interval prior_std{0.3, 3.0};
  Interval kl_weight{1e-3, 1.0};
};

struct TuneTrial {
  Hyperparameters hyper;
  std::size_t width = 0;
  double score = -std::numeric_limits<double>::infinity();
  bool ok = false;
  std::string error;
};

struct TuneResult {
  Hyperparameters hyper;
  Architecture arch;
  std::size_t best_trial = 0;
  std::vector<TuneTrial> trials;
};

namespace detail {
inline double log_uniform(const Interval& r, Rng& rng) {
  if (r.lower == r.upper) return r.lower;
  return std::exp(std::log(r.lower) + uniform01(rng) * (std::log(r.upper) - std::log(r.lower)));
}
}  // namespace detail

/// Seeded random search over {learning rate, hidden width, prior std, KL
/// weight} scored by held-out predictive log-likelihood.
inline TuneResult tune_hyperparameters(const Matrix& x, const Vector& y, const Architecture& base_arch,
                                       const Hyperparameters& base, const SearchSpace& space, std::size_t budget,
                                       std::uint64_t seed) {
  rdo::detail::require(budget >= 1, "tune_hyperparameters: budget must be at least 1");
  rdo::detail::require(!space.hidden_widths.empty(), "tune_hyperparameters: empty width set");
  TuneResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < budget; ++i) {
    Rng rng = make_rng(seed, {0x54554e45, i});
    TuneTrial trial;
    trial.hyper = base;
    trial.hyper.learning_rate = rdo::bnn::detail::log_uniform(space.learning_rate, rng);
    trial.width = space.hidden_widths[std::min(space.hidden_widths.size() - 1,
                                               static_cast<std::size_t>(uniform01(rng) *
                                                                        static_cast<double>(space.hidden_widths.size())))];
    trial.hyper.prior_std = rdo::bnn::detail::log_uniform(space.prior_std, rng);
    trial.hyper.kl_weight = rdo::bnn::detail::log_uniform(space.kl_weight, rng);
    Architecture arch = base_arch;
    std::fill(arch.hidden.begin(), arch.hidden.end(), trial.width);
    try {
      const auto r = train_bnn(x, y, arch, trial.hyper, derive_seed(seed, {0x5452, i}));
      trial.score = r.diagnostics.constant_output ? 0.0 : r.diagnostics.best_heldout_loglik;
      trial.ok = std::isfinite(trial.score);
    } catch (const Error& e) {
      trial.error = e.what();
    }
    if (trial.ok && trial.score > best) {
      best = trial.score;
      out.best_trial = i;
      out.hyper = trial.hyper;
      out.arch = arch;
    }
    out.trials.push_back(std::move(trial));
  }
  if (!std::isfinite(best)) {
    std::string msg = "tune_hyperparameters: every trial failed";
    for (const auto& t : out.trials) msg += "; " + (t.error.empty() ? std::string("non-finite score") : t.error);
    throw NumericalError(msg);
  }
  return out;
}

}  // namespace rdo::bnn
