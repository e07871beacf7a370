#pragma once

// Variational Bayesian biased matrix factorization.
//
//   a(n, d) = b0 + b_n + b_d + v_n^T u_d  [+ r * prefix_max]
//
// Every weight has an independent Gaussian prior and a diagonal Gaussian
// variational posterior N(mu, softplus(rho)^2). The posterior is fitted by
// minimizing KL(q || prior) - E_q[log p(data | w)] with reparameterized
// Monte-Carlo gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "itnas/metaknowledge.hpp"
#include "itnas/normal.hpp"

namespace itnas {

enum class Optimizer { adam, sgd };

struct ModelHyperparams {
  std::size_t latent_dim = 8;
  double prior_var_global_bias = 1.0;
  double prior_var_bias = 1.0;
  double prior_var_latent = 1.0;
  double prior_var_slope = 1.0;
  double obs_noise_var = 1e-3;
  double learning_rate = 0.01;
  std::size_t sgd_epochs = 500;
  std::size_t mc_samples = 1;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;

  void validate() const {
    if (!(prior_var_global_bias > 0 && prior_var_bias > 0 && prior_var_latent > 0 && prior_var_slope > 0)) {
      throw std::invalid_argument("prior variances must be > 0");
    }
    if (!(obs_noise_var > 0)) throw std::invalid_argument("obs_noise_var must be > 0");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
    if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  }
};

inline nlohmann::ordered_json hyperparams_to_json(const ModelHyperparams& h) {
  nlohmann::ordered_json j;
  j["latent_dim"] = h.latent_dim;
  j["prior_var_global_bias"] = h.prior_var_global_bias;
  j["prior_var_bias"] = h.prior_var_bias;
  j["prior_var_latent"] = h.prior_var_latent;
  j["prior_var_slope"] = h.prior_var_slope;
  j["obs_noise_var"] = h.obs_noise_var;
  j["learning_rate"] = h.learning_rate;
  j["sgd_epochs"] = h.sgd_epochs;
  j["mc_samples"] = h.mc_samples;
  j["seed"] = h.seed;
  j["optimizer"] = h.optimizer == Optimizer::adam ? "adam" : "sgd";
  return j;
}

/// Overrides fields of `base` with the keys present in `j`. Unknown keys are rejected.
inline ModelHyperparams hyperparams_from_json(const nlohmann::json& j, ModelHyperparams base = {}) {
  for (const auto& [key, v] : j.items()) {
    if (key == "latent_dim") base.latent_dim = v.get<std::size_t>();
    else if (key == "prior_var_global_bias") base.prior_var_global_bias = v.get<double>();
    else if (key == "prior_var_bias") base.prior_var_bias = v.get<double>();
    else if (key == "prior_var_latent") base.prior_var_latent = v.get<double>();
    else if (key == "prior_var_slope") base.prior_var_slope = v.get<double>();
    else if (key == "obs_noise_var") base.obs_noise_var = v.get<double>();
    else if (key == "learning_rate") base.learning_rate = v.get<double>();
    else if (key == "sgd_epochs") base.sgd_epochs = v.get<std::size_t>();
    else if (key == "mc_samples") base.mc_samples = v.get<std::size_t>();
    else if (key == "seed") base.seed = v.get<std::uint64_t>();
    else if (key == "optimizer") {
      const auto name = v.get<std::string>();
      if (name == "adam") base.optimizer = Optimizer::adam;
      else if (name == "sgd") base.optimizer = Optimizer::sgd;
      else throw std::invalid_argument("unknown optimizer '" + name + "'");
    } else {
      throw std::invalid_argument("unknown hyperparameter '" + key + "'");
    }
  }
  base.validate();
  return base;
}

enum class ParamGroup { global_bias, arch_bias, dataset_bias, arch_latent, dataset_latent, slope };

/// Flat index layout of all scalar weights:
/// [b0 | b_n (n_archs) | b_d (n_datasets) | V (n_archs x f) | U (n_datasets x f) | r?]
struct ParamLayout {
  std::size_t n_archs = 0;
  std::size_t n_datasets = 0;
  std::size_t latent_dim = 0;
  bool curve_term = false;

  static constexpr std::size_t global_bias() { return 0; }
  std::size_t arch_bias(std::size_t n) const { return 1 + n; }
  std::size_t dataset_bias(std::size_t d) const { return 1 + n_archs + d; }
  std::size_t arch_latent(std::size_t n, std::size_t k = 0) const {
    return 1 + n_archs + n_datasets + n * latent_dim + k;
  }
  std::size_t dataset_latent(std::size_t d, std::size_t k = 0) const {
    return 1 + n_archs + n_datasets + n_archs * latent_dim + d * latent_dim + k;
  }
  std::size_t slope() const { return 1 + (n_archs + n_datasets) * (1 + latent_dim); }
  std::size_t size() const { return slope() + (curve_term ? 1 : 0); }

  ParamGroup group_of(std::size_t i) const {
    if (i == 0) return ParamGroup::global_bias;
    if (i < dataset_bias(0)) return ParamGroup::arch_bias;
    if (i < arch_latent(0)) return ParamGroup::dataset_bias;
    if (i < dataset_latent(0)) return ParamGroup::arch_latent;
    if (i < slope()) return ParamGroup::dataset_latent;
    return ParamGroup::slope;
  }

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

inline double prior_variance(ParamGroup g, const ModelHyperparams& h) {
  switch (g) {
    case ParamGroup::global_bias: return h.prior_var_global_bias;
    case ParamGroup::arch_bias:
    case ParamGroup::dataset_bias: return h.prior_var_bias;
    case ParamGroup::arch_latent:
    case ParamGroup::dataset_latent: return h.prior_var_latent;
    case ParamGroup::slope: return h.prior_var_slope;
  }
  return 1.0;
}

/// Mean and raw scale of the diagonal Gaussian posterior; sigma = softplus(rho).
struct VariationalParams {
  ParamLayout layout;
  std::vector<double> mean;
  std::vector<double> rho;

  double sigma(std::size_t i) const { return softplus(rho[i]); }
  std::size_t size() const { return mean.size(); }
  friend bool operator==(const VariationalParams&, const VariationalParams&) = default;
};

/// Concrete weights, either a posterior draw or the posterior mean.
struct WeightSample {
  ParamLayout layout;
  std::vector<double> values;

  static WeightSample posterior_mean(const VariationalParams& vp) { return {vp.layout, vp.mean}; }
};

struct PredictiveMoments {
  double mean = 0.0;
  double variance = 1.0;
};

inline constexpr double kInitMeanSd = 0.01;
inline constexpr double kInitSigma = 0.05;

namespace detail {
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}
inline constexpr std::uint64_t kInitStream = 0x1a2b;
inline constexpr std::uint64_t kFitStream = 0x3c4d;
}  // namespace detail

inline VariationalParams init_variational(const ModelHyperparams& hyper, std::size_t n_archs,
                                          std::size_t n_datasets, bool with_curve_term) {
  if (n_archs < 1 || n_datasets < 1) throw std::invalid_argument("init_variational: counts must be >= 1");
  VariationalParams vp;
  vp.layout = {n_archs, n_datasets, hyper.latent_dim, with_curve_term};
  const std::size_t p = vp.layout.size();
  auto rng = detail::make_rng(hyper.seed, detail::kInitStream);
  std::normal_distribution<double> init(0.0, kInitMeanSd);
  vp.mean.resize(p);
  for (auto& m : vp.mean) m = init(rng);
  vp.rho.assign(p, inverse_softplus(kInitSigma));
  return vp;
}

/// Grows a posterior to cover more architectures or datasets. Existing weights
/// are kept; new rows get the initial distribution drawn from `seed`.
inline VariationalParams extend_variational(const VariationalParams& vp, std::size_t n_archs,
                                            std::size_t n_datasets, std::uint64_t seed) {
  const ParamLayout& old = vp.layout;
  if (n_archs <= old.n_archs && n_datasets <= old.n_datasets) return vp;
  ModelHyperparams h;
  h.latent_dim = old.latent_dim;
  h.seed = seed;
  VariationalParams out = init_variational(h, std::max(n_archs, old.n_archs),
                                           std::max(n_datasets, old.n_datasets), old.curve_term);
  const ParamLayout& nl = out.layout;
  auto copy = [&](std::size_t from, std::size_t to) {
    out.mean[to] = vp.mean[from];
    out.rho[to] = vp.rho[from];
  };
  copy(ParamLayout::global_bias(), ParamLayout::global_bias());
  for (std::size_t n = 0; n < old.n_archs; ++n) {
    copy(old.arch_bias(n), nl.arch_bias(n));
    for (std::size_t k = 0; k < old.latent_dim; ++k) copy(old.arch_latent(n, k), nl.arch_latent(n, k));
  }
  for (std::size_t d = 0; d < old.n_datasets; ++d) {
    copy(old.dataset_bias(d), nl.dataset_bias(d));
    for (std::size_t k = 0; k < old.latent_dim; ++k) copy(old.dataset_latent(d, k), nl.dataset_latent(d, k));
  }
  if (old.curve_term) copy(old.slope(), nl.slope());
  return out;
}

/// Resets one dataset's weights (b_d, u_d) to the initial distribution. Used
/// when a dataset receives its first training row: until then its weights only
/// carry the prior.
inline void reinitialize_dataset(VariationalParams& vp, DatasetId d, std::uint64_t seed) {
  const ParamLayout& L = vp.layout;
  if (d.value >= L.n_datasets) throw std::out_of_range("dataset id out of range");
  auto rng = detail::make_rng(seed, detail::kInitStream + 1 + d.value);
  std::normal_distribution<double> init(0.0, kInitMeanSd);
  auto reset = [&](std::size_t i) {
    vp.mean[i] = init(rng);
    vp.rho[i] = inverse_softplus(kInitSigma);
  };
  reset(L.dataset_bias(d.value));
  for (std::size_t k = 0; k < L.latent_dim; ++k) reset(L.dataset_latent(d.value, k));
}

/// Same as reinitialize_dataset for an architecture's (b_n, v_n).
inline void reinitialize_architecture(VariationalParams& vp, ArchitectureId n, std::uint64_t seed) {
  const ParamLayout& L = vp.layout;
  if (n.value >= L.n_archs) throw std::out_of_range("architecture id out of range");
  auto rng = detail::make_rng(seed, (detail::kInitStream << 32) + n.value);
  std::normal_distribution<double> init(0.0, kInitMeanSd);
  auto reset = [&](std::size_t i) {
    vp.mean[i] = init(rng);
    vp.rho[i] = inverse_softplus(kInitSigma);
  };
  reset(L.arch_bias(n.value));
  for (std::size_t k = 0; k < L.latent_dim; ++k) reset(L.arch_latent(n.value, k));
}

/// b0 + b_n + b_d + v_n^T u_d (+ r * prefix_max).
inline double point_predict(const WeightSample& w, ArchitectureId n, DatasetId d,
                            std::optional<double> prefix_max = std::nullopt) {
  const ParamLayout& L = w.layout;
  if (n.value >= L.n_archs) throw std::out_of_range("architecture id " + std::to_string(n.value) + " out of range");
  if (d.value >= L.n_datasets) throw std::out_of_range("dataset id " + std::to_string(d.value) + " out of range");
  if (prefix_max.has_value() != L.curve_term) {
    throw std::invalid_argument("prefix_max must be given exactly when the model has the curve term");
  }
  const auto& x = w.values;
  double s = x[ParamLayout::global_bias()] + x[L.arch_bias(n.value)] + x[L.dataset_bias(d.value)];
  const std::size_t vo = L.arch_latent(n.value), uo = L.dataset_latent(d.value);
  for (std::size_t k = 0; k < L.latent_dim; ++k) s += x[vo + k] * x[uo + k];
  if (L.curve_term) s += x[L.slope()] * *prefix_max;
  return s;
}

/// Which target/feature pair the likelihood is built from.
struct LikelihoodMode {
  std::size_t prefix = 0;  // 0: final accuracies; T >= 1: curves with prefix_max over T epochs

  static LikelihoodMode final_accuracy() { return {0}; }
  static LikelihoodMode curve_at_prefix(std::size_t T) {
    if (T < 1) throw std::invalid_argument("prefix length must be >= 1");
    return {T};
  }
  bool uses_curves() const { return prefix > 0; }
};

/// One likelihood term: target ~ N(prediction(arch, dataset, feature), noise).
struct TrainingRow {
  std::uint32_t arch = 0;
  std::uint32_t dataset = 0;
  double target = 0.0;
  double feature = 0.0;  // prefix max; unused without the curve term
};

inline std::vector<TrainingRow> training_rows(const MetaknowledgeStore& store, LikelihoodMode mode) {
  std::vector<TrainingRow> rows;
  if (!mode.uses_curves()) {
    rows.reserve(store.observations().size());
    for (const auto& o : store.observations()) rows.push_back({o.arch.value, o.dataset.value, o.accuracy, 0.0});
    return rows;
  }
  for (const auto& o : store.observations()) {
    if (!store.has_curve(o.arch, o.dataset)) {
      throw StoreError("missing curve for arch " + std::to_string(o.arch.value) + ", dataset " +
                       std::to_string(o.dataset.value) + " in curve mode");
    }
  }
  rows.reserve(store.curves().size());
  for (const auto& c : store.curves()) {
    if (c.length() < mode.prefix) {
      throw StoreError("curve shorter than prefix length " + std::to_string(mode.prefix));
    }
    rows.push_back({c.arch.value, c.dataset.value, c.final_value(), prefix_max(c, mode.prefix)});
  }
  return rows;
}

namespace detail {
inline double row_predict(const std::vector<double>& x, const ParamLayout& L, const TrainingRow& r) {
  double s = x[0] + x[L.arch_bias(r.arch)] + x[L.dataset_bias(r.dataset)];
  const std::size_t vo = L.arch_latent(r.arch), uo = L.dataset_latent(r.dataset);
  for (std::size_t k = 0; k < L.latent_dim; ++k) s += x[vo + k] * x[uo + k];
  if (L.curve_term) s += x[L.slope()] * r.feature;
  return s;
}

inline void check_rows(const ParamLayout& L, std::span<const TrainingRow> rows) {
  for (const auto& r : rows) {
    if (r.arch >= L.n_archs || r.dataset >= L.n_datasets) {
      throw std::out_of_range("training row (" + std::to_string(r.arch) + ", " + std::to_string(r.dataset) +
                              ") outside the model's dimensions");
    }
  }
}
}  // namespace detail

/// Sum over rows of log N(target | prediction, noise_var).
inline double log_likelihood(const WeightSample& w, std::span<const TrainingRow> rows, double noise_var) {
  detail::check_rows(w.layout, rows);
  double ll = 0.0;
  for (const auto& r : rows) ll += normal_log_density(r.target, detail::row_predict(w.values, w.layout, r), noise_var);
  return ll;
}

inline double log_likelihood(const WeightSample& w, const MetaknowledgeStore& store, LikelihoodMode mode,
                             double noise_var) {
  const auto rows = training_rows(store, mode);
  return log_likelihood(w, rows, noise_var);
}

/// KL(N(m, s^2) || N(0, tau2)); exactly 0 when m = 0 and s * s == tau2.
inline double kl_weight(double m, double s, double tau2) {
  const double r = s * s / tau2;
  return 0.5 * (r - 1.0 - std::log(r)) + m * m / (2.0 * tau2);
}

/// Closed-form KL(q || prior) summed over every weight.
inline double kl_to_prior(const VariationalParams& vp, const ModelHyperparams& hyper) {
  double kl = 0.0;
  for (std::size_t i = 0; i < vp.size(); ++i) {
    kl += kl_weight(vp.mean[i], vp.sigma(i), prior_variance(vp.layout.group_of(i), hyper));
  }
  return kl;
}

/// Standard normal draws: `samples` blocks of one value per weight.
struct NoiseDraws {
  std::size_t samples = 0;
  std::size_t params = 0;
  std::vector<double> values;

  static NoiseDraws draw(std::size_t samples, std::size_t params, std::mt19937_64& rng) {
    NoiseDraws e{samples, params, std::vector<double>(samples * params)};
    std::normal_distribution<double> z(0.0, 1.0);
    for (auto& v : e.values) v = z(rng);
    return e;
  }
  std::span<const double> sample(std::size_t s) const { return {values.data() + s * params, params}; }
};

inline WeightSample reparameterize(const VariationalParams& vp, std::span<const double> eps) {
  WeightSample w{vp.layout, std::vector<double>(vp.size())};
  for (std::size_t i = 0; i < vp.size(); ++i) w.values[i] = vp.mean[i] + vp.sigma(i) * eps[i];
  return w;
}

struct ElboGradient {
  std::vector<double> mean;
  std::vector<double> rho;
};

/// KL - (1/S) sum_s log p(rows | mu + sigma * eps_s); fills the exact gradient
/// with respect to (mu, rho) for the given noise when `grad` is non-null.
inline double elbo_loss(const VariationalParams& vp, std::span<const TrainingRow> rows,
                        const ModelHyperparams& hyper, const NoiseDraws& noise, ElboGradient* grad = nullptr) {
  const ParamLayout& L = vp.layout;
  const std::size_t p = vp.size();
  if (noise.params != p) throw std::invalid_argument("noise draws do not match parameter count");
  detail::check_rows(L, rows);

  std::vector<double> sig(p), dsig(p);
  for (std::size_t i = 0; i < p; ++i) {
    sig[i] = softplus(vp.rho[i]);
    dsig[i] = sigmoid(vp.rho[i]);
  }
  if (grad) {
    grad->mean.assign(p, 0.0);
    grad->rho.assign(p, 0.0);
  }

  const double inv_s = 1.0 / static_cast<double>(noise.samples);
  const double var = hyper.obs_noise_var;
  double loss = 0.0;
  std::vector<double> w(p), gw(p);
  for (std::size_t s = 0; s < noise.samples; ++s) {
    const auto eps = noise.sample(s);
    for (std::size_t i = 0; i < p; ++i) w[i] = vp.mean[i] + sig[i] * eps[i];
    std::fill(gw.begin(), gw.end(), 0.0);
    double ll = 0.0;
    for (const auto& r : rows) {
      const double resid = r.target - detail::row_predict(w, L, r);
      ll += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * resid * resid / var;
      if (!grad) continue;
      // d ll / d prediction
      const double g = resid / var;
      gw[0] += g;
      gw[L.arch_bias(r.arch)] += g;
      gw[L.dataset_bias(r.dataset)] += g;
      const std::size_t vo = L.arch_latent(r.arch), uo = L.dataset_latent(r.dataset);
      for (std::size_t k = 0; k < L.latent_dim; ++k) {
        gw[vo + k] += g * w[uo + k];
        gw[uo + k] += g * w[vo + k];
      }
      if (L.curve_term) gw[L.slope()] += g * r.feature;
    }
    loss -= inv_s * ll;
    if (grad) {
      for (std::size_t i = 0; i < p; ++i) {
        grad->mean[i] -= inv_s * gw[i];
        grad->rho[i] -= inv_s * gw[i] * eps[i] * dsig[i];
      }
    }
  }

  for (std::size_t i = 0; i < p; ++i) {
    const double tau2 = prior_variance(L.group_of(i), hyper);
    const double m = vp.mean[i];
    loss += kl_weight(m, sig[i], tau2);
    if (grad) {
      grad->mean[i] += m / tau2;
      grad->rho[i] += (-1.0 / sig[i] + sig[i] / tau2) * dsig[i];
    }
  }
  return loss;
}

/// Monte-Carlo ELBO loss with fresh noise from `rng`.
inline double elbo_loss(const VariationalParams& vp, const MetaknowledgeStore& store, const ModelHyperparams& hyper,
                        LikelihoodMode mode, std::mt19937_64& rng) {
  const auto rows = training_rows(store, mode);
  const auto noise = NoiseDraws::draw(hyper.mc_samples, vp.size(), rng);
  return elbo_loss(vp, rows, hyper, noise);
}

class FitDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  VariationalParams params;
  std::vector<double> losses;  // one Monte-Carlo loss per step, before the update
};

inline constexpr double kFinalLearningRateFraction = 0.01;

/// Cosine decay from `learning_rate` at step 1 to 1% of it at the last step.
inline double learning_rate_at(const ModelHyperparams& h, std::size_t t, std::size_t steps) {
  if (steps <= 1) return h.learning_rate;
  const double progress = static_cast<double>(t - 1) / static_cast<double>(steps - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return h.learning_rate * (kFinalLearningRateFraction + (1.0 - kFinalLearningRateFraction) * cosine);
}

/// Runs `steps` full-batch gradient steps on the ELBO loss from `vp`.
/// `stream` separates the noise of independent fits sharing one seed.
/// `lr_scale`, when non-empty, multiplies the step size per weight.
inline FitResult fit_steps(VariationalParams vp, std::span<const TrainingRow> rows, const ModelHyperparams& hyper,
                           std::size_t steps, std::uint64_t stream = 0, std::span<const double> lr_scale = {}) {
  hyper.validate();
  if (rows.empty()) throw std::invalid_argument("fit: no training rows");
  if (!lr_scale.empty() && lr_scale.size() != vp.size()) throw std::invalid_argument("fit: lr_scale size mismatch");
  auto rng = detail::make_rng(hyper.seed, detail::kFitStream + stream);
  const std::size_t p = vp.size();

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  auto scale = [&](std::size_t i) { return lr_scale.empty() ? 1.0 : lr_scale[i]; };
  std::vector<double> m_mean(p, 0.0), v_mean(p, 0.0), m_rho(p, 0.0), v_rho(p, 0.0);
  auto adam = [&](std::vector<double>& x, const std::vector<double>& g, std::vector<double>& m,
                  std::vector<double>& v, std::size_t t, double lr) {
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * scale(i) * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
    }
  };

  FitResult result{std::move(vp), {}};
  result.losses.reserve(steps);
  ElboGradient grad;
  for (std::size_t t = 1; t <= steps; ++t) {
    const auto noise = NoiseDraws::draw(hyper.mc_samples, p, rng);
    const double loss = elbo_loss(result.params, rows, hyper, noise, &grad);
    if (!std::isfinite(loss)) {
      throw FitDivergence("non-finite ELBO loss at step " + std::to_string(t) + "; lower learning_rate");
    }
    result.losses.push_back(loss);
    const double lr = learning_rate_at(hyper, t, steps);
    if (hyper.optimizer == Optimizer::adam) {
      adam(result.params.mean, grad.mean, m_mean, v_mean, t, lr);
      adam(result.params.rho, grad.rho, m_rho, v_rho, t, lr);
    } else {
      for (std::size_t i = 0; i < p; ++i) {
        result.params.mean[i] -= lr * scale(i) * grad.mean[i];
        result.params.rho[i] -= lr * scale(i) * grad.rho[i];
      }
    }
  }
  return result;
}

/// Fits the posterior on a store for `hyper.sgd_epochs` steps.
inline VariationalParams fit(const VariationalParams& vp, const MetaknowledgeStore& store,
                             const ModelHyperparams& hyper, LikelihoodMode mode) {
  if (store.observations().empty() && store.curves().empty()) {
    throw std::invalid_argument("fit: store has no observations");
  }
  if (mode.uses_curves() != vp.layout.curve_term) {
    throw std::invalid_argument("fit: likelihood mode does not match the model's curve term");
  }
  const auto rows = training_rows(store, mode);
  return fit_steps(vp, rows, hyper, hyper.sgd_epochs).params;
}

/// Gaussian predictive distribution of the observed accuracy by moment matching
/// under the diagonal posterior (observation noise included).
inline PredictiveMoments predict(const VariationalParams& vp, const ModelHyperparams& hyper, ArchitectureId n,
                                 DatasetId d, std::optional<double> prefix_max = std::nullopt) {
  const ParamLayout& L = vp.layout;
  if (n.value >= L.n_archs) throw std::out_of_range("architecture id " + std::to_string(n.value) + " out of range");
  if (d.value >= L.n_datasets) throw std::out_of_range("dataset id " + std::to_string(d.value) + " out of range");
  if (prefix_max.has_value() != L.curve_term) {
    throw std::invalid_argument("prefix_max must be given exactly when the model has the curve term");
  }
  auto var_of = [&](std::size_t i) {
    const double s = vp.sigma(i);
    return s * s;
  };
  const std::size_t b0 = ParamLayout::global_bias(), bn = L.arch_bias(n.value), bd = L.dataset_bias(d.value);
  PredictiveMoments m;
  m.mean = vp.mean[b0] + vp.mean[bn] + vp.mean[bd];
  m.variance = var_of(b0) + var_of(bn) + var_of(bd);
  for (std::size_t k = 0; k < L.latent_dim; ++k) {
    const std::size_t vi = L.arch_latent(n.value, k), ui = L.dataset_latent(d.value, k);
    const double mv = vp.mean[vi], mu = vp.mean[ui], sv2 = var_of(vi), su2 = var_of(ui);
    m.mean += mv * mu;
    m.variance += mv * mv * su2 + mu * mu * sv2 + su2 * sv2;
  }
  if (L.curve_term) {
    m.mean += vp.mean[L.slope()] * *prefix_max;
    m.variance += *prefix_max * *prefix_max * var_of(L.slope());
  }
  m.variance += hyper.obs_noise_var;
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "itnas-vbmf-checkpoint-1";

inline nlohmann::ordered_json checkpoint_to_json(const VariationalParams& vp, const ModelHyperparams& hyper) {
  const ParamLayout& L = vp.layout;
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["hyperparams"] = hyperparams_to_json(hyper);
  j["shape"] = {{"n_archs", L.n_archs},
                {"n_datasets", L.n_datasets},
                {"latent_dim", L.latent_dim},
                {"curve_term", L.curve_term}};
  auto group = [&](std::size_t begin, std::size_t end) {
    nlohmann::ordered_json g;
    g["mean"] = std::vector<double>(vp.mean.begin() + begin, vp.mean.begin() + end);
    g["rho"] = std::vector<double>(vp.rho.begin() + begin, vp.rho.begin() + end);
    return g;
  };
  nlohmann::ordered_json groups;
  groups["global_bias"] = group(0, 1);
  groups["arch_bias"] = group(L.arch_bias(0), L.dataset_bias(0));
  groups["dataset_bias"] = group(L.dataset_bias(0), L.arch_latent(0));
  groups["arch_latent"] = group(L.arch_latent(0), L.dataset_latent(0));
  groups["dataset_latent"] = group(L.dataset_latent(0), L.slope());
  if (L.curve_term) groups["curve_slope"] = group(L.slope(), L.size());
  j["groups"] = std::move(groups);
  return j;
}

inline std::string checkpoint_string(const VariationalParams& vp, const ModelHyperparams& hyper) {
  return checkpoint_to_json(vp, hyper).dump(2) + "\n";
}

struct Checkpoint {
  VariationalParams params;
  ModelHyperparams hyper;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kCheckpointFormat) throw std::invalid_argument("not a model checkpoint");
  Checkpoint c;
  c.hyper = hyperparams_from_json(j.at("hyperparams"));
  const auto& shape = j.at("shape");
  ParamLayout L{shape.at("n_archs").get<std::size_t>(), shape.at("n_datasets").get<std::size_t>(),
                shape.at("latent_dim").get<std::size_t>(), shape.at("curve_term").get<bool>()};
  c.params.layout = L;
  c.params.mean.reserve(L.size());
  c.params.rho.reserve(L.size());
  auto take = [&](const char* name, std::size_t expected) {
    const auto& g = j.at("groups").at(name);
    auto mean = g.at("mean").get<std::vector<double>>();
    auto rho = g.at("rho").get<std::vector<double>>();
    if (mean.size() != expected || rho.size() != expected) {
      throw std::invalid_argument(std::string("checkpoint group '") + name + "' has the wrong size");
    }
    c.params.mean.insert(c.params.mean.end(), mean.begin(), mean.end());
    c.params.rho.insert(c.params.rho.end(), rho.begin(), rho.end());
  };
  take("global_bias", 1);
  take("arch_bias", L.n_archs);
  take("dataset_bias", L.n_datasets);
  take("arch_latent", L.n_archs * L.latent_dim);
  take("dataset_latent", L.n_datasets * L.latent_dim);
  if (L.curve_term) take("curve_slope", 1);
  return c;
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
  return checkpoint_from_json(nlohmann::json::parse(text));
}

}  // namespace itnas
