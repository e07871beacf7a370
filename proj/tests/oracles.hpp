#pragma once

// Independent reference computations used by the unit tests and the
// acceptance binary: adaptive quadrature, finite differences, Monte Carlo,
// brute force.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "itnas/itnas.hpp"

namespace oracle {

using namespace itnas;

template <class F>
double integrate(F f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-15);
}

inline double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Integrals in standardized coordinates a = m + s z; the Gaussian factor is
// negligible outside [-40, 40].
inline double ei_quadrature(double m, double s, double inc) {
  const double z0 = (inc - m) / s;
  if (z0 >= 40.0) return 0.0;
  const double lo = std::max(z0, -40.0);
  return integrate([&](double z) { return (m + s * z - inc) * phi(z); }, lo, std::max(lo, 0.0) + 40.0);
}

inline double pi_quadrature(double m, double s, double inc) {
  const double z0 = (inc - m) / s;
  if (z0 >= 40.0) return 0.0;
  const double lo = std::max(z0, -40.0);
  return integrate([&](double z) { return phi(z); }, lo, std::max(lo, 0.0) + 40.0);
}

// KL(N(mu, sigma^2) || N(0, tau2)) as E_q[log q - log p].
inline double kl_quadrature(double mu, double sigma, double tau2) {
  auto integrand = [&](double z) {
    const double w = mu + sigma * z;
    const double log_q = -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) - 0.5 * z * z;
    const double log_p = -0.5 * std::log(2.0 * std::numbers::pi * tau2) - 0.5 * w * w / tau2;
    return phi(z) * (log_q - log_p);
  };
  return integrate(integrand, -20.0, 20.0);
}

inline VariationalParams random_params(const ParamLayout& layout, std::mt19937_64& rng, double mean_sd = 0.5,
                                       double rho_lo = -3.0, double rho_hi = 0.5) {
  std::normal_distribution<double> z(0.0, mean_sd);
  std::uniform_real_distribution<double> u(rho_lo, rho_hi);
  VariationalParams vp;
  vp.layout = layout;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    vp.mean.push_back(z(rng));
    vp.rho.push_back(u(rng));
  }
  return vp;
}

struct GradientCheck {
  double worst_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences of elbo_loss under fixed noise draws. The relative error
// of each coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-3).
inline GradientCheck gradient_check(const VariationalParams& vp, std::span<const TrainingRow> rows,
                                    const ModelHyperparams& hyper, const NoiseDraws& noise, double step = 1e-5) {
  ElboGradient g;
  elbo_loss(vp, rows, hyper, noise, &g);
  GradientCheck out;
  auto probe = [&](std::vector<double> VariationalParams::*field, const std::vector<double>& analytic) {
    for (std::size_t i = 0; i < vp.size(); ++i) {
      VariationalParams up = vp, down = vp;
      (up.*field)[i] += step;
      (down.*field)[i] -= step;
      const double fd = (elbo_loss(up, rows, hyper, noise) - elbo_loss(down, rows, hyper, noise)) / (2.0 * step);
      const double err = std::abs(analytic[i] - fd) / std::max({std::abs(analytic[i]), std::abs(fd), 1e-3});
      out.worst_rel_error = std::max(out.worst_rel_error, err);
      ++out.checked;
    }
  };
  probe(&VariationalParams::mean, g.mean);
  probe(&VariationalParams::rho, g.rho);
  return out;
}

struct MomentCheck {
  double z_mean = 0.0;  // |analytic - MC| in standard errors
  double z_var = 0.0;
};

// Samples the weights entering the (n, d) prediction from q, adds observation
// noise, and compares sample mean and variance with predict().
inline MomentCheck moment_check(const VariationalParams& vp, const ModelHyperparams& hyper, ArchitectureId n,
                                DatasetId d, std::optional<double> prefix, std::size_t samples,
                                std::mt19937_64& rng) {
  const ParamLayout& L = vp.layout;
  std::vector<std::size_t> used{ParamLayout::global_bias(), L.arch_bias(n.value), L.dataset_bias(d.value)};
  for (std::size_t k = 0; k < L.latent_dim; ++k) {
    used.push_back(L.arch_latent(n.value, k));
    used.push_back(L.dataset_latent(d.value, k));
  }
  if (L.curve_term) used.push_back(L.slope());

  WeightSample w = WeightSample::posterior_mean(vp);
  std::normal_distribution<double> z(0.0, 1.0);
  const double noise_sd = std::sqrt(hyper.obs_noise_var);
  std::vector<double> draws(samples);
  for (auto& a : draws) {
    for (std::size_t i : used) w.values[i] = vp.mean[i] + vp.sigma(i) * z(rng);
    a = point_predict(w, n, d, prefix) + noise_sd * z(rng);
  }
  const double N = static_cast<double>(samples);
  double mean = 0.0;
  for (double a : draws) mean += a;
  mean /= N;
  double m2 = 0.0, m4 = 0.0;
  for (double a : draws) {
    const double r = (a - mean) * (a - mean);
    m2 += r;
    m4 += r * r;
  }
  m2 /= N;
  m4 /= N;
  const double var = m2 * N / (N - 1.0);
  const auto analytic = predict(vp, hyper, n, d, prefix);
  MomentCheck out;
  out.z_mean = std::abs(analytic.mean - mean) / std::sqrt(var / N);
  out.z_var = std::abs(analytic.variance - var) / std::sqrt((m4 - m2 * m2) / N);
  return out;
}

// Straightforward z-score average and argmax, written independently of the
// library: two passes per dataset, population standard deviation.
inline ArchitectureId brute_force_global_best(const MetaknowledgeStore& store) {
  std::map<std::uint32_t, std::vector<std::pair<std::uint32_t, double>>> by_dataset;
  for (const auto& o : store.observations()) by_dataset[o.dataset.value].push_back({o.arch.value, o.accuracy});
  std::map<std::uint32_t, std::pair<double, int>> score;
  for (const auto& [d, rows] : by_dataset) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r.second;
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows) var += (r.second - mean) * (r.second - mean);
    const double sd = std::sqrt(var / static_cast<double>(rows.size()));
    for (const auto& r : rows) {
      score[r.first].first += (r.second - mean) / sd;
      score[r.first].second += 1;
    }
  }
  std::uint32_t best = 0;
  double best_value = -1e300;
  for (const auto& [n, s] : score) {
    const double v = s.first / s.second;
    if (v > best_value) {
      best_value = v;
      best = n;
    }
  }
  return ArchitectureId(best);
}

// Expected max of the first k entries of a uniformly random permutation,
// by enumerating all permutations.
inline double expected_max_of_k(std::vector<double> values, std::size_t k) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  std::size_t count = 0;
  do {
    total += *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k));
    ++count;
  } while (std::next_permutation(values.begin(), values.end()));
  return total / static_cast<double>(count);
}

}  // namespace oracle
