#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "itnas/metaknowledge.hpp"
#include "itnas/normal.hpp"
#include "itnas/vbmf.hpp"

namespace itnas {

/// Best accuracy seen so far on a dataset; empty until something is observed.
using Incumbent = std::optional<double>;

namespace detail {
inline void check_acquisition_inputs(const PredictiveMoments& pred, double incumbent) {
  if (!std::isfinite(pred.mean) || !std::isfinite(pred.variance) || !std::isfinite(incumbent)) {
    throw std::invalid_argument("acquisition: non-finite input");
  }
  if (!(pred.variance > 0.0)) throw std::invalid_argument("acquisition: variance must be > 0");
}
}  // namespace detail

/// E[max(a - incumbent, 0)] for a ~ N(mean, variance).
inline double expected_improvement(const PredictiveMoments& pred, double incumbent) {
  detail::check_acquisition_inputs(pred, incumbent);
  const double s = std::sqrt(pred.variance);
  const double diff = pred.mean - incumbent;
  const double z = diff / s;
  return std::max(0.0, diff * normal_cdf(z) + s * normal_pdf(z));
}

/// P(a > incumbent) for a ~ N(mean, variance).
inline double probability_of_improvement(const PredictiveMoments& pred, double incumbent) {
  detail::check_acquisition_inputs(pred, incumbent);
  return normal_cdf((pred.mean - incumbent) / std::sqrt(pred.variance));
}

enum class Normalization { zscore, minmax };

/// Per-architecture mean of per-dataset-normalized accuracies; empty for
/// architectures without observations.
inline std::vector<std::optional<double>> normalized_mean_accuracy(const MetaknowledgeStore& store,
                                                                   Normalization norm = Normalization::zscore) {
  std::map<std::uint32_t, std::vector<double>> columns;
  for (const auto& o : store.observations()) columns[o.dataset.value].push_back(o.accuracy);

  std::map<std::uint32_t, std::pair<double, double>> shift_scale;
  for (const auto& [d, values] : columns) {
    const double n = static_cast<double>(values.size());
    double shift = 0.0, scale = 0.0;
    if (norm == Normalization::zscore) {
      for (double a : values) shift += a;
      shift /= n;
      for (double a : values) scale += (a - shift) * (a - shift);
      scale = std::sqrt(scale / n);
    } else {
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      shift = *lo;
      scale = *hi - *lo;
    }
    if (!(scale > 0.0)) {
      throw StoreError("dataset " + std::to_string(d) + " has zero accuracy variance; cannot normalize");
    }
    shift_scale[d] = {shift, scale};
  }

  std::vector<double> total(store.n_archs(), 0.0);
  std::vector<std::size_t> count(store.n_archs(), 0);
  for (const auto& o : store.observations()) {
    const auto [shift, scale] = shift_scale[o.dataset.value];
    total[o.arch.value] += (o.accuracy - shift) / scale;
    ++count[o.arch.value];
  }
  std::vector<std::optional<double>> out(store.n_archs());
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (count[n] > 0) out[n] = total[n] / static_cast<double>(count[n]);
  }
  return out;
}

/// Architecture with the highest normalized mean accuracy, restricted to
/// `candidates` when given. Ties go to the lowest id.
inline ArchitectureId global_best_architecture(const MetaknowledgeStore& store,
                                               std::span<const ArchitectureId> candidates = {},
                                               Normalization norm = Normalization::zscore) {
  const auto scores = normalized_mean_accuracy(store, norm);
  std::vector<ArchitectureId> pool;
  if (candidates.empty()) {
    for (std::uint32_t n = 0; n < store.n_archs(); ++n) pool.emplace_back(n);
  } else {
    pool.assign(candidates.begin(), candidates.end());
  }
  std::optional<ArchitectureId> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (ArchitectureId n : pool) {
    if (n.value >= scores.size() || !scores[n.value]) continue;
    const double score = *scores[n.value];
    if (score > best_score || (score == best_score && n < *best)) {
      best_score = score;
      best = n;
    }
  }
  if (!best) throw StoreError("no candidate architecture has any observation");
  return *best;
}

}  // namespace itnas
