#pragma once

// Early termination of training runs from partially observed learning curves.
//
// A bank holds one curve-term model per prefix length T; the T-model predicts
// the final accuracy from the transfer weights plus r * max(first T epochs).
// A run is stopped when its probability of beating the dataset's best seen
// accuracy drops to delta or below.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "itnas/acquisition.hpp"
#include "itnas/metaknowledge.hpp"
#include "itnas/vbmf.hpp"

namespace itnas {

struct PrefixModelBank {
  ModelHyperparams hyper;
  MetaknowledgeStore store;                // training snapshot all models were fitted on
  std::vector<VariationalParams> models;   // models[T - 1] is the T-model
  std::size_t refits = 0;                  // incremental refits applied so far

  std::size_t max_prefix() const { return models.size(); }
  const VariationalParams& model(std::size_t T) const {
    if (T < 1 || T > models.size()) {
      throw std::out_of_range("prefix length " + std::to_string(T) + " not covered by the model bank (max " +
                              std::to_string(models.size()) + ")");
    }
    return models[T - 1];
  }
  PredictiveMoments predict(ArchitectureId n, DatasetId d, std::span<const double> prefix) const {
    const std::size_t T = prefix.size();
    return itnas::predict(model(T), hyper, n, d, prefix_max(prefix, T));
  }
};

inline std::size_t bank_warm_steps(const ModelHyperparams& h) { return std::max<std::size_t>(1, h.sgd_epochs / 5); }
inline std::size_t bank_refit_steps(const ModelHyperparams& h) { return std::max<std::size_t>(1, h.sgd_epochs / 10); }
// Step size of incremental refits, relative to learning_rate, for weights not
// tied to the new curves' datasets or architectures.
inline constexpr double kRefitLearningRateFraction = 0.1;

/// Fits models for T = 1..max_prefix. T = 1 starts from the initial
/// distribution; each later model warm-starts from its predecessor.
inline PrefixModelBank fit_prefix_models(const MetaknowledgeStore& train_store, const ModelHyperparams& hyper,
                                         std::size_t max_prefix) {
  if (train_store.curves().size() < 2) throw StoreError("need at least two learning curves to fit prefix models");
  if (max_prefix < 1 || max_prefix >= train_store.horizon()) {
    throw std::invalid_argument("max prefix must lie in [1, horizon - 1]");
  }
  PrefixModelBank bank{hyper, train_store, {}, 0};
  bank.models.reserve(max_prefix);
  for (std::size_t T = 1; T <= max_prefix; ++T) {
    const auto rows = training_rows(train_store, LikelihoodMode::curve_at_prefix(T));
    if (T == 1) {
      auto init = init_variational(hyper, train_store.n_archs(), train_store.n_datasets(), true);
      bank.models.push_back(fit_steps(std::move(init), rows, hyper, hyper.sgd_epochs, T).params);
    } else {
      bank.models.push_back(fit_steps(bank.models.back(), rows, hyper, bank_warm_steps(hyper), T).params);
    }
  }
  return bank;
}

inline bool has_curve_rows(const MetaknowledgeStore& store, DatasetId d) {
  return std::any_of(store.curves().begin(), store.curves().end(), [&](const auto& c) { return c.dataset == d; });
}
inline bool has_curve_rows(const MetaknowledgeStore& store, ArchitectureId n) {
  return std::any_of(store.curves().begin(), store.curves().end(), [&](const auto& c) { return c.arch == n; });
}

/// Adds full learning curves (and their final accuracies) to the bank's store
/// and gives every T-model a short warm-started refit.
inline PrefixModelBank refit_bank_incremental(const PrefixModelBank& bank, std::span<const LearningCurve> new_curves) {
  if (new_curves.empty()) return bank;
  PrefixModelBank out = bank;
  std::vector<DatasetId> fresh_datasets;
  std::vector<ArchitectureId> fresh_archs;
  for (const auto& c : new_curves) {
    if (out.store.horizon() != 0 && c.length() != out.store.horizon()) {
      throw StoreError("curve length " + std::to_string(c.length()) + " differs from horizon " +
                       std::to_string(out.store.horizon()));
    }
    if (!has_curve_rows(out.store, c.dataset)) fresh_datasets.push_back(c.dataset);
    if (!has_curve_rows(out.store, c.arch)) fresh_archs.push_back(c.arch);
    out.store.add_completed_run(c);
  }
  ++out.refits;
  const std::uint64_t seed = bank.hyper.seed + 7919 * out.refits;
  for (std::size_t T = 1; T <= out.models.size(); ++T) {
    auto& m = out.models[T - 1];
    m = extend_variational(m, out.store.n_archs(), out.store.n_datasets(), seed + T);
    // Weights that have only seen the prior start over from the initial distribution.
    for (DatasetId d : fresh_datasets) reinitialize_dataset(m, d, seed + T);
    for (ArchitectureId n : fresh_archs) reinitialize_architecture(m, n, seed + T);
    const ParamLayout& L = m.layout;
    std::vector<double> scale(L.size(), kRefitLearningRateFraction);
    for (const auto& c : new_curves) {
      scale[L.dataset_bias(c.dataset.value)] = scale[L.arch_bias(c.arch.value)] = 1.0;
      for (std::size_t k = 0; k < L.latent_dim; ++k) {
        scale[L.dataset_latent(c.dataset.value, k)] = scale[L.arch_latent(c.arch.value, k)] = 1.0;
      }
    }
    const auto rows = training_rows(out.store, LikelihoodMode::curve_at_prefix(T));
    m = fit_steps(std::move(m), rows, out.hyper, bank_refit_steps(out.hyper), (out.refits << 20) + T, scale).params;
  }
  return out;
}

inline PrefixModelBank refit_bank_incremental(const PrefixModelBank& bank, const LearningCurve& curve) {
  return refit_bank_incremental(bank, std::span<const LearningCurve>(&curve, 1));
}

struct StopDecisionConfig {
  double delta = 0.05;
  std::size_t min_epochs = 1;
};

enum class StopDecision { continue_training, stop };

/// Decision after observing `prefix` (epochs 1..T) of a run.
inline StopDecision should_stop(const PrefixModelBank& bank, ArchitectureId arch, DatasetId dataset,
                                std::span<const double> prefix, const Incumbent& best_seen,
                                const StopDecisionConfig& cfg) {
  const std::size_t T = prefix.size();
  if (T < 1) throw std::invalid_argument("should_stop: empty prefix");
  if (T > bank.max_prefix()) {
    throw std::out_of_range("prefix of " + std::to_string(T) + " epochs exceeds the model bank coverage");
  }
  if (T < cfg.min_epochs) return StopDecision::continue_training;
  if (!best_seen || prefix_max(prefix, T) > *best_seen) return StopDecision::continue_training;
  // PI is strictly positive, so a non-positive threshold never stops.
  if (cfg.delta <= 0.0) return StopDecision::continue_training;
  const double pi = probability_of_improvement(bank.predict(arch, dataset, prefix), *best_seen);
  return pi <= cfg.delta ? StopDecision::stop : StopDecision::continue_training;
}

struct TerminatedCurve {
  ArchitectureId arch;
  DatasetId dataset;
  std::vector<double> observed;  // revealed prefix
  std::size_t stop_epoch = 0;
  bool stopped_early = false;
  friend bool operator==(const TerminatedCurve&, const TerminatedCurve&) = default;
};

struct AccelerationReport {
  std::vector<TerminatedCurve> runs;  // in replay order
  std::size_t total_epochs = 0;
  std::size_t no_stopping_epochs = 0;
  double best_final_accuracy_found = 0.0;
  double optimum = 0.0;  // best final accuracy over the replayed runs
  double regret = 0.0;
  double speedup_factor = 1.0;
  friend bool operator==(const AccelerationReport&, const AccelerationReport&) = default;
};

struct AccelerationConfig {
  StopDecisionConfig stop;
  std::uint64_t order_seed = 0;
  std::size_t max_runs = 0;  // 0: replay every held curve
};

/// Random search over the held-out curves where every run after the first may
/// be terminated at any epoch. Completed runs join the model's training data.
inline AccelerationReport accelerated_random_search(const MetaknowledgeStore& train_store,
                                                    std::span<const LearningCurve> held_curves,
                                                    const AccelerationConfig& cfg, const ModelHyperparams& hyper) {
  if (held_curves.size() < 2) throw StoreError("accelerated search needs at least two held-out curves");
  const std::size_t horizon = held_curves.front().length();
  for (const auto& c : held_curves) {
    if (c.length() != horizon) throw StoreError("held-out curves have non-uniform length");
  }
  if (train_store.horizon() != 0 && train_store.horizon() != horizon) {
    throw StoreError("held-out horizon differs from the training store horizon");
  }
  if (horizon < 2) throw StoreError("horizon must be at least 2 epochs");

  std::vector<std::size_t> order(held_curves.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(held_curves[a].dataset, held_curves[a].arch) < std::tie(held_curves[b].dataset, held_curves[b].arch);
  });
  std::mt19937_64 rng(cfg.order_seed);
  std::shuffle(order.begin(), order.end(), rng);
  if (cfg.max_runs > 0 && cfg.max_runs < order.size()) order.resize(cfg.max_runs);

  MetaknowledgeStore base = train_store;
  for (const auto& c : held_curves) base.reserve_dimensions(c.arch.value + 1u, c.dataset.value + 1u);
  PrefixModelBank bank = fit_prefix_models(base, hyper, horizon - 1);

  AccelerationReport report;
  Incumbent best_seen;
  std::optional<double> best_completed;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const LearningCurve& curve = held_curves[order[r]];
    TerminatedCurve run{curve.arch, curve.dataset, {}, 0, false};
    run.observed.reserve(horizon);
    for (std::size_t T = 1; T <= horizon; ++T) {
      run.observed.push_back(curve.at_epoch(T));
      if (T == horizon) break;
      if (should_stop(bank, curve.arch, curve.dataset, run.observed, best_seen, cfg.stop) == StopDecision::stop) {
        run.stopped_early = true;
        break;
      }
    }
    run.stop_epoch = run.observed.size();
    report.total_epochs += run.stop_epoch;
    report.optimum = r == 0 ? curve.final_value() : std::max(report.optimum, curve.final_value());

    const double run_max = *std::max_element(run.observed.begin(), run.observed.end());
    best_seen = best_seen ? std::max(*best_seen, run_max) : run_max;
    if (!run.stopped_early) {
      best_completed = best_completed ? std::max(*best_completed, curve.final_value()) : curve.final_value();
      if (r + 1 < order.size()) bank = refit_bank_incremental(bank, curve);
    }
    report.runs.push_back(std::move(run));
  }

  report.no_stopping_epochs = order.size() * horizon;
  report.best_final_accuracy_found = *best_completed;
  report.regret = report.optimum - report.best_final_accuracy_found;
  report.speedup_factor = static_cast<double>(report.no_stopping_epochs) / static_cast<double>(report.total_epochs);
  return report;
}

inline std::string acceleration_csv(const AccelerationReport& report) {
  std::string out = "arch_id,stop_epoch,final_or_last_accuracy,stopped_early\n";
  for (const auto& r : report.runs) {
    out += std::to_string(r.arch.value) + ',' + std::to_string(r.stop_epoch) + ',' + format_double(r.observed.back()) +
           ',' + (r.stopped_early ? "true" : "false") + '\n';
  }
  return out;
}

inline nlohmann::ordered_json acceleration_json(const AccelerationReport& report) {
  nlohmann::ordered_json j;
  j["runs"] = report.runs.size();
  j["total_epochs"] = report.total_epochs;
  j["no_stopping_epochs"] = report.no_stopping_epochs;
  j["speedup_factor"] = report.speedup_factor;
  j["best_final_accuracy_found"] = report.best_final_accuracy_found;
  j["optimum"] = report.optimum;
  j["regret"] = report.regret;
  auto per_run = nlohmann::ordered_json::array();
  for (const auto& r : report.runs) {
    nlohmann::ordered_json x;
    x["arch_id"] = r.arch.value;
    x["dataset_id"] = r.dataset.value;
    x["stop_epoch"] = r.stop_epoch;
    x["stopped_early"] = r.stopped_early;
    x["last_accuracy"] = r.observed.back();
    per_run.push_back(std::move(x));
  }
  j["per_architecture"] = std::move(per_run);
  return j;
}

}  // namespace itnas
