#pragma once

// Sequential architecture selection on a new dataset: a cold-start pick of
// the globally best architecture, then expected-improvement picks from a
// transfer model refitted on everything observed so far.

#include <algorithm>
#include <cstdint>
#include <limits>
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

struct Evaluation {
  double accuracy = 0.0;
  std::size_t epochs = 0;
};

/// Trains (or replays) one architecture on the target dataset.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual Evaluation evaluate(ArchitectureId arch) = 0;
};

/// Replays final accuracies stored for one dataset.
class ReplayEvaluator final : public Evaluator {
 public:
  ReplayEvaluator(const MetaknowledgeStore& store, DatasetId dataset) : store_(store), dataset_(dataset) {}

  Evaluation evaluate(ArchitectureId arch) override {
    auto acc = store_.accuracy(arch, dataset_);
    if (!acc) {
      throw StoreError("no stored accuracy for arch " + std::to_string(arch.value) + " on dataset " +
                       std::to_string(dataset_.value));
    }
    return {*acc, store_.horizon() == 0 ? 1 : store_.horizon()};
  }

 private:
  const MetaknowledgeStore& store_;
  DatasetId dataset_;
};

/// Returns the generator's final accuracies for one dataset.
class SyntheticEvaluator final : public Evaluator {
 public:
  SyntheticEvaluator(const SyntheticGroundTruth& truth, DatasetId dataset, std::size_t epochs_per_run)
      : truth_(truth), dataset_(dataset), epochs_(epochs_per_run) {}

  Evaluation evaluate(ArchitectureId arch) override {
    if (arch.value >= truth_.n_archs) throw std::out_of_range("architecture id out of range");
    return {truth_.final_of(arch, dataset_), epochs_};
  }

 private:
  const SyntheticGroundTruth& truth_;
  DatasetId dataset_;
  std::size_t epochs_;
};

struct SearchConfig {
  std::size_t budget = 10;
  bool refit_each_iteration = true;
  ModelHyperparams hyper;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::zscore;
};

struct TraceStep {
  std::size_t step = 0;  // 1-based
  ArchitectureId arch;
  double accuracy = 0.0;
  std::size_t cumulative_epochs = 0;
  double incumbent = 0.0;
  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct SearchTrace {
  std::vector<TraceStep> steps;

  bool empty() const { return steps.empty(); }
  ArchitectureId best_arch() const {
    auto it = std::max_element(steps.begin(), steps.end(),
                               [](const auto& a, const auto& b) { return a.accuracy < b.accuracy; });
    return it->arch;
  }
  double best_accuracy() const { return steps.back().incumbent; }

  void record(ArchitectureId arch, const Evaluation& e) {
    TraceStep s;
    s.step = steps.size() + 1;
    s.arch = arch;
    s.accuracy = e.accuracy;
    s.cumulative_epochs = (steps.empty() ? 0 : steps.back().cumulative_epochs) + e.epochs;
    s.incumbent = steps.empty() ? e.accuracy : std::max(steps.back().incumbent, e.accuracy);
    steps.push_back(s);
  }
  friend bool operator==(const SearchTrace&, const SearchTrace&) = default;
};

/// Raised when the evaluator fails mid-search; carries what was done so far.
class SearchError : public std::runtime_error {
 public:
  SearchError(const std::string& what, SearchTrace partial)
      : std::runtime_error(what), partial_trace(std::move(partial)) {}
  SearchTrace partial_trace;
};

/// Simple regret per step against the best accuracy in the pool.
inline std::vector<double> regret_curve(const SearchTrace& trace, double pool_best) {
  std::vector<double> out;
  out.reserve(trace.steps.size());
  for (const auto& s : trace.steps) out.push_back(std::max(0.0, pool_best - s.incumbent));
  return out;
}

/// Sorted, de-duplicated candidate list.
inline std::vector<ArchitectureId> normalize_candidates(std::span<const ArchitectureId> candidates) {
  std::vector<ArchitectureId> out(candidates.begin(), candidates.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<ArchitectureId> exclude_evaluated(std::span<const ArchitectureId> candidates,
                                                     const SearchTrace& trace) {
  std::vector<ArchitectureId> seen;
  for (const auto& s : trace.steps) seen.push_back(s.arch);
  std::sort(seen.begin(), seen.end());
  std::vector<ArchitectureId> out;
  for (ArchitectureId c : normalize_candidates(candidates)) {
    if (!std::binary_search(seen.begin(), seen.end(), c)) out.push_back(c);
  }
  return out;
}

namespace detail {
inline Evaluation evaluate_or_throw(Evaluator& evaluator, ArchitectureId arch, const SearchTrace& trace) {
  try {
    return evaluator.evaluate(arch);
  } catch (const std::exception& e) {
    throw SearchError("evaluation of arch " + std::to_string(arch.value) + " failed: " + e.what(), trace);
  }
}
}  // namespace detail

/// Refit steps used when warm-starting from the previous iteration's posterior.
inline std::size_t warm_refit_steps(const ModelHyperparams& h) { return std::max<std::size_t>(1, h.sgd_epochs / 5); }

/// Expected-improvement search with inductive transfer from `train_store`.
inline SearchTrace run_it_nas(const MetaknowledgeStore& train_store, DatasetId new_dataset,
                              std::span<const ArchitectureId> candidates, Evaluator& evaluator,
                              const SearchConfig& config) {
  if (config.budget < 1) throw std::invalid_argument("search budget must be >= 1");
  const auto pool = normalize_candidates(candidates);
  if (pool.empty()) throw std::invalid_argument("candidate set is empty");
  if (train_store.rows_for_dataset(new_dataset) != 0) {
    throw std::invalid_argument("training store already has rows for the new dataset");
  }
  const std::size_t total = std::min(config.budget, pool.size());

  ModelHyperparams hyper = config.hyper;
  hyper.seed = config.seed;

  MetaknowledgeStore store = train_store;
  store.reserve_dimensions(pool.back().value + 1u, new_dataset.value + 1u);

  SearchTrace trace;
  ArchitectureId next = global_best_architecture(train_store, pool, config.normalization);
  std::optional<VariationalParams> posterior;
  std::size_t iteration = 0;
  while (true) {
    const Evaluation e = detail::evaluate_or_throw(evaluator, next, trace);
    trace.record(next, e);
    if (trace.steps.size() >= total) break;
    store.add_observation({next, new_dataset, e.accuracy});

    const auto rows = training_rows(store, LikelihoodMode::final_accuracy());
    if (!posterior || !config.refit_each_iteration) {
      auto init = init_variational(hyper, store.n_archs(), store.n_datasets(), false);
      posterior = fit_steps(std::move(init), rows, hyper, hyper.sgd_epochs, iteration).params;
    } else {
      posterior = fit_steps(std::move(*posterior), rows, hyper, warm_refit_steps(hyper), iteration).params;
    }
    ++iteration;

    const double incumbent = trace.best_accuracy();
    double best_ei = -1.0;
    for (ArchitectureId c : exclude_evaluated(pool, trace)) {
      const double ei = expected_improvement(predict(*posterior, hyper, c, new_dataset), incumbent);
      if (ei > best_ei) {  // strict: ties keep the lower id
        best_ei = ei;
        next = c;
      }
    }
  }
  return trace;
}

/// Evaluates a seeded uniform permutation of the candidates up to the budget.
inline SearchTrace run_random_search(std::span<const ArchitectureId> candidates, Evaluator& evaluator,
                                     const SearchConfig& config) {
  if (config.budget < 1) throw std::invalid_argument("search budget must be >= 1");
  auto order = normalize_candidates(candidates);
  if (order.empty()) throw std::invalid_argument("candidate set is empty");
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  SearchTrace trace;
  const std::size_t total = std::min(config.budget, order.size());
  for (std::size_t i = 0; i < total; ++i) trace.record(order[i], detail::evaluate_or_throw(evaluator, order[i], trace));
  return trace;
}

inline std::string trace_csv(const SearchTrace& trace) {
  std::string out = "step,arch_id,accuracy,cumulative_epochs,incumbent\n";
  for (const auto& s : trace.steps) {
    out += std::to_string(s.step) + ',' + std::to_string(s.arch.value) + ',' + format_double(s.accuracy) + ',' +
           std::to_string(s.cumulative_epochs) + ',' + format_double(s.incumbent) + '\n';
  }
  return out;
}

inline nlohmann::ordered_json trace_summary_json(const SearchTrace& trace, double pool_best) {
  nlohmann::ordered_json j;
  j["best_arch"] = trace.best_arch().value;
  j["best_accuracy"] = trace.best_accuracy();
  j["evaluations"] = trace.steps.size();
  j["total_epochs"] = trace.steps.back().cumulative_epochs;
  j["pool_best_accuracy"] = pool_best;
  j["regret_curve"] = regret_curve(trace, pool_best);
  return j;
}

}  // namespace itnas
