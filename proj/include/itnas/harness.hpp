#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "itnas/earlystop.hpp"
#include "itnas/metaknowledge.hpp"
#include "itnas/selector.hpp"
#include "itnas/vbmf.hpp"

namespace itnas {

/// Ranks starting at 1; tied values share the average of their ranks.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0 && syy > 0.0)) throw std::invalid_argument("correlation of a constant sequence is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Kendall tau-a: (concordant - discordant) / (n choose 2).
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("kendall_tau: bad input lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double a = x[j] - x[i], b = y[j] - y[i];
      s += static_cast<double>((a > 0) - (a < 0)) * static_cast<double>((b > 0) - (b < 0));
    }
  }
  const double n = static_cast<double>(x.size());
  return s / (n * (n - 1) / 2.0);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

// ---------------------------------------------------------------------------
// Rank correlation of extrapolated final accuracies

struct ExperimentConfig {
  std::size_t n_known_curves = 5;
  std::vector<std::size_t> prefix_lengths{1, 5, 10, 25, 49};
  std::size_t repetitions = 10;
  std::uint64_t seed = 0;
  bool permute_targets = false;  // negative control: shuffle true finals
};

struct RankCorrelationReport {
  struct Entry {
    std::size_t prefix = 0;
    std::size_t repetition = 0;
    double spearman = 0.0;
  };
  std::vector<Entry> entries;                // repetition-major
  std::vector<std::size_t> prefix_lengths;
  std::vector<MeanStd> summary;              // per prefix length

  std::vector<double> means() const {
    std::vector<double> m;
    for (const auto& s : summary) m.push_back(s.mean);
    return m;
  }
};

inline RankCorrelationReport rank_correlation_experiment(const MetaknowledgeStore& train_store,
                                                         const MetaknowledgeStore& held, const ExperimentConfig& cfg,
                                                         const ModelHyperparams& hyper) {
  if (cfg.n_known_curves < 1) throw std::invalid_argument("n_known_curves must be >= 1");
  if (cfg.prefix_lengths.empty()) throw std::invalid_argument("no prefix lengths given");
  if (cfg.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  const std::size_t horizon = held.horizon();
  for (std::size_t T : cfg.prefix_lengths) {
    if (T < 1 || T >= horizon) throw std::invalid_argument("prefix lengths must lie in [1, horizon - 1]");
  }
  const auto& curves = held.curves();
  if (curves.size() < cfg.n_known_curves + 2) {
    throw std::invalid_argument("fewer than two held-out architectures remain after revealing known curves");
  }
  const std::size_t max_prefix = *std::max_element(cfg.prefix_lengths.begin(), cfg.prefix_lengths.end());

  RankCorrelationReport report;
  report.prefix_lengths = cfg.prefix_lengths;
  std::vector<std::vector<double>> per_prefix(cfg.prefix_lengths.size());
  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    std::mt19937_64 rng(cfg.seed + rep);
    std::vector<std::size_t> idx(curves.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);

    MetaknowledgeStore train = train_store;
    for (std::size_t i = 0; i < cfg.n_known_curves; ++i) train.add_completed_run(curves[idx[i]]);
    ModelHyperparams h = hyper;
    h.seed = hyper.seed + rep;
    const auto bank = fit_prefix_models(train, h, max_prefix);

    std::vector<double> truth;
    for (std::size_t i = cfg.n_known_curves; i < idx.size(); ++i) truth.push_back(curves[idx[i]].final_value());
    if (cfg.permute_targets) std::shuffle(truth.begin(), truth.end(), rng);

    for (std::size_t p = 0; p < cfg.prefix_lengths.size(); ++p) {
      const std::size_t T = cfg.prefix_lengths[p];
      std::vector<double> predicted;
      for (std::size_t i = cfg.n_known_curves; i < idx.size(); ++i) {
        const auto& c = curves[idx[i]];
        predicted.push_back(bank.predict(c.arch, c.dataset, std::span<const double>(c.values).first(T)).mean);
      }
      const double rho = spearman(predicted, truth);
      report.entries.push_back({T, rep, rho});
      per_prefix[p].push_back(rho);
    }
  }
  for (const auto& v : per_prefix) report.summary.push_back(mean_std(v));
  return report;
}

inline std::string rank_report_csv(const RankCorrelationReport& report) {
  std::string out = "prefix_T,repetition,spearman\n";
  for (const auto& e : report.entries) {
    out += std::to_string(e.prefix) + ',' + std::to_string(e.repetition) + ',' + format_double(e.spearman) + '\n';
  }
  return out;
}

inline nlohmann::ordered_json rank_report_json(const RankCorrelationReport& report) {
  nlohmann::ordered_json j;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < report.prefix_lengths.size(); ++p) {
    nlohmann::ordered_json r;
    r["prefix_T"] = report.prefix_lengths[p];
    r["mean_spearman"] = report.summary[p].mean;
    r["std_spearman"] = report.summary[p].std;
    rows.push_back(std::move(r));
  }
  j["summary"] = std::move(rows);
  return j;
}

// ---------------------------------------------------------------------------
// IT-NAS versus random search

struct ComparisonRow {
  std::size_t budget = 0;
  MeanStd it_nas;
  MeanStd random;
};

struct SearchComparison {
  std::vector<ComparisonRow> rows;
  double pool_best = 0.0;
};

/// Runs both searches on the same replay of `held` for every repetition
/// (seed + repetition) and aggregates the incumbent accuracy per budget.
inline SearchComparison search_comparison(const MetaknowledgeStore& train_store, const MetaknowledgeStore& held,
                                          DatasetId dataset, std::span<const std::size_t> budgets,
                                          std::size_t repetitions, const ModelHyperparams& hyper,
                                          std::uint64_t seed = 0) {
  if (budgets.empty() || repetitions < 1) throw std::invalid_argument("search_comparison: empty budgets or repetitions");
  std::vector<ArchitectureId> candidates;
  for (const auto& o : held.observations()) {
    if (o.dataset == dataset) candidates.push_back(o.arch);
  }
  if (candidates.empty()) throw std::invalid_argument("held store has no final accuracies for the dataset");
  candidates = normalize_candidates(candidates);
  const std::size_t max_budget = *std::max_element(budgets.begin(), budgets.end());

  SearchComparison out;
  for (auto c : candidates) out.pool_best = std::max(out.pool_best, *held.accuracy(c, dataset));
  std::vector<std::vector<double>> it(budgets.size()), rnd(budgets.size());
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    SearchConfig cfg;
    cfg.budget = max_budget;
    cfg.hyper = hyper;
    cfg.seed = seed + rep;
    ReplayEvaluator eval(held, dataset);
    const auto a = run_it_nas(train_store, dataset, candidates, eval, cfg);
    const auto b = run_random_search(candidates, eval, cfg);
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      const std::size_t k = std::min(budgets[i], a.steps.size());
      it[i].push_back(a.steps[k - 1].incumbent);
      rnd[i].push_back(b.steps[std::min(budgets[i], b.steps.size()) - 1].incumbent);
    }
  }
  for (std::size_t i = 0; i < budgets.size(); ++i) out.rows.push_back({budgets[i], mean_std(it[i]), mean_std(rnd[i])});
  return out;
}

inline std::string comparison_csv(const SearchComparison& c) {
  std::string out = "budget,method,mean_incumbent,std_incumbent\n";
  for (const auto& r : c.rows) {
    out += std::to_string(r.budget) + ",it-nas," + format_double(r.it_nas.mean) + ',' + format_double(r.it_nas.std) + '\n';
    out += std::to_string(r.budget) + ",random," + format_double(r.random.mean) + ',' + format_double(r.random.std) + '\n';
  }
  return out;
}

}  // namespace itnas
