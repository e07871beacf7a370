#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "itnas/itnas.hpp"

namespace itnas::cli {

namespace fs = std::filesystem;

inline nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// Replaces (or adds) the extension of `path`.
inline fs::path sibling(const fs::path& path, const std::string& ext) {
  fs::path p = path;
  p.replace_extension(ext);
  return p;
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
};

inline void add_common(CLI::App* cmd, Common& c, const std::string& config_help) {
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--config", c.config, config_help)->check(CLI::ExistingFile);
}

inline ModelHyperparams load_hyper(const Common& c) {
  ModelHyperparams h;
  if (!c.config.empty()) h = hyperparams_from_json(read_json_file(c.config));
  if (c.seed) h.seed = *c.seed;
  h.validate();
  return h;
}

inline std::vector<ArchitectureId> archs_with_accuracy(const MetaknowledgeStore& held, DatasetId d) {
  std::vector<ArchitectureId> out;
  for (const auto& o : held.observations()) {
    if (o.dataset == d) out.push_back(o.arch);
  }
  return normalize_candidates(out);
}

inline std::vector<ArchitectureId> all_archs(const MetaknowledgeStore& store) {
  std::vector<ArchitectureId> out;
  for (std::uint32_t n = 0; n < store.n_archs(); ++n) out.emplace_back(n);
  return out;
}

inline int cli_main(int argc, char** argv) {
  CLI::App app{"Transfer-learned architecture selection and learning-curve early stopping"};
  app.require_subcommand(1);
  app.failure_message([](const CLI::App*, const CLI::Error& e) { return "error: " + std::string(e.what()) + "\n"; });

  // gen-synthetic
  Common gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic metaknowledge store");
  add_common(gen_cmd, gen, "generator config JSON");
  gen_cmd->add_option("--out-dir", gen_out, "output directory")->required();

  // fit
  Common fit_c;
  std::string fit_store, fit_out;
  std::optional<std::uint32_t> fit_holdout;
  std::size_t fit_prefix = 0;
  auto* fit_cmd = app.add_subcommand("fit", "fit the transfer model and write a checkpoint");
  add_common(fit_cmd, fit_c, "model hyperparameter JSON");
  fit_cmd->add_option("--store", fit_store, "store directory")->required()->check(CLI::ExistingDirectory);
  fit_cmd->add_option("--holdout", fit_holdout, "dataset id excluded from training");
  fit_cmd->add_option("--prefix", fit_prefix, "fit a curve model on T-epoch prefixes (0: final accuracies)");
  fit_cmd->add_option("--out", fit_out, "checkpoint JSON")->required();

  // recommend
  Common rec;
  std::string rec_store, rec_model, rec_out;
  std::uint32_t rec_dataset = 0;
  std::size_t rec_top = 10;
  auto* rec_cmd = app.add_subcommand("recommend", "rank unevaluated architectures for a dataset");
  add_common(rec_cmd, rec, "model hyperparameter JSON");
  rec_cmd->add_option("--store", rec_store, "store directory")->required()->check(CLI::ExistingDirectory);
  rec_cmd->add_option("--model", rec_model, "checkpoint from `fit` (fitted on the fly when omitted)")
      ->check(CLI::ExistingFile);
  rec_cmd->add_option("--dataset", rec_dataset, "target dataset id")->required();
  rec_cmd->add_option("--top", rec_top, "number of rows");
  rec_cmd->add_option("--out", rec_out, "output CSV")->required();

  // simulate-search
  Common ss;
  std::string ss_store, ss_out, ss_summary, ss_method = "it-nas";
  std::uint32_t ss_holdout = 0;
  std::size_t ss_budget = 10;
  auto* ss_cmd = app.add_subcommand("simulate-search", "replay a search on a held-out dataset");
  add_common(ss_cmd, ss, "model hyperparameter JSON");
  ss_cmd->add_option("--store", ss_store, "store directory")->required()->check(CLI::ExistingDirectory);
  ss_cmd->add_option("--holdout", ss_holdout, "held-out dataset id")->required();
  ss_cmd->add_option("--budget", ss_budget, "number of evaluations");
  ss_cmd->add_option("--method", ss_method, "it-nas or random")->check(CLI::IsMember({"it-nas", "random"}));
  ss_cmd->add_option("--out", ss_out, "trace CSV")->required();
  ss_cmd->add_option("--summary", ss_summary, "summary JSON (default: next to --out)");

  // simulate-earlystop
  Common es;
  std::string es_store, es_out, es_csv;
  std::uint32_t es_holdout = 0;
  double es_delta = 0.05;
  std::size_t es_min_epochs = 1, es_max_runs = 0;
  auto* es_cmd = app.add_subcommand("simulate-earlystop", "replay random search with early termination");
  add_common(es_cmd, es, "model hyperparameter JSON");
  es_cmd->add_option("--store", es_store, "store directory")->required()->check(CLI::ExistingDirectory);
  es_cmd->add_option("--holdout", es_holdout, "held-out dataset id")->required();
  es_cmd->add_option("--delta", es_delta, "stop when P(improvement) <= delta");
  es_cmd->add_option("--min-epochs", es_min_epochs, "never stop before this many epochs");
  es_cmd->add_option("--max-runs", es_max_runs, "replay at most this many runs (0: all)");
  es_cmd->add_option("--out", es_out, "report JSON")->required();
  es_cmd->add_option("--csv", es_csv, "per-run CSV (default: next to --out)");

  // eval-rank
  Common er;
  std::string er_store, er_out, er_summary;
  std::uint32_t er_holdout = 0;
  ExperimentConfig er_cfg;
  auto* er_cmd = app.add_subcommand("eval-rank", "rank correlation of extrapolated final accuracies");
  add_common(er_cmd, er, "model hyperparameter JSON");
  er_cmd->add_option("--store", er_store, "store directory")->required()->check(CLI::ExistingDirectory);
  er_cmd->add_option("--holdout", er_holdout, "held-out dataset id")->required();
  er_cmd->add_option("--known", er_cfg.n_known_curves, "full curves revealed per repetition");
  er_cmd->add_option("--prefixes", er_cfg.prefix_lengths, "prefix lengths")->delimiter(',');
  er_cmd->add_option("--repetitions", er_cfg.repetitions, "repetitions");
  er_cmd->add_flag("--permute-targets", er_cfg.permute_targets, "negative control");
  er_cmd->add_option("--out", er_out, "rank_report.csv path")->required();
  er_cmd->add_option("--summary", er_summary, "summary JSON (default: next to --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen_cmd) {
      SyntheticConfig cfg;
      if (!gen.config.empty()) cfg = synthetic_config_from_json(read_json_file(gen.config));
      if (gen.seed) cfg.seed = *gen.seed;
      const auto [store, truth] = generate_synthetic(cfg);
      save_store_dir(store, gen_out);
      write_text_file(fs::path(gen_out) / "truth.json", json_text(ground_truth_to_json(truth)));
    } else if (*fit_cmd) {
      const auto hyper = load_hyper(fit_c);
      MetaknowledgeStore store = load_store_dir(fit_store);
      if (fit_holdout) store = holdout_dataset(store, DatasetId(*fit_holdout)).first;
      const auto mode = fit_prefix == 0 ? LikelihoodMode::final_accuracy() : LikelihoodMode::curve_at_prefix(fit_prefix);
      if (fit_prefix >= store.horizon() && fit_prefix != 0) {
        throw std::invalid_argument("--prefix must be smaller than the store horizon");
      }
      auto init = init_variational(hyper, store.n_archs(), store.n_datasets(), mode.uses_curves());
      write_text_file(fit_out, checkpoint_string(fit(init, store, hyper, mode), hyper));
    } else if (*rec_cmd) {
      const MetaknowledgeStore store = load_store_dir(rec_store);
      const DatasetId d(rec_dataset);
      std::vector<ArchitectureId> open;
      for (auto n : all_archs(store)) {
        if (!store.has_observation(n, d)) open.push_back(n);
      }
      std::string out = "rank,arch_id,criterion,score,mean,variance\n";
      std::size_t rank = 0;
      if (store.rows_for_dataset(d) == 0) {
        // Nothing known about the dataset: order by normalized mean accuracy elsewhere.
        const auto scores = normalized_mean_accuracy(store);
        std::vector<std::pair<double, ArchitectureId>> ranked;
        for (auto n : open) {
          if (scores[n.value]) ranked.emplace_back(-*scores[n.value], n);
        }
        std::sort(ranked.begin(), ranked.end());
        for (const auto& [neg, n] : ranked) {
          if (rank == rec_top) break;
          out += std::to_string(++rank) + ',' + std::to_string(n.value) + ",normalized_mean," + format_double(-neg) +
                 ",,\n";
        }
      } else {
        ModelHyperparams hyper;
        VariationalParams vp;
        if (!rec_model.empty()) {
          auto ck = checkpoint_from_string(read_text_file(rec_model));
          if (ck.params.layout.curve_term) throw std::invalid_argument("--model holds a curve model; need a final-accuracy model");
          if (ck.params.layout.n_archs != store.n_archs() || ck.params.layout.n_datasets <= d.value) {
            throw std::invalid_argument("--model shape does not match the store");
          }
          hyper = ck.hyper;
          vp = std::move(ck.params);
        } else {
          hyper = load_hyper(rec);
          auto init = init_variational(hyper, store.n_archs(), store.n_datasets(), false);
          vp = fit(init, store, hyper, LikelihoodMode::final_accuracy());
        }
        Incumbent best;
        for (const auto& o : store.observations()) {
          if (o.dataset == d) best = best ? std::max(*best, o.accuracy) : o.accuracy;
        }
        const double incumbent = *best;
        struct Row {
          double ei;
          ArchitectureId n;
          PredictiveMoments m;
        };
        std::vector<Row> rows;
        for (auto n : open) {
          const auto m = predict(vp, hyper, n, d);
          rows.push_back({expected_improvement(m, incumbent), n, m});
        }
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ei > b.ei; });
        for (const auto& r : rows) {
          if (rank == rec_top) break;
          out += std::to_string(++rank) + ',' + std::to_string(r.n.value) + ",expected_improvement," +
                 format_double(r.ei) + ',' + format_double(r.m.mean) + ',' + format_double(r.m.variance) + '\n';
        }
      }
      write_text_file(rec_out, out);
    } else if (*ss_cmd) {
      SearchConfig cfg;
      cfg.hyper = load_hyper(ss);
      cfg.seed = cfg.hyper.seed;
      cfg.budget = ss_budget;
      const auto [train, held] = holdout_dataset(load_store_dir(ss_store), DatasetId(ss_holdout));
      const auto candidates = archs_with_accuracy(held, DatasetId(ss_holdout));
      if (candidates.empty()) throw std::invalid_argument("held-out dataset has no stored accuracies");
      double pool_best = 0.0;
      for (auto c : candidates) pool_best = std::max(pool_best, *held.accuracy(c, DatasetId(ss_holdout)));
      ReplayEvaluator eval(held, DatasetId(ss_holdout));
      const SearchTrace trace = ss_method == "random" ? run_random_search(candidates, eval, cfg)
                                                       : run_it_nas(train, DatasetId(ss_holdout), candidates, eval, cfg);
      write_text_file(ss_out, trace_csv(trace));
      write_text_file(ss_summary.empty() ? sibling(ss_out, ".json") : fs::path(ss_summary),
                      json_text(trace_summary_json(trace, pool_best)));
    } else if (*es_cmd) {
      const auto hyper = load_hyper(es);
      AccelerationConfig cfg;
      cfg.stop.delta = es_delta;
      cfg.stop.min_epochs = es_min_epochs;
      cfg.order_seed = hyper.seed;
      cfg.max_runs = es_max_runs;
      const auto [train, held] = holdout_dataset(load_store_dir(es_store), DatasetId(es_holdout));
      const auto report = accelerated_random_search(train, held.curves(), cfg, hyper);
      write_text_file(es_out, json_text(acceleration_json(report)));
      write_text_file(es_csv.empty() ? sibling(es_out, ".csv") : fs::path(es_csv), acceleration_csv(report));
    } else if (*er_cmd) {
      const auto hyper = load_hyper(er);
      er_cfg.seed = hyper.seed;
      const auto [train, held] = holdout_dataset(load_store_dir(er_store), DatasetId(er_holdout));
      const auto report = rank_correlation_experiment(train, held, er_cfg, hyper);
      write_text_file(er_out, rank_report_csv(report));
      write_text_file(er_summary.empty() ? sibling(er_out, ".json") : fs::path(er_summary),
                      json_text(rank_report_json(report)));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace itnas::cli
