#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

namespace itnas {

struct ArchitectureId {
  std::uint32_t value = 0;
  constexpr ArchitectureId() = default;
  constexpr explicit ArchitectureId(std::uint32_t v) : value(v) {}
  friend constexpr auto operator<=>(ArchitectureId, ArchitectureId) = default;
};

struct DatasetId {
  std::uint32_t value = 0;
  constexpr DatasetId() = default;
  constexpr explicit DatasetId(std::uint32_t v) : value(v) {}
  friend constexpr auto operator<=>(DatasetId, DatasetId) = default;
};

struct AccuracyObservation {
  ArchitectureId arch;
  DatasetId dataset;
  double accuracy = 0.0;
  friend bool operator==(const AccuracyObservation&, const AccuracyObservation&) = default;
};

/// Validation accuracy per epoch. `values[0]` is epoch 1.
struct LearningCurve {
  ArchitectureId arch;
  DatasetId dataset;
  std::vector<double> values;

  std::size_t length() const { return values.size(); }
  double final_value() const { return values.back(); }
  /// 1-based epoch access.
  double at_epoch(std::size_t epoch) const { return values.at(epoch - 1); }
  friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Max accuracy over epochs 1..T of a curve.
inline double prefix_max(std::span<const double> values, std::size_t T) {
  if (T < 1 || T > values.size()) {
    throw std::out_of_range("prefix length " + std::to_string(T) + " outside [1, " +
                            std::to_string(values.size()) + "]");
  }
  return *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(T));
}

inline double prefix_max(const LearningCurve& curve, std::size_t T) {
  return prefix_max(std::span<const double>(curve.values), T);
}

/// All observed (architecture, dataset) final accuracies and learning curves.
///
/// Dimensions grow to cover every id added but may also be declared larger up
/// front, so that a partition of a store keeps the id space of its parent.
/// The horizon is fixed by the first curve added; 0 means "no curves yet".
class MetaknowledgeStore {
 public:
  MetaknowledgeStore() = default;
  MetaknowledgeStore(std::size_t n_archs, std::size_t n_datasets, std::size_t horizon = 0)
      : n_archs_(n_archs), n_datasets_(n_datasets), horizon_(horizon) {}

  std::size_t n_archs() const { return n_archs_; }
  std::size_t n_datasets() const { return n_datasets_; }
  std::size_t horizon() const { return horizon_; }

  const std::vector<AccuracyObservation>& observations() const { return observations_; }
  const std::vector<LearningCurve>& curves() const { return curves_; }

  bool empty() const { return observations_.empty() && curves_.empty(); }

  void reserve_dimensions(std::size_t n_archs, std::size_t n_datasets) {
    n_archs_ = std::max(n_archs_, n_archs);
    n_datasets_ = std::max(n_datasets_, n_datasets);
  }

  void add_observation(const AccuracyObservation& obs) {
    check_accuracy(obs.accuracy, "observation");
    const auto key = key_of(obs.arch, obs.dataset);
    if (observation_index_.contains(key)) {
      throw StoreError("duplicate observation for arch " + std::to_string(obs.arch.value) +
                       ", dataset " + std::to_string(obs.dataset.value));
    }
    if (auto it = curve_index_.find(key); it != curve_index_.end()) {
      check_consistent(obs.accuracy, curves_[it->second]);
    }
    observation_index_.emplace(key, observations_.size());
    observations_.push_back(obs);
    reserve_dimensions(obs.arch.value + 1u, obs.dataset.value + 1u);
  }

  void add_curve(LearningCurve curve) {
    if (curve.values.empty()) throw StoreError("learning curve must have at least one epoch");
    if (horizon_ != 0 && curve.values.size() != horizon_) {
      throw StoreError("non-uniform horizon: curve for arch " + std::to_string(curve.arch.value) +
                       ", dataset " + std::to_string(curve.dataset.value) + " has " +
                       std::to_string(curve.values.size()) + " epochs, store horizon is " +
                       std::to_string(horizon_));
    }
    for (double v : curve.values) check_accuracy(v, "curve");
    const auto key = key_of(curve.arch, curve.dataset);
    if (curve_index_.contains(key)) {
      throw StoreError("duplicate curve for arch " + std::to_string(curve.arch.value) +
                       ", dataset " + std::to_string(curve.dataset.value));
    }
    if (auto it = observation_index_.find(key); it != observation_index_.end()) {
      check_consistent(observations_[it->second].accuracy, curve);
    }
    horizon_ = curve.values.size();
    reserve_dimensions(curve.arch.value + 1u, curve.dataset.value + 1u);
    curve_index_.emplace(key, curves_.size());
    curves_.push_back(std::move(curve));
  }

  /// Adds a full curve together with the observation its final epoch defines.
  void add_completed_run(LearningCurve curve) {
    const AccuracyObservation obs{curve.arch, curve.dataset, curve.final_value()};
    add_curve(std::move(curve));
    if (!has_observation(obs.arch, obs.dataset)) add_observation(obs);
  }

  bool has_observation(ArchitectureId n, DatasetId d) const {
    return observation_index_.contains(key_of(n, d));
  }
  bool has_curve(ArchitectureId n, DatasetId d) const { return curve_index_.contains(key_of(n, d)); }

  std::optional<double> accuracy(ArchitectureId n, DatasetId d) const {
    auto it = observation_index_.find(key_of(n, d));
    if (it == observation_index_.end()) return std::nullopt;
    return observations_[it->second].accuracy;
  }

  const LearningCurve* curve(ArchitectureId n, DatasetId d) const {
    auto it = curve_index_.find(key_of(n, d));
    return it == curve_index_.end() ? nullptr : &curves_[it->second];
  }

  /// Number of observations and curves touching dataset d.
  std::size_t rows_for_dataset(DatasetId d) const {
    std::size_t count = 0;
    for (const auto& o : observations_) count += o.dataset == d;
    for (const auto& c : curves_) count += c.dataset == d;
    return count;
  }

  /// The observed index set: every pair with an observation or a curve, sorted.
  std::vector<std::pair<ArchitectureId, DatasetId>> observed_index() const {
    std::map<std::pair<std::uint32_t, std::uint32_t>, bool> keys;
    for (const auto& [k, _] : observation_index_) keys.emplace(k, true);
    for (const auto& [k, _] : curve_index_) keys.emplace(k, true);
    std::vector<std::pair<ArchitectureId, DatasetId>> out;
    out.reserve(keys.size());
    for (const auto& [k, _] : keys) out.emplace_back(ArchitectureId(k.first), DatasetId(k.second));
    return out;
  }

 private:
  using Key = std::pair<std::uint32_t, std::uint32_t>;
  static Key key_of(ArchitectureId n, DatasetId d) { return {n.value, d.value}; }

  static void check_accuracy(double a, const char* what) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw StoreError(std::string(what) + " accuracy outside [0,1]: " + std::to_string(a));
    }
  }

  static void check_consistent(double accuracy, const LearningCurve& curve) {
    if (accuracy != curve.final_value()) {
      throw StoreError("observation for arch " + std::to_string(curve.arch.value) + ", dataset " +
                       std::to_string(curve.dataset.value) +
                       " contradicts the final epoch of its learning curve");
    }
  }

  std::size_t n_archs_ = 0;
  std::size_t n_datasets_ = 0;
  std::size_t horizon_ = 0;
  std::vector<AccuracyObservation> observations_;
  std::vector<LearningCurve> curves_;
  std::map<Key, std::size_t> observation_index_;
  std::map<Key, std::size_t> curve_index_;
};

/// Splits a store into (everything but dataset d, only dataset d). Both parts
/// keep the parent's id space.
inline std::pair<MetaknowledgeStore, MetaknowledgeStore> holdout_dataset(
    const MetaknowledgeStore& store, DatasetId d) {
  if (d.value >= store.n_datasets()) {
    throw StoreError("unknown dataset id " + std::to_string(d.value));
  }
  MetaknowledgeStore train(store.n_archs(), store.n_datasets(), store.horizon());
  MetaknowledgeStore held(store.n_archs(), store.n_datasets(), store.horizon());
  for (const auto& c : store.curves()) (c.dataset == d ? held : train).add_curve(c);
  for (const auto& o : store.observations()) (o.dataset == d ? held : train).add_observation(o);
  return {std::move(train), std::move(held)};
}

// ---------------------------------------------------------------------------
// CSV files

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, end);
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view field, const std::string& file, std::size_t row) {
  field = trim(field);
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw StoreError(file + ": parse failure at row " + std::to_string(row) + ": bad field '" +
                     std::string(field) + "'");
  }
  return value;
}

/// Calls `on_row(fields, row_number)` for every data row. Row numbers are
/// 1-based file line numbers; blank lines are skipped.
template <typename F>
void read_csv(const std::filesystem::path& path, std::string_view header, std::size_t n_fields,
              F&& on_row) {
  std::ifstream in(path);
  if (!in) throw StoreError("cannot open " + path.string());
  std::string line;
  std::size_t row = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++row;
    auto view = trim(line);
    if (view.empty()) continue;
    if (!seen_header) {
      if (view != header) {
        throw StoreError(path.string() + ": expected header '" + std::string(header) + "' at row " +
                         std::to_string(row));
      }
      seen_header = true;
      continue;
    }
    auto fields = split_fields(view);
    if (fields.size() != n_fields) {
      throw StoreError(path.string() + ": parse failure at row " + std::to_string(row) +
                       ": expected " + std::to_string(n_fields) + " fields");
    }
    on_row(fields, row);
  }
}

}  // namespace detail

inline constexpr std::string_view kObservationsHeader = "dataset_id,arch_id,accuracy";
inline constexpr std::string_view kCurvesHeader = "dataset_id,arch_id,epoch,accuracy";

/// Loads observations.csv and, optionally, curves.csv.
inline MetaknowledgeStore load_store(const std::filesystem::path& observations_path,
                                     const std::optional<std::filesystem::path>& curves_path = {}) {
  MetaknowledgeStore store;
  const std::string obs_name = observations_path.string();

  // Curves first so that observation rows can be checked against them.
  if (curves_path) {
    const std::string name = curves_path->string();
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::map<std::uint32_t, double>> grouped;
    detail::read_csv(*curves_path, kCurvesHeader, 4, [&](const auto& f, std::size_t row) {
      const auto d = detail::parse_number<std::uint32_t>(f[0], name, row);
      const auto n = detail::parse_number<std::uint32_t>(f[1], name, row);
      const auto epoch = detail::parse_number<std::uint32_t>(f[2], name, row);
      const auto acc = detail::parse_number<double>(f[3], name, row);
      if (epoch < 1) throw StoreError(name + ": epoch must be >= 1 at row " + std::to_string(row));
      if (!(acc >= 0.0 && acc <= 1.0)) {
        throw StoreError(name + ": accuracy outside [0,1] at row " + std::to_string(row));
      }
      if (!grouped[{n, d}].emplace(epoch, acc).second) {
        throw StoreError(name + ": duplicate (arch, dataset, epoch) at row " + std::to_string(row));
      }
    });
    std::size_t horizon = 0;
    for (const auto& [key, epochs] : grouped) horizon = std::max<std::size_t>(horizon, epochs.rbegin()->first);
    for (const auto& [key, epochs] : grouped) {
      if (epochs.size() != horizon || epochs.rbegin()->first != horizon) {
        throw StoreError(name + ": non-uniform horizon for arch " + std::to_string(key.first) +
                         ", dataset " + std::to_string(key.second));
      }
      LearningCurve c{ArchitectureId(key.first), DatasetId(key.second), {}};
      c.values.reserve(horizon);
      for (const auto& [e, v] : epochs) c.values.push_back(v);
      store.add_curve(std::move(c));
    }
  }

  detail::read_csv(observations_path, kObservationsHeader, 3, [&](const auto& f, std::size_t row) {
    const auto d = detail::parse_number<std::uint32_t>(f[0], obs_name, row);
    const auto n = detail::parse_number<std::uint32_t>(f[1], obs_name, row);
    const auto acc = detail::parse_number<double>(f[2], obs_name, row);
    try {
      store.add_observation({ArchitectureId(n), DatasetId(d), acc});
    } catch (const StoreError& e) {
      throw StoreError(obs_name + ": row " + std::to_string(row) + ": " + e.what());
    }
  });
  return store;
}

/// Loads `observations.csv` (+ `curves.csv` when present) from a directory.
inline MetaknowledgeStore load_store_dir(const std::filesystem::path& dir) {
  const auto curves = dir / "curves.csv";
  return load_store(dir / "observations.csv",
                    std::filesystem::exists(curves) ? std::optional(curves) : std::nullopt);
}

/// Canonical observations.csv: rows sorted by (dataset, arch).
inline std::string observations_csv(const MetaknowledgeStore& store) {
  auto rows = store.observations();
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.arch) < std::tie(b.dataset, b.arch);
  });
  std::string out(kObservationsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.dataset.value) + ',' + std::to_string(r.arch.value) + ',' +
           format_double(r.accuracy) + '\n';
  }
  return out;
}

/// Canonical curves.csv: rows sorted by (dataset, arch, epoch).
inline std::string curves_csv(const MetaknowledgeStore& store) {
  std::vector<const LearningCurve*> rows;
  for (const auto& c : store.curves()) rows.push_back(&c);
  std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
    return std::tie(a->dataset, a->arch) < std::tie(b->dataset, b->arch);
  });
  std::string out(kCurvesHeader);
  out += '\n';
  for (const auto* c : rows) {
    const std::string prefix = std::to_string(c->dataset.value) + ',' + std::to_string(c->arch.value) + ',';
    for (std::size_t e = 0; e < c->values.size(); ++e) {
      out += prefix + std::to_string(e + 1) + ',' + format_double(c->values[e]) + '\n';
    }
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes observations.csv, and curves.csv when the store has curves.
inline void save_store_dir(const MetaknowledgeStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "observations.csv", observations_csv(store));
  if (!store.curves().empty()) write_text_file(dir / "curves.csv", curves_csv(store));
}

// ---------------------------------------------------------------------------
// Synthetic metaknowledge

struct SyntheticConfig {
  std::size_t n_archs = 40;
  std::size_t n_datasets = 6;
  std::size_t latent_dim = 2;
  std::size_t horizon = 50;
  double noise_scale = 0.01;
  std::uint64_t seed = 0;
};

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_archs") c.n_archs = value.get<std::size_t>();
    else if (key == "n_datasets") c.n_datasets = value.get<std::size_t>();
    else if (key == "latent_dim") c.latent_dim = value.get<std::size_t>();
    else if (key == "horizon") c.horizon = value.get<std::size_t>();
    else if (key == "noise_scale") c.noise_scale = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("unknown synthetic config key '" + key + "'");
  }
  return c;
}

/// Generating weights and curve shapes behind a synthetic store.
struct SyntheticGroundTruth {
  std::size_t n_archs = 0;
  std::size_t n_datasets = 0;
  std::size_t latent_dim = 0;
  double noise_scale = 0.0;
  double global_bias = 0.0;
  std::vector<double> arch_bias;       // n_archs
  std::vector<double> dataset_bias;    // n_datasets
  std::vector<double> arch_latent;     // n_archs x latent_dim, row-major
  std::vector<double> dataset_latent;  // n_datasets x latent_dim, row-major
  std::vector<double> rate;            // n_archs x n_datasets
  std::vector<double> final_accuracy;  // n_archs x n_datasets

  /// Noise-free affine score b0 + b_n + b_d + v_n^T u_d.
  double affine_score(ArchitectureId n, DatasetId d) const {
    double s = global_bias + arch_bias[n.value] + dataset_bias[d.value];
    for (std::size_t k = 0; k < latent_dim; ++k) {
      s += arch_latent[n.value * latent_dim + k] * dataset_latent[d.value * latent_dim + k];
    }
    return s;
  }
  double final_of(ArchitectureId n, DatasetId d) const {
    return final_accuracy[n.value * n_datasets + d.value];
  }
  double rate_of(ArchitectureId n, DatasetId d) const { return rate[n.value * n_datasets + d.value]; }
};

/// Noise-free saturating-exponential curve value at 1-based epoch t, scaled so
/// that epoch `horizon` lands exactly on `final_accuracy`.
inline double saturating_curve(double final_accuracy, double rate, std::size_t t, std::size_t horizon) {
  const double x = static_cast<double>(t) / static_cast<double>(horizon);
  return final_accuracy * (-std::expm1(-rate * x)) / (-std::expm1(-rate));
}

inline nlohmann::ordered_json ground_truth_to_json(const SyntheticGroundTruth& t) {
  nlohmann::ordered_json j;
  j["n_archs"] = t.n_archs;
  j["n_datasets"] = t.n_datasets;
  j["latent_dim"] = t.latent_dim;
  j["noise_scale"] = t.noise_scale;
  j["global_bias"] = t.global_bias;
  j["arch_bias"] = t.arch_bias;
  j["dataset_bias"] = t.dataset_bias;
  j["arch_latent"] = t.arch_latent;
  j["dataset_latent"] = t.dataset_latent;
  j["rate"] = t.rate;
  j["final_accuracy"] = t.final_accuracy;
  return j;
}

/// Draws a complete synthetic metaknowledge store: a final accuracy and a full
/// learning curve for every (architecture, dataset) pair.
inline std::pair<MetaknowledgeStore, SyntheticGroundTruth> generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_archs < 1 || cfg.n_datasets < 1 || cfg.horizon < 1) {
    throw std::invalid_argument("synthetic config: n_archs, n_datasets and horizon must be >= 1");
  }
  if (!(cfg.noise_scale >= 0.0)) throw std::invalid_argument("synthetic config: noise_scale must be >= 0");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const std::size_t f = cfg.latent_dim;

  SyntheticGroundTruth t;
  t.n_archs = cfg.n_archs;
  t.n_datasets = cfg.n_datasets;
  t.latent_dim = f;
  t.noise_scale = cfg.noise_scale;
  t.global_bias = 0.7 + 0.02 * z(rng);
  t.arch_bias.resize(cfg.n_archs);
  t.dataset_bias.resize(cfg.n_datasets);
  for (auto& b : t.arch_bias) b = 0.06 * z(rng);
  for (auto& b : t.dataset_bias) b = 0.05 * z(rng);
  // Entry scale chosen so the interaction term has standard deviation 0.03.
  const double latent_sd = f == 0 ? 0.0 : std::pow(9e-4 / static_cast<double>(f), 0.25);
  t.arch_latent.resize(cfg.n_archs * f);
  t.dataset_latent.resize(cfg.n_datasets * f);
  for (auto& v : t.arch_latent) v = latent_sd * z(rng);
  for (auto& u : t.dataset_latent) u = latent_sd * z(rng);

  // Learning speed is mostly a property of the architecture.
  std::vector<double> arch_log_rate(cfg.n_archs);
  for (auto& r : arch_log_rate) r = std::log(4.0) + 0.25 * z(rng);

  t.rate.resize(cfg.n_archs * cfg.n_datasets);
  t.final_accuracy.resize(cfg.n_archs * cfg.n_datasets);
  MetaknowledgeStore store(cfg.n_archs, cfg.n_datasets);
  for (std::uint32_t d = 0; d < cfg.n_datasets; ++d) {
    for (std::uint32_t n = 0; n < cfg.n_archs; ++n) {
      const ArchitectureId arch(n);
      const DatasetId data(d);
      const double a_final = std::clamp(t.affine_score(arch, data) + cfg.noise_scale * z(rng), 0.0, 1.0);
      const double k = std::exp(arch_log_rate[n] + 0.1 * z(rng));
      t.final_accuracy[n * cfg.n_datasets + d] = a_final;
      t.rate[n * cfg.n_datasets + d] = k;

      LearningCurve c{arch, data, std::vector<double>(cfg.horizon)};
      for (std::size_t e = 1; e < cfg.horizon; ++e) {
        const double v = saturating_curve(a_final, k, e, cfg.horizon) + cfg.noise_scale * z(rng);
        c.values[e - 1] = std::clamp(v, 0.0, 1.0);
      }
      c.values.back() = a_final;
      store.add_observation({arch, data, a_final});
      store.add_curve(std::move(c));
    }
  }
  return {std::move(store), std::move(t)};
}

}  // namespace itnas
