#include <algorithm>
#include <filesystem>
#include <tuple>

#include <gtest/gtest.h>

#include "itnas/metaknowledge.hpp"
#include "test_util.hpp"

using namespace itnas;
namespace fs = std::filesystem;

namespace {

LearningCurve curve(std::uint32_t n, std::uint32_t d, std::vector<double> v) {
  return {ArchitectureId(n), DatasetId(d), std::move(v)};
}

std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> obs_rows(const MetaknowledgeStore& s) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> out;
  for (const auto& o : s.observations()) out.emplace_back(o.arch.value, o.dataset.value, o.accuracy);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::tuple<std::uint32_t, std::uint32_t, std::vector<double>>> curve_rows(const MetaknowledgeStore& s) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, std::vector<double>>> out;
  for (const auto& c : s.curves()) out.emplace_back(c.arch.value, c.dataset.value, c.values);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(PrefixMax, Examples) {
  const LearningCurve c = curve(0, 0, {0.2, 0.5, 0.4});
  EXPECT_EQ(prefix_max(c, 3), 0.5);
  EXPECT_EQ(prefix_max(c, 1), 0.2);
  EXPECT_EQ(prefix_max(c, 2), 0.5);
}

TEST(PrefixMax, OutOfRange) {
  const LearningCurve c = curve(0, 0, {0.2, 0.5, 0.4});
  EXPECT_THROW(prefix_max(c, 0), std::out_of_range);
  EXPECT_THROW(prefix_max(c, 4), std::out_of_range);
}

TEST(PrefixMax, MonotoneInT) {
  SyntheticConfig cfg;
  cfg.n_archs = 6;
  cfg.n_datasets = 2;
  cfg.horizon = 30;
  cfg.noise_scale = 0.05;
  const auto store = generate_synthetic(cfg).first;
  for (const auto& c : store.curves()) {
    for (std::size_t T = 2; T <= c.length(); ++T) EXPECT_GE(prefix_max(c, T), prefix_max(c, T - 1));
  }
}

TEST(PrefixMax, MonotoneCurveGivesValueAtT) {
  const LearningCurve c = curve(0, 0, {0.1, 0.3, 0.35, 0.6, 0.61});
  for (std::size_t T = 1; T <= 5; ++T) EXPECT_EQ(prefix_max(c, T), c.at_epoch(T));
}

TEST(Store, RejectsBadRows) {
  MetaknowledgeStore s;
  s.add_observation({ArchitectureId(0), DatasetId(0), 0.9});
  EXPECT_THROW(s.add_observation({ArchitectureId(0), DatasetId(0), 0.8}), StoreError);
  EXPECT_THROW(s.add_observation({ArchitectureId(1), DatasetId(0), 1.2}), StoreError);
  EXPECT_THROW(s.add_observation({ArchitectureId(1), DatasetId(0), -0.1}), StoreError);
  EXPECT_THROW(s.add_curve(curve(0, 0, {0.5, 0.8})), StoreError);  // last epoch contradicts 0.9
  s.add_curve(curve(0, 0, {0.5, 0.9}));
  EXPECT_THROW(s.add_curve(curve(1, 0, {0.5, 0.6, 0.7})), StoreError);
  EXPECT_THROW(s.add_curve(curve(1, 0, {})), StoreError);
  EXPECT_EQ(s.n_archs(), 1u);
  EXPECT_EQ(s.horizon(), 2u);
}

TEST(Store, CompletedRunAddsObservation) {
  MetaknowledgeStore s;
  s.add_completed_run(curve(2, 1, {0.3, 0.7}));
  ASSERT_TRUE(s.accuracy(ArchitectureId(2), DatasetId(1)));
  EXPECT_EQ(*s.accuracy(ArchitectureId(2), DatasetId(1)), 0.7);
  EXPECT_EQ(s.n_archs(), 3u);
  EXPECT_EQ(s.n_datasets(), 2u);
  EXPECT_EQ(s.rows_for_dataset(DatasetId(1)), 2u);  // the curve and its final accuracy
  EXPECT_EQ(s.rows_for_dataset(DatasetId(0)), 0u);
}

TEST(LoadStore, TwoRows) {
  test_util::TempDir dir;
  write_text_file(dir / "observations.csv", "dataset_id,arch_id,accuracy\n0,0,0.91\n0,1,0.88\n");
  const auto s = load_store(dir / "observations.csv");
  EXPECT_EQ(s.n_archs(), 2u);
  EXPECT_EQ(s.n_datasets(), 1u);
  EXPECT_EQ(s.observations().size(), 2u);
}

TEST(LoadStore, EmptyFileIsValid) {
  test_util::TempDir dir;
  write_text_file(dir / "observations.csv", "dataset_id,arch_id,accuracy\n");
  const auto s = load_store(dir / "observations.csv");
  EXPECT_TRUE(s.observations().empty());
  EXPECT_TRUE(s.empty());
}

TEST(LoadStore, NonUniformHorizon) {
  test_util::TempDir dir;
  std::string curves = "dataset_id,arch_id,epoch,accuracy\n";
  for (int e = 1; e <= 70; ++e) curves += "0,0," + std::to_string(e) + ",0.5\n";
  for (int e = 1; e <= 69; ++e) curves += "0,1," + std::to_string(e) + ",0.5\n";
  write_text_file(dir / "curves.csv", curves);
  write_text_file(dir / "observations.csv", "dataset_id,arch_id,accuracy\n");
  try {
    load_store(dir / "observations.csv", dir / "curves.csv");
    FAIL() << "expected a non-uniform horizon error";
  } catch (const StoreError& e) {
    EXPECT_NE(std::string(e.what()).find("non-uniform horizon"), std::string::npos) << e.what();
  }
}

TEST(LoadStore, MalformedRowReportsRowNumber) {
  test_util::TempDir dir;
  write_text_file(dir / "observations.csv", "dataset_id,arch_id,accuracy\n0,0,0.9\n0,x,0.8\n");
  try {
    load_store(dir / "observations.csv");
    FAIL();
  } catch (const StoreError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();  // file line, header is row 1
  }
}

TEST(LoadStore, Errors) {
  test_util::TempDir dir;
  write_text_file(dir / "bad_header.csv", "arch,dataset,acc\n");
  EXPECT_THROW(load_store(dir / "bad_header.csv"), StoreError);
  write_text_file(dir / "range.csv", "dataset_id,arch_id,accuracy\n0,0,1.5\n");
  EXPECT_THROW(load_store(dir / "range.csv"), StoreError);
  write_text_file(dir / "fields.csv", "dataset_id,arch_id,accuracy\n0,0\n");
  EXPECT_THROW(load_store(dir / "fields.csv"), StoreError);
  write_text_file(dir / "obs.csv", "dataset_id,arch_id,accuracy\n");
  write_text_file(dir / "dup.csv", "dataset_id,arch_id,epoch,accuracy\n0,0,1,0.5\n0,0,1,0.6\n");
  EXPECT_THROW(load_store(dir / "obs.csv", dir / "dup.csv"), StoreError);
  write_text_file(dir / "curves.csv", "dataset_id,arch_id,epoch,accuracy\n0,0,1,0.5\n0,0,2,0.6\n");
  write_text_file(dir / "contradict.csv", "dataset_id,arch_id,accuracy\n0,0,0.7\n");
  EXPECT_THROW(load_store(dir / "contradict.csv", dir / "curves.csv"), StoreError);
  EXPECT_THROW(load_store(dir / "missing.csv"), std::runtime_error);
}

TEST(LoadStore, CanonicalRoundTripIsByteIdentical) {
  test_util::TempDir dir;
  SyntheticConfig cfg;
  cfg.n_archs = 7;
  cfg.n_datasets = 3;
  cfg.horizon = 9;
  cfg.seed = 4;
  save_store_dir(generate_synthetic(cfg).first, dir / "a");
  save_store_dir(load_store_dir(dir / "a"), dir / "b");
  for (const char* f : {"observations.csv", "curves.csv"}) {
    EXPECT_EQ(read_text_file(dir / "a" / f), read_text_file(dir / "b" / f)) << f;
  }
}

TEST(Holdout, TwoDatasets) {
  MetaknowledgeStore s;
  s.add_observation({ArchitectureId(0), DatasetId(0), 0.9});
  s.add_observation({ArchitectureId(1), DatasetId(0), 0.8});
  s.add_observation({ArchitectureId(0), DatasetId(1), 0.7});
  const auto [train, held] = holdout_dataset(s, DatasetId(1));
  EXPECT_EQ(train.observations().size(), 2u);
  for (const auto& o : train.observations()) EXPECT_EQ(o.dataset, DatasetId(0));
  ASSERT_EQ(held.observations().size(), 1u);
  EXPECT_EQ(held.observations()[0].dataset, DatasetId(1));
  EXPECT_EQ(train.n_datasets(), 2u);
}

TEST(Holdout, EmptyDatasetAndUnknownId) {
  MetaknowledgeStore s(3, 3);
  s.add_observation({ArchitectureId(0), DatasetId(0), 0.9});
  const auto [train, held] = holdout_dataset(s, DatasetId(2));
  EXPECT_EQ(obs_rows(train), obs_rows(s));
  EXPECT_TRUE(held.empty());
  EXPECT_THROW(holdout_dataset(s, DatasetId(3)), StoreError);
}

TEST(Holdout, PartitionProperty) {
  SyntheticConfig cfg;
  cfg.n_archs = 8;
  cfg.n_datasets = 5;
  cfg.horizon = 6;
  const auto store = generate_synthetic(cfg).first;
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> union_obs;
  for (std::uint32_t d = 0; d < 5; ++d) {
    const auto [train, held] = holdout_dataset(store, DatasetId(d));
    auto both = obs_rows(train);
    const auto h = obs_rows(held);
    both.insert(both.end(), h.begin(), h.end());
    std::sort(both.begin(), both.end());
    EXPECT_EQ(both, obs_rows(store));  // disjoint and complete
    auto curves = curve_rows(train);
    const auto hc = curve_rows(held);
    curves.insert(curves.end(), hc.begin(), hc.end());
    std::sort(curves.begin(), curves.end());
    EXPECT_EQ(curves, curve_rows(store));
    union_obs.insert(union_obs.end(), h.begin(), h.end());
  }
  std::sort(union_obs.begin(), union_obs.end());
  EXPECT_EQ(union_obs, obs_rows(store));
}

TEST(Synthetic, NoiseFreeBiasOnlyIsClippedAffine) {
  SyntheticConfig cfg;
  cfg.n_archs = 10;
  cfg.n_datasets = 4;
  cfg.latent_dim = 0;
  cfg.noise_scale = 0.0;
  cfg.seed = 12;
  const auto [store, truth] = generate_synthetic(cfg);
  for (const auto& o : store.observations()) {
    const double expected =
        std::clamp(truth.global_bias + truth.arch_bias[o.arch.value] + truth.dataset_bias[o.dataset.value], 0.0, 1.0);
    EXPECT_EQ(o.accuracy, expected);
  }
}

TEST(Synthetic, NoiseFreeWithLatentIsClippedAffineScore) {
  SyntheticConfig cfg;
  cfg.latent_dim = 3;
  cfg.noise_scale = 0.0;
  const auto [store, truth] = generate_synthetic(cfg);
  for (const auto& o : store.observations()) {
    EXPECT_EQ(o.accuracy, std::clamp(truth.affine_score(o.arch, o.dataset), 0.0, 1.0));
  }
}

TEST(Synthetic, Deterministic) {
  SyntheticConfig cfg;
  cfg.seed = 77;
  const auto a = generate_synthetic(cfg).first;
  const auto b = generate_synthetic(cfg).first;
  EXPECT_EQ(observations_csv(a), observations_csv(b));
  EXPECT_EQ(curves_csv(a), curves_csv(b));
  cfg.seed = 78;
  EXPECT_NE(observations_csv(a), observations_csv(generate_synthetic(cfg).first));
}

TEST(Synthetic, FastRateCurveReachesFinal) {
  // The saturating shape evaluated at every epoch for k = 1000.
  const double a = 0.83;
  for (std::size_t t = 1; t <= 50; ++t) {
    EXPECT_NEAR(saturating_curve(a, 1e3, t, 50), a, 1e-6) << t;
  }
  EXPECT_EQ(saturating_curve(a, 4.0, 50, 50), a);
}

TEST(Synthetic, CurvesEndAtObservedAccuracyAndStayInRange) {
  SyntheticConfig cfg;
  cfg.noise_scale = 0.2;
  const auto store = generate_synthetic(cfg).first;
  for (const auto& c : store.curves()) {
    EXPECT_EQ(c.final_value(), *store.accuracy(c.arch, c.dataset));
    for (double v : c.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, ConfigFromJson) {
  const auto cfg = synthetic_config_from_json(nlohmann::json::parse(
      R"({"n_archs": 5, "n_datasets": 2, "latent_dim": 1, "horizon": 7, "noise_scale": 0.5, "seed": 9})"));
  EXPECT_EQ(cfg.n_archs, 5u);
  EXPECT_EQ(cfg.horizon, 7u);
  EXPECT_EQ(cfg.noise_scale, 0.5);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_THROW(synthetic_config_from_json(nlohmann::json::parse(R"({"archs": 5})")), std::invalid_argument);
}
