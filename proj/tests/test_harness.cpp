#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sflopt/harness.hpp"

using namespace sflopt;

namespace {

// Three clients, a 3-layer model and fixed statistics: no calibration.
const char* kSmallConfig = R"(
population.clients = 3
population.failure = 0.2, 0.6
system.sampled_per_round = 2
system.rounds = 5
system.batch_size = 8
model.input_dim = 4
model.classes = 3
model.hidden = 6, 5
stats.sigma_sq = 0.5, 0.4, 0.3
stats.g_sq = 0.2, 0.2, 0.1
stats.beta = 4
stats.loss_gap = 1.1
)";

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

ExperimentConfig small_config() { return parse(kSmallConfig); }

}  // namespace

TEST(ParseConfig, ReadsKeys) {
  const auto cfg = parse(std::string(kSmallConfig) +
                         "policy.name = OMS+OCS  # trailing comment\nsystem.seed = 12\n");
  EXPECT_EQ(cfg.population.clients, 3);
  EXPECT_EQ(cfg.system.num_clients, 3);
  EXPECT_EQ(cfg.population.upload.lo, 0.2);
  EXPECT_EQ(cfg.population.aggregation.hi, 0.6);
  EXPECT_EQ(cfg.model.hidden, (std::vector<int>{6, 5}));
  EXPECT_EQ(cfg.policy, Policy::kOmsOcs);
  EXPECT_EQ(cfg.seed, 12u);
  ASSERT_TRUE(cfg.stats.has_value());
  EXPECT_EQ(cfg.stats->beta, 4.0);
}

TEST(ParseConfig, Errors) {
  EXPECT_THROW(parse("population.colour = 3\n"), ValidationError);
  EXPECT_THROW(parse("population.clients 3\n"), ValidationError);
  EXPECT_THROW(parse("population.clients = three\n"), ValidationError);
  EXPECT_THROW(parse("stats.beta = 2\n"), ValidationError);
  EXPECT_THROW(parse("policy.name = best\n"), ValidationError);
}

TEST(ValidateConfig, CrossFieldChecks) {
  auto cfg = small_config();
  EXPECT_NO_THROW(validate_config(cfg));
  cfg.fixed_cut = 7;
  EXPECT_THROW(validate_config(cfg), ValidationError);
  cfg = small_config();
  cfg.stats->g_sq.pop_back();
  EXPECT_THROW(validate_config(cfg), ValidationError);
  cfg = small_config();
  cfg.population.upload = {0.5, 1.0};
  EXPECT_THROW(validate_config(cfg), ValidationError);
}

TEST(ParsePolicy, Aliases) {
  EXPECT_EQ(parse_policy("weighted-by-data"), Policy::kWeighted);
  EXPECT_EQ(parse_policy("FMS+OCS"), Policy::kFmsOcs);
  for (const auto& [p, tag] : policy_tags()) EXPECT_EQ(parse_policy(tag), p);
}

TEST(WriteStatistics, RoundTripsThroughConfig) {
  ModelStatistics st;
  st.sigma_sq = {0.1, 1.0 / 3.0, 2e-7};
  st.g_sq = {0.7, 1e5, std::sqrt(2.0)};
  st.beta = 3.14159;
  st.loss_gap = 0.9;
  std::ostringstream os;
  write_statistics(os, st, std::nullopt);
  const auto cfg = parse(os.str());
  ASSERT_TRUE(cfg.stats.has_value());
  EXPECT_EQ(cfg.stats->sigma_sq, st.sigma_sq);
  EXPECT_EQ(cfg.stats->g_sq, st.g_sq);
  EXPECT_EQ(cfg.stats->beta, st.beta);
  EXPECT_EQ(cfg.stats->loss_gap, st.loss_gap);
}

TEST(GeneratePopulation, DegenerateRange) {
  PopulationSpec spec;
  spec.clients = 20;
  spec.upload = spec.download = spec.aggregation = {0.3, 0.3};
  for (const auto& c : generate_population(spec, 4).clients) {
    EXPECT_EQ(c.upload_failure, 0.3);
    EXPECT_EQ(c.download_failure, 0.3);
    EXPECT_EQ(c.aggregation_failure, 0.3);
  }
}

TEST(GeneratePopulation, MeanWithinThreeSigma) {
  PopulationSpec spec;
  spec.clients = 1000;
  const auto pop = generate_population(spec, 11);
  double mean = 0.0, total = 0.0;
  for (const auto& c : pop.clients) {
    mean += c.upload_failure / spec.clients;
    total += c.weight;
  }
  const double se = 0.4 / std::sqrt(12.0) / std::sqrt(1000.0);
  EXPECT_LE(std::abs(mean - 0.4), 3.0 * se);
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(GeneratePopulation, Deterministic) {
  PopulationSpec spec;
  const auto a = generate_population(spec, 5), b = generate_population(spec, 5);
  EXPECT_EQ(a.sizes, b.sizes);
  for (std::size_t i = 0; i < a.clients.size(); ++i) {
    EXPECT_EQ(a.clients[i].weight, b.clients[i].weight);
    EXPECT_EQ(a.clients[i].uplink_rate, b.clients[i].uplink_rate);
    EXPECT_EQ(a.clients[i].aggregation_failure, b.clients[i].aggregation_failure);
  }
}

TEST(LatencyProfileFor, HandValues) {
  const auto p = latency_profile_for({4, 6, 3}, 10, 4.0, 100.0);
  EXPECT_EQ(p.activation_size, (std::vector<double>{240.0, 120.0}));
  EXPECT_EQ(p.client_work_prefix, (std::vector<double>{1440.0, 2520.0}));
  EXPECT_EQ(p.total_work, 2520.0);
}

TEST(PerturbProbabilities, ClampedAndZeroNoiseIsIdentity) {
  PopulationSpec spec;
  const auto clients = generate_population(spec, 3).clients;
  const auto same = perturb_probabilities(clients, 0.0, 1);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    EXPECT_EQ(same[i].upload_failure, clients[i].upload_failure);
  }
  for (const auto& c : perturb_probabilities(clients, 5.0, 1)) {
    for (double p : {c.upload_failure, c.download_failure, c.aggregation_failure}) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 0.99);
    }
  }
}

TEST(SelectPlan, UniformAndWeighted) {
  const sflopt::Setup s = prepare(small_config());
  const auto u = select_plan(s, Policy::kUniform);
  for (double q : u.plan.q) EXPECT_EQ(q, 1.0 / 3);
  std::ostringstream os;
  write_plan(os, u);
  EXPECT_NE(os.str().find("1," + detail::real_text(1.0 / 3) + ","), std::string::npos);
  const auto w = select_plan(s, Policy::kWeighted);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(w.plan.q[i], s.population.clients[i].weight);
  EXPECT_EQ(w.plan.cut_layers, u.plan.cut_layers);
}

TEST(SelectPlan, OptimizedPolicyMatchesDirectCall) {
  const sflopt::Setup s = prepare(small_config());
  const auto p = select_plan(s, Policy::kOmsOcs);
  const auto direct =
      optimize(s.population.clients, s.population.stats, s.latency, s.population.sys);
  EXPECT_EQ(p.plan.q, direct.plan.q);
  EXPECT_EQ(p.plan.cut_layers, direct.plan.cut_layers);
  EXPECT_EQ(p.bound.total, direct.objective);
}

TEST(SelectPlan, FixedSplitKeepsConfiguredCut) {
  auto cfg = small_config();
  cfg.fixed_cut = 2;
  const auto p = select_plan(prepare(cfg), Policy::kFmsOcs);
  EXPECT_EQ(p.plan.cut_layers, std::vector<int>(3, 2));
}

TEST(SelectPlan, NoiseReachesOnlyTheOptimizer) {
  auto cfg = small_config();
  const sflopt::Setup clean = prepare(cfg);
  cfg.noise_cv = 0.5;
  const sflopt::Setup noisy = prepare(cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(clean.population.clients[i].upload_failure,
              noisy.population.clients[i].upload_failure);
  }
  EXPECT_NE(select_plan(clean, Policy::kOmsOcs).plan.q, select_plan(noisy, Policy::kOmsOcs).plan.q);
  // Baselines ignore the probabilities, so their runs are unchanged.
  std::ostringstream a, b;
  write_trace(a, simulate_policy(clean, Policy::kUniform, false).trace);
  write_trace(b, simulate_policy(noisy, Policy::kUniform, false).trace);
  EXPECT_EQ(a.str(), b.str());
}

TEST(RoundRobin, EveryPassCoversEveryClient) {
  const int N = 6, K = 2;
  auto select = round_robin_selector(N, K, 3);
  std::mt19937_64 unused(0);
  for (int pass = 0; pass < 4; ++pass) {
    std::multiset<int> seen;
    for (int w = 0; w < N / K; ++w) {
      for (int id : select(pass * (N / K) + w, unused)) seen.insert(id);
    }
    for (int id = 1; id <= N; ++id) EXPECT_EQ(seen.count(id), 1u);
  }
}

TEST(ComparePolicies, SingleAndDuplicatePolicies) {
  const auto cfg = small_config();
  const auto one = compare_policies(cfg, {Policy::kUniform}, 2);
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.rows[0].final_losses.size(), 2u);
  std::ostringstream os;
  write_comparison(os, one);
  const std::string table = os.str();
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);

  const auto two = compare_policies(cfg, {Policy::kOmsOcs, Policy::kOmsOcs}, 2);
  ASSERT_EQ(two.rows.size(), 2u);
  EXPECT_EQ(two.rows[0].final_losses, two.rows[1].final_losses);
  EXPECT_EQ(two.rows[0].bound, two.rows[1].bound);
}

TEST(RunVerb, WritesExpectedFiles) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sflopt_harness_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "cfg.txt");
    f << kSmallConfig;
  }
  CliOptions o;
  o.config = (dir / "cfg.txt").string();
  o.out = (dir / "out").string();
  o.seed = 3;
  const auto files = run_verb("simulate", o);
  ASSERT_EQ(files.size(), 3u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f));
  EXPECT_THROW(run_verb("train", o), ValidationError);
  fs::remove_all(dir);
}
