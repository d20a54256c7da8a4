#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles/brute_force.hpp"
#include "sflopt/bound.hpp"
#include "test_support.hpp"

using namespace sflopt;
using testing_support::flat_stats;
using testing_support::uniform_clients;

namespace {

SystemConfig unit_system(int n) {
  SystemConfig sys;
  sys.num_clients = n;
  sys.sampled_per_round = 1;
  sys.aggregation_interval = 1;
  sys.learning_rate = 1.0;
  sys.rounds = 10;
  return sys;
}

SamplingPlan plan_for(std::vector<double> q, int max_cut) {
  SamplingPlan p;
  p.cut_layers.assign(q.size(), max_cut);
  p.q = std::move(q);
  p.max_cut = max_cut;
  p.aux_M = 1e9;
  return p;
}

}  // namespace

TEST(CoefficientCTilde, ZeroLearningRateLeavesNegativeMoment) {
  auto sys = unit_system(2);
  sys.learning_rate = 0.0;
  ModelStatistics st;
  st.sigma_sq = {1.0, 2.0, 3.0};
  st.g_sq = {0.5, 0.25, 2.0};
  st.beta = 7.0;
  for (const auto& c : uniform_clients(2, 0.3)) {
    EXPECT_DOUBLE_EQ(coefficient_c_tilde(c, st, 2, 3.0, sys), -2.75);
  }
}

TEST(CoefficientCTilde, HandEvaluation) {
  auto c = uniform_clients(1, 0.0)[0];
  c.weight = 1.0;
  const auto st = flat_stats(2, 1.0, 1.0, 1.0, 0.0);
  const auto sys = unit_system(1);
  // 1*(4) + 2*(1+1)*2 - 2
  EXPECT_DOUBLE_EQ(coefficient_c_tilde(c, st, 2, 1.0, sys), 10.0);
  c.upload_failure = 0.5;
  // 8 + 2*(1+2)*2 - 2
  EXPECT_DOUBLE_EQ(coefficient_c_tilde(c, st, 2, 1.0, sys), 18.0);
}

TEST(ConvergenceBound, MatchesIndependentRestatement) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 50; ++k) {
    const int N = 1 + k % 4, L = 1 + k % 5;
    auto in = testing_support::random_instance(rng, N, L);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> q(N);
    double s = 0;
    for (double& x : q) s += (x = u(rng));
    for (double& x : q) x /= s;
    const int cut = 1 + k % L;
    const auto b = convergence_upper_bound(plan_for(q, cut), in.clients, in.stats, in.sys);
    const double oracle = oracle::theorem_bound(q, cut, in.clients, in.stats, in.sys);
    EXPECT_NEAR(b.total, oracle, 1e-9 * std::max(1.0, std::abs(oracle)));
    EXPECT_NEAR(b.total, b.term_init + b.term_negative + b.term_variance + b.term_drift,
                1e-9 * std::max(1.0, std::abs(b.total)));
  }
}

TEST(ConvergenceBound, UsesExactMaxNotAuxiliaryVariable) {
  const auto clients = uniform_clients(2, 0.1);
  const auto st = flat_stats(2, 1, 1, 2, 1);
  const auto sys = unit_system(2);
  auto p = plan_for({0.3, 0.7}, 2);
  p.aux_M = 1.0;
  const double a = convergence_upper_bound(p, clients, st, sys).total;
  p.aux_M = 50.0;
  EXPECT_EQ(a, convergence_upper_bound(p, clients, st, sys).total);
}

TEST(ConvergenceBound, InitialTermVanishesWithRounds) {
  const auto clients = uniform_clients(2, 0.1);
  const auto st = flat_stats(2, 1, 1, 1, 3);
  auto sys = unit_system(2);
  double prev = INFINITY;
  for (int R : {1, 10, 100, 10000, 1000000}) {
    sys.rounds = R;
    const double t = convergence_upper_bound(plan_for({0.5, 0.5}, 1), clients, st, sys).term_init;
    EXPECT_LT(t, prev);
    prev = t;
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(ConvergenceBound, HigherUploadFailureRaisesBound) {
  auto clients = uniform_clients(2, 0.1);
  const auto st = flat_stats(3, 1, 1, 1, 1);
  auto sys = unit_system(2);
  sys.learning_rate = 0.1;
  const auto p = plan_for({0.4, 0.6}, 2);
  clients[0].upload_failure = 0.2;
  const double low = convergence_upper_bound(p, clients, st, sys).total;
  clients[0].upload_failure = 0.4;
  EXPECT_GT(convergence_upper_bound(p, clients, st, sys).total, low);
}

TEST(ConvergenceBound, DriftScalesWithIntervalSquared) {
  const auto clients = uniform_clients(3, 0.2);
  const auto st = flat_stats(4, 1, 0.5, 1.5, 1);
  auto sys = unit_system(3);
  sys.learning_rate = 0.05;
  const auto p = plan_for({0.2, 0.3, 0.5}, 3);
  const double d1 = convergence_upper_bound(p, clients, st, sys).term_drift;
  sys.aggregation_interval = 4;
  EXPECT_NEAR(convergence_upper_bound(p, clients, st, sys).term_drift, 16.0 * d1, 1e-12 * d1);
}

TEST(BoundProperties, MonotoneInFailuresAndInterval) {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 10; ++inst) {
    auto in = testing_support::random_instance(rng, 3, 4);
    const std::vector<double> q = {0.2, 0.3, 0.5};
    const auto p = plan_for(q, 3);
    for (int i = 0; i < 3; ++i) {
      for (int kind = 0; kind < 3; ++kind) {
        auto c = in.clients;
        double prev = -INFINITY;
        for (int k = 0; k < 10; ++k) {
          const double v = 0.09 * k;
          (kind == 0 ? c[i].upload_failure : kind == 1 ? c[i].download_failure
                                                       : c[i].aggregation_failure) = v;
          const double b = convergence_upper_bound(p, c, in.stats, in.sys).total;
          EXPECT_GE(b, prev);
          prev = b;
        }
      }
    }
    double prev = -INFINITY;
    for (int I = 1; I <= 10; ++I) {
      in.sys.aggregation_interval = I;
      const double b = convergence_upper_bound(p, in.clients, in.stats, in.sys).total;
      EXPECT_GE(b, prev);
      prev = b;
    }
  }
}

// With a client's three probabilities starting equal, raising p by delta
// raises the bound at least as much as raising phi or a by the same delta.
TEST(BoundProperties, UploadIncrementDominates) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (int inst = 0; inst < 20; ++inst) {
    auto in = testing_support::random_instance(rng, 3, 4);
    for (auto& c : in.clients) c.upload_failure = c.download_failure = c.aggregation_failure = u(rng);
    const auto p = plan_for({0.25, 0.25, 0.5}, 1 + inst % 4);
    const double base = convergence_upper_bound(p, in.clients, in.stats, in.sys).total;
    for (int i = 0; i < 3; ++i) {
      for (double delta : {0.01, 0.1, 0.3}) {
        auto up = in.clients, down = in.clients, agg = in.clients;
        up[i].upload_failure += delta;
        down[i].download_failure += delta;
        agg[i].aggregation_failure += delta;
        const double du = convergence_upper_bound(p, up, in.stats, in.sys).total - base;
        const double dd = convergence_upper_bound(p, down, in.stats, in.sys).total - base;
        const double da = convergence_upper_bound(p, agg, in.stats, in.sys).total - base;
        EXPECT_GE(du, dd - 1e-12 * std::abs(base));
        EXPECT_GE(du, da - 1e-12 * std::abs(base));
      }
    }
  }
}

TEST(BoundProperties, ShallowerMaxCutNeverRaisesDrift) {
  std::mt19937_64 rng(3);
  for (int inst = 0; inst < 10; ++inst) {
    const auto in = testing_support::random_instance(rng, 3, 5);
    double prev = INFINITY;
    for (int cut = 5; cut >= 1; --cut) {
      const double d =
          convergence_upper_bound(plan_for({0.3, 0.3, 0.4}, cut), in.clients, in.stats, in.sys)
              .term_drift;
      EXPECT_LE(d, prev);
      prev = d;
    }
  }
}

TEST(RoundsToAccuracy, ZeroGapNeedsOneRound) {
  const auto clients = uniform_clients(2, 0.1);
  const auto st = flat_stats(2, 1, 1, 1, 0);
  auto sys = unit_system(2);
  sys.learning_rate = 0.1;
  EXPECT_EQ(rounds_to_accuracy(0.5, plan_for({0.5, 0.5}, 1), clients, st, sys), 1);
}

TEST(RoundsToAccuracy, InfeasibleWhenAccuracyUnreachable) {
  const auto clients = uniform_clients(2, 0.1);
  const auto st = flat_stats(2, 10, 1, 5, 1);  // variance dominates: Gamma < 0
  auto sys = unit_system(2);
  sys.learning_rate = 0.5;
  EXPECT_FALSE(rounds_to_accuracy(0.01, plan_for({0.5, 0.5}, 2), clients, st, sys).has_value());
}

TEST(RoundsToAccuracy, TwoClientHandValue) {
  // m = q = (1/2, 1/2), no failures, one layer with sigma^2 = G^2 = 1,
  // beta = 1, gamma = 0.1, I = 1, N = 2, gap 1. M* = 1/2 and
  // C~ = 0.1*2 + 2*0.01*(2*0.5 + 1) - 1 = -0.76, so Gamma = 0.76 and
  // R = ceil(2 / (0.1 * (0.5 + 0.76))) = ceil(15.87...) = 16.
  const auto clients = uniform_clients(2, 0.0);
  const auto st = flat_stats(1, 1, 1, 1, 1);
  auto sys = unit_system(2);
  sys.learning_rate = 0.1;
  EXPECT_EQ(rounds_to_accuracy(0.5, plan_for({0.5, 0.5}, 1), clients, st, sys), 16);
}

TEST(DiscrepancyBound, ZeroLearningRate) {
  const auto clients = uniform_clients(2, 0.3);
  auto sys = unit_system(2);
  sys.learning_rate = 0.0;
  EXPECT_EQ(discrepancy_bound(clients[0], plan_for({0.5, 0.5}, 2), clients,
                              flat_stats(2, 1, 1, 1, 1), sys),
            0.0);
}

TEST(DiscrepancyBound, QuadruplesWhenIntervalDoubles) {
  const auto clients = uniform_clients(2, 0.3);
  const auto st = flat_stats(3, 1, 0.7, 1, 1);
  auto sys = unit_system(2);
  sys.learning_rate = 0.1;
  sys.aggregation_interval = 3;
  const auto p = plan_for({0.4, 0.6}, 2);
  const double a = discrepancy_bound(clients[1], p, clients, st, sys);
  sys.aggregation_interval = 6;
  EXPECT_NEAR(discrepancy_bound(clients[1], p, clients, st, sys), 4.0 * a, 1e-12 * a);
}

TEST(DiscrepancyBound, HandValue) {
  auto clients = uniform_clients(1, 0.0);
  clients[0].weight = 1.0;
  auto sys = unit_system(1);
  sys.learning_rate = 0.1;
  sys.aggregation_interval = 2;
  // 2 * 0.01 * 4 * (1 + 1) * 3
  EXPECT_NEAR(discrepancy_bound(clients[0], plan_for({1.0}, 3), clients,
                                flat_stats(4, 0, 1, 1, 0), sys),
              0.48, 1e-15);
}
