#include <gtest/gtest.h>

#include <random>

#include "sflopt/latency.hpp"
#include "test_support.hpp"

using namespace sflopt;

namespace {

LatencyProfile four_layer_profile() {
  LatencyProfile p;
  p.activation_size = {8.0, 4.0, 2.0, 1.0};
  p.client_work_prefix = {1.0, 3.0, 6.0, 10.0};
  p.total_work = 12.0;
  p.server_speed = 4.0;
  return p;
}

ClientProfile client(double up, double down, double speed) {
  ClientProfile c;
  c.weight = 1.0;
  c.uplink_rate = up;
  c.downlink_rate = down;
  c.compute_speed = speed;
  return c;
}

}  // namespace

TEST(PerClientLatency, ZeroPayloadAndEqualSpeedsIgnoreCut) {
  LatencyProfile p = four_layer_profile();
  p.activation_size.assign(4, 0.0);
  const ClientProfile c = client(1.0, 1.0, p.server_speed);
  for (int cut = 1; cut <= 4; ++cut) {
    EXPECT_DOUBLE_EQ(per_client_latency(c, p, cut), p.total_work / p.server_speed);
  }
}

TEST(PerClientLatency, DoublingRatesHalvesTransmission) {
  const LatencyProfile p = four_layer_profile();
  const ClientProfile a = client(2.0, 5.0, 1.0), b = client(4.0, 10.0, 1.0);
  const double compute = 6.0 / 1.0 + 6.0 / 4.0;
  EXPECT_NEAR(per_client_latency(a, p, 3) - compute,
              2.0 * (per_client_latency(b, p, 3) - compute), 1e-12);
}

TEST(PerClientLatency, HandSum) {
  // cut 2: 4/2 + 4/8 + 3/0.5 + (12-3)/4 = 2 + 0.5 + 6 + 2.25
  EXPECT_DOUBLE_EQ(per_client_latency(client(2.0, 8.0, 0.5), four_layer_profile(), 2), 10.75);
}

TEST(BestSplit, SlowClientWithShrinkingActivationsStaysShallow) {
  LatencyProfile p = four_layer_profile();
  p.activation_size = {0.1, 0.09, 0.08, 0.07};
  SystemConfig sys;
  sys.min_cut = 1;
  const ClientProfile slow = client(100.0, 100.0, 0.01);
  const SplitChoice s = best_split(slow, p, 4, sys);
  EXPECT_EQ(s.cut, 1);
  for (int cut = 1; cut <= 4; ++cut) EXPECT_LE(s.latency, per_client_latency(slow, p, cut));
}

TEST(BestSplit, SingleCandidate) {
  SystemConfig sys;
  sys.min_cut = 3;
  EXPECT_EQ(best_split(client(1, 1, 1), four_layer_profile(), 3, sys).cut, 3);
}

TEST(BestSplit, TiesGoToSmallerCut) {
  LatencyProfile p = four_layer_profile();
  p.activation_size.assign(4, 1.0);
  SystemConfig sys;
  sys.min_cut = 1;
  const ClientProfile c = client(1.0, 1.0, p.server_speed);
  EXPECT_EQ(best_split(c, p, 4, sys).cut, 1);
}

TEST(BestSplit, InvariantToConstantShift) {
  std::mt19937_64 rng(2);
  SystemConfig sys;
  sys.min_cut = 1;
  for (int k = 0; k < 20; ++k) {
    auto in = testing_support::random_instance(rng, 2, 5);
    const SplitChoice a = best_split(in.clients[0], in.prof, 5, sys);
    // Extra server-only work adds the same amount to every cut.
    in.prof.total_work += 3.0;
    const SplitChoice b = best_split(in.clients[0], in.prof, 5, sys);
    EXPECT_EQ(a.cut, b.cut);
    EXPECT_NEAR(b.latency - a.latency, 3.0 / in.prof.server_speed, 1e-12);
  }
}

TEST(ExpectedRoundLatency, IdenticalClientsUniform) {
  const LatencyProfile p = four_layer_profile();
  std::vector<ClientProfile> cs(3, client(2, 2, 1));
  SystemConfig sys;
  sys.sampled_per_round = 1;
  const SamplingPlan plan{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {2, 2, 2}, 2, 1.0};
  EXPECT_NEAR(expected_round_latency(plan, cs, p, sys), per_client_latency(cs[0], p, 2), 1e-12);
}

TEST(ExpectedRoundLatency, ConcentratedPlan) {
  const LatencyProfile p = four_layer_profile();
  std::vector<ClientProfile> cs = {client(1, 1, 1), client(3, 3, 2)};
  SystemConfig sys;
  sys.sampled_per_round = 5;
  const SamplingPlan plan{{1.0, 0.0}, {4, 1}, 4, 1.0};
  EXPECT_DOUBLE_EQ(expected_round_latency(plan, cs, p, sys), 5.0 * per_client_latency(cs[0], p, 4));
}

TEST(ExpectedRoundLatency, MixedHandSum) {
  const LatencyProfile p = four_layer_profile();
  std::vector<ClientProfile> cs = {client(2, 8, 0.5), client(1, 1, 1), client(4, 4, 2)};
  SystemConfig sys;
  sys.sampled_per_round = 2;
  const SamplingPlan plan{{0.5, 0.25, 0.25}, {2, 1, 4}, 4, 1.0};
  // A = 10.75; 8+8+1+11/4 = 19.75; 0.25+0.25+5+0.5 = 6
  EXPECT_DOUBLE_EQ(expected_round_latency(plan, cs, p, sys),
                   2.0 * (0.5 * 10.75 + 0.25 * 19.75 + 0.25 * 6.0));
}

TEST(ExpectedRoundLatency, LinearInQAndK) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 10; ++k) {
    auto in = testing_support::random_instance(rng, 3, 4);
    SamplingPlan a{{0.2, 0.3, 0.5}, {1, 2, 3}, 3, 1.0};
    SamplingPlan b{{0.6, 0.3, 0.1}, {1, 2, 3}, 3, 1.0};
    SamplingPlan mix = a;
    for (int i = 0; i < 3; ++i) mix.q[i] = 0.3 * a.q[i] + 0.7 * b.q[i];
    const double la = expected_round_latency(a, in.clients, in.prof, in.sys);
    const double lb = expected_round_latency(b, in.clients, in.prof, in.sys);
    EXPECT_NEAR(expected_round_latency(mix, in.clients, in.prof, in.sys), 0.3 * la + 0.7 * lb,
                1e-12 * la);
    auto sys = in.sys;
    sys.sampled_per_round *= 3;
    EXPECT_NEAR(expected_round_latency(a, in.clients, in.prof, sys), 3.0 * la, 1e-12 * la);
  }
}

TEST(LatencyProfileValidation, RejectsDecreasingWork) {
  LatencyProfile p = four_layer_profile();
  p.client_work_prefix[2] = 0.5;
  EXPECT_THROW(validate_latency_profile(p), ValidationError);
  EXPECT_NO_THROW(validate_latency_profile(four_layer_profile()));
}
