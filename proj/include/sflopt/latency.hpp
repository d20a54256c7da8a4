#pragma once

#include <vector>

#include "sflopt/core_types.hpp"

namespace sflopt {

/// Per-cut payload and work figures. Vectors are indexed by the 1-based cut
/// layer j at position j-1.
struct LatencyProfile {
  std::vector<double> activation_size;     // data units crossing cut j
  std::vector<double> client_work_prefix;  // forward+backward work of 1..j
  double total_work = 1.0;
  double server_speed = 1.0;

  int num_layers() const { return static_cast<int>(activation_size.size()); }
};

inline void validate_latency_profile(const LatencyProfile& prof) {
  using detail::fail;
  if (prof.activation_size.empty() ||
      prof.activation_size.size() != prof.client_work_prefix.size()) {
    fail("latency profile: size and work vectors must be non-empty and equal");
  }
  double prev = 0.0;
  for (std::size_t j = 0; j < prof.activation_size.size(); ++j) {
    if (!(prof.activation_size[j] >= 0.0)) {
      fail("latency profile: negative activation size at layer ", j + 1);
    }
    if (!(prof.client_work_prefix[j] >= prev)) {
      fail("latency profile: client work must be non-decreasing (layer ", j + 1,
           ")");
    }
    prev = prof.client_work_prefix[j];
  }
  if (!(prof.total_work > 0.0) || prev > prof.total_work) {
    fail("latency profile: total work must be positive and cover the prefix");
  }
  if (!(prof.server_speed > 0.0)) fail("latency profile: server speed <= 0");
}

/// A_i(cut): activation upload + gradient download + client compute +
/// server compute.
inline double per_client_latency(const ClientProfile& client,
                                 const LatencyProfile& prof, int cut) {
  const double size = prof.activation_size[cut - 1];
  const double client_work = prof.client_work_prefix[cut - 1];
  return size / client.uplink_rate + size / client.downlink_rate +
         client_work / client.compute_speed +
         (prof.total_work - client_work) / prof.server_speed;
}

struct SplitChoice {
  int cut = 1;
  double latency = 0.0;
};

/// Latency-minimizing cut in [sys.min_cut, cap]; ties go to the shallower cut.
inline SplitChoice best_split(const ClientProfile& client,
                              const LatencyProfile& prof, int cap,
                              const SystemConfig& sys) {
  SplitChoice best{sys.min_cut, per_client_latency(client, prof, sys.min_cut)};
  for (int cut = sys.min_cut + 1; cut <= cap; ++cut) {
    const double a = per_client_latency(client, prof, cut);
    if (a < best.latency) best = {cut, a};
  }
  return best;
}

/// K * sum_i q_i A_i(cut_i).
inline double expected_round_latency(const SamplingPlan& plan,
                                     const std::vector<ClientProfile>& clients,
                                     const LatencyProfile& prof,
                                     const SystemConfig& sys) {
  double s = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    s += plan.q[i] * per_client_latency(clients[i], prof, plan.cut_layers[i]);
  }
  return sys.sampled_per_round * s;
}

}  // namespace sflopt
