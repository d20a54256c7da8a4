#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <string>
#include <vector>

namespace sflopt {

// Absolute tolerance for the weight and sampling-distribution sums.
inline constexpr double kSumTolerance = 1e-9;

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One client of the split federated population.
///
/// Probabilities are failure probabilities of the three exchanges a client
/// takes part in: activation upload to the edge server (`upload_failure`),
/// gradient download from the edge server (`download_failure`) and client
/// model upload to the Fed server (`aggregation_failure`).
struct ClientProfile {
  int id = 1;  // 1-based
  double weight = 0.0;
  double upload_failure = 0.0;
  double download_failure = 0.0;
  double aggregation_failure = 0.0;
  double uplink_rate = 1.0;
  double downlink_rate = 1.0;
  double fed_uplink_rate = 1.0;
  double compute_speed = 1.0;

  /// (1-a)(1-p)(1-phi): probability that all three exchanges succeed.
  double success_probability() const {
    return (1.0 - aggregation_failure) * (1.0 - upload_failure) *
           (1.0 - download_failure);
  }
};

/// Per-layer gradient statistics and smoothness of the trained model.
struct ModelStatistics {
  std::vector<double> sigma_sq;  // per-layer variance bounds
  std::vector<double> g_sq;      // per-layer second-moment bounds
  double beta = 1.0;
  double loss_gap = 0.0;

  int num_layers() const { return static_cast<int>(g_sq.size()); }

  // Sums over 1-based layer ranges [first, last]; empty when first > last.
  double g_sq_sum(int first, int last) const {
    double s = 0.0;
    for (int j = first; j <= last; ++j) s += g_sq[j - 1];
    return s;
  }
  double variance_plus_moment_sum(int first, int last) const {
    double s = 0.0;
    for (int j = first; j <= last; ++j) s += sigma_sq[j - 1] + g_sq[j - 1];
    return s;
  }
};

struct SystemConfig {
  int num_clients = 1;            // N
  int sampled_per_round = 1;      // K
  int aggregation_interval = 1;   // I
  double learning_rate = 0.01;    // gamma
  int rounds = 1;                 // R
  double latency_budget = 1.0;    // T, seconds
  int min_cut = 1;                // L_c_min
};

/// Sampling distribution plus per-client cut layers.
struct SamplingPlan {
  std::vector<double> q;
  std::vector<int> cut_layers;
  int max_cut = 1;
  double aux_M = 1.0;
};

struct Population {
  std::vector<ClientProfile> clients;
  ModelStatistics stats;
  SystemConfig sys;
};

namespace detail {

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << args);
  throw ValidationError(oss.str());
}

inline bool is_probability_below_one(double v) {
  return std::isfinite(v) && v >= 0.0 && v < 1.0;
}

}  // namespace detail

inline void validate_client(const ClientProfile& c) {
  using detail::fail;
  if (!detail::is_probability_below_one(c.upload_failure) ||
      !detail::is_probability_below_one(c.download_failure) ||
      !detail::is_probability_below_one(c.aggregation_failure)) {
    fail("client ", c.id, ": failure probability must be < 1 and >= 0");
  }
  if (!(std::isfinite(c.weight) && c.weight > 0.0)) {
    fail("client ", c.id, ": weight must be positive");
  }
  if (!(c.uplink_rate > 0.0 && c.downlink_rate > 0.0 &&
        c.fed_uplink_rate > 0.0 && c.compute_speed > 0.0)) {
    fail("client ", c.id, ": rates and compute speed must be positive");
  }
}

inline void validate_statistics(const ModelStatistics& s) {
  using detail::fail;
  if (s.g_sq.empty()) fail("model statistics: need at least one layer");
  if (s.sigma_sq.size() != s.g_sq.size()) {
    fail("model statistics: sigma_sq has ", s.sigma_sq.size(),
         " entries, g_sq has ", s.g_sq.size());
  }
  for (std::size_t j = 0; j < s.g_sq.size(); ++j) {
    if (!(std::isfinite(s.sigma_sq[j]) && s.sigma_sq[j] >= 0.0 &&
          std::isfinite(s.g_sq[j]) && s.g_sq[j] >= 0.0)) {
      fail("model statistics: layer ", j + 1,
           " has a negative or non-finite entry");
    }
  }
  if (!(std::isfinite(s.beta) && s.beta > 0.0)) {
    fail("model statistics: beta must be positive");
  }
  if (!(std::isfinite(s.loss_gap) && s.loss_gap >= 0.0)) {
    fail("model statistics: loss gap must be non-negative");
  }
}

inline void validate_system(const SystemConfig& sys, int num_layers) {
  using detail::fail;
  if (sys.num_clients < 1) fail("system: N must be >= 1");
  if (sys.sampled_per_round < 1 || sys.sampled_per_round > sys.num_clients) {
    fail("system: K must lie in [1, N]");
  }
  if (sys.aggregation_interval < 1) fail("system: I must be >= 1");
  if (!(std::isfinite(sys.learning_rate) && sys.learning_rate > 0.0)) {
    fail("system: learning rate must be positive");
  }
  if (sys.rounds < 1) fail("system: R must be >= 1");
  if (!(std::isfinite(sys.latency_budget) && sys.latency_budget > 0.0)) {
    fail("system: latency budget must be positive");
  }
  if (sys.min_cut < 1 || sys.min_cut > num_layers) {
    fail("system: minimum cut layer ", sys.min_cut, " outside [1, ",
         num_layers, "]");
  }
}

/// Checks every population invariant; throws ValidationError naming the
/// first violation.
inline Population validate_population(std::vector<ClientProfile> clients,
                                      ModelStatistics stats,
                                      SystemConfig sys) {
  using detail::fail;
  if (clients.empty()) fail("population: no clients");
  validate_statistics(stats);
  validate_system(sys, stats.num_layers());
  if (static_cast<int>(clients.size()) != sys.num_clients) {
    fail("population: ", clients.size(), " clients but N = ",
         sys.num_clients);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].id != static_cast<int>(i) + 1) {
      fail("client at position ", i + 1, " has id ", clients[i].id);
    }
    validate_client(clients[i]);
    total += clients[i].weight;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    fail("population: weights must sum to 1 (got ", total, ")");
  }
  return Population{std::move(clients), std::move(stats), sys};
}

/// SamplingPlan invariants. `sum_tolerance` bounds |sum q - 1| and
/// `aux_tolerance` the slack allowed on the auxiliary-variable constraint.
inline void validate_plan(const SamplingPlan& plan,
                          const std::vector<ClientProfile>& clients,
                          const SystemConfig& sys, int num_layers,
                          double sum_tolerance = kSumTolerance,
                          double aux_tolerance = 0.0) {
  using detail::fail;
  const std::size_t n = clients.size();
  if (plan.q.size() != n || plan.cut_layers.size() != n) {
    fail("plan: expected ", n, " entries");
  }
  double total = 0.0;
  int max_cut = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double qi = plan.q[i];
    if (!(qi > 0.0 && qi <= 1.0)) {
      fail("plan: q of client ", i + 1, " outside (0, 1]");
    }
    total += qi;
    const int cut = plan.cut_layers[i];
    if (cut < sys.min_cut || cut > plan.max_cut || cut > num_layers) {
      fail("plan: cut of client ", i + 1, " outside [", sys.min_cut, ", ",
           plan.max_cut, "]");
    }
    max_cut = std::max(max_cut, cut);
    const double ratio = clients[i].weight * clients[i].weight /
                         (qi * clients[i].success_probability());
    if (ratio > plan.aux_M + aux_tolerance) {
      fail("plan: client ", i + 1, " violates the auxiliary bound (",
           ratio, " > ", plan.aux_M, ")");
    }
  }
  if (std::abs(total - 1.0) > sum_tolerance) {
    fail("plan: q must sum to 1 (got ", total, ")");
  }
  if (max_cut != plan.max_cut) {
    fail("plan: max cut is ", max_cut, " but plan records ", plan.max_cut);
  }
}

}  // namespace sflopt
