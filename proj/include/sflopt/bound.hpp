#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "sflopt/core_types.hpp"

namespace sflopt {

/// Terms of the convergence upper bound U(q, L_c). `total` is their sum.
struct BoundBreakdown {
  double total = 0.0;
  double term_init = 0.0;
  double term_negative = 0.0;
  double term_variance = 0.0;
  double term_drift = 0.0;
};

namespace detail {

inline double init_term(const ModelStatistics& stats, const SystemConfig& sys) {
  if (stats.loss_gap == 0.0) return 0.0;
  return 2.0 * stats.loss_gap / (sys.learning_rate * sys.rounds);
}

// beta*gamma/(1-p) * { head/((1-phi)(1-a)) + tail } for one client.
inline double variance_coefficient(const ClientProfile& c,
                                   const ModelStatistics& stats, int cut) {
  const int L = stats.num_layers();
  const double head = stats.variance_plus_moment_sum(1, cut);
  const double tail = stats.variance_plus_moment_sum(cut + 1, L);
  return 1.0 / (1.0 - c.upload_failure) *
         (head / ((1.0 - c.download_failure) * (1.0 - c.aggregation_failure)) +
          tail);
}

// 2 beta^2 gamma^2 I^2: scale of the client-drift terms.
inline double drift_scale(const ModelStatistics& stats,
                          const SystemConfig& sys) {
  const double gI = sys.learning_rate * sys.aggregation_interval;
  return 2.0 * stats.beta * stats.beta * gI * gI;
}

}  // namespace detail

/// max_i m_i^2 / (q_i (1-p_i)(1-phi_i)(1-a_i)), evaluated exactly.
inline double max_weighted_ratio(const std::vector<double>& q,
                                 const std::vector<ClientProfile>& clients) {
  double best = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const double m = clients[i].weight;
    best = std::max(best, m * m / (q[i] * clients[i].success_probability()));
  }
  return best;
}

/// Per-client coefficient C~_{i,L_c}(M) multiplying m_i^2/q_i in the bound.
inline double coefficient_c_tilde(const ClientProfile& client,
                                  const ModelStatistics& stats, int max_cut,
                                  double aux_M, const SystemConfig& sys) {
  const double beta_gamma = stats.beta * sys.learning_rate;
  const double head_g = stats.g_sq_sum(1, max_cut);
  const double all_g = stats.g_sq_sum(1, stats.num_layers());
  return beta_gamma * detail::variance_coefficient(client, stats, max_cut) +
         detail::drift_scale(stats, sys) *
             (sys.num_clients * aux_M + 1.0 / client.success_probability()) *
             head_g -
         all_g;
}

/// U(q, L_c) with L_c = plan.max_cut. The max over clients inside the drift
/// term is the exact maximum at plan.q, not plan.aux_M.
inline BoundBreakdown convergence_upper_bound(
    const SamplingPlan& plan, const std::vector<ClientProfile>& clients,
    const ModelStatistics& stats, const SystemConfig& sys) {
  const int cut = plan.max_cut;
  const double exact_max = max_weighted_ratio(plan.q, clients);
  const double head_g = stats.g_sq_sum(1, cut);
  const double all_g = stats.g_sq_sum(1, stats.num_layers());
  const double beta_gamma = stats.beta * sys.learning_rate;
  const double drift = detail::drift_scale(stats, sys);

  BoundBreakdown out;
  out.term_init = detail::init_term(stats, sys);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const ClientProfile& c = clients[i];
    const double w = c.weight * c.weight / plan.q[i];
    out.term_negative -= w * all_g;
    out.term_variance += w * beta_gamma * detail::variance_coefficient(c, stats, cut);
    out.term_drift += w * drift *
                      (sys.num_clients * exact_max + 1.0 / c.success_probability()) *
                      head_g;
  }
  out.total = out.term_init + out.term_negative + out.term_variance + out.term_drift;
  return out;
}

/// Smallest R with 2*theta/(gamma*(eps + Gamma)) <= R, or nullopt when
/// eps + Gamma <= 0 and no number of rounds reaches eps.
inline std::optional<long long> rounds_to_accuracy(
    double epsilon, const SamplingPlan& plan,
    const std::vector<ClientProfile>& clients, const ModelStatistics& stats,
    const SystemConfig& sys) {
  const BoundBreakdown b = convergence_upper_bound(plan, clients, stats, sys);
  const double gamma_term = -(b.term_negative + b.term_variance + b.term_drift);
  const double denom = epsilon + gamma_term;
  if (!(denom > 0.0)) return std::nullopt;
  if (stats.loss_gap == 0.0) return 1;
  const double r = 2.0 * stats.loss_gap / (sys.learning_rate * denom);
  return std::max(1LL, static_cast<long long>(std::ceil(r)));
}

/// Bound on E||h_c - h_{c,i}||^2 between the aggregated and one client's
/// forged client-specific model.
inline double discrepancy_bound(const ClientProfile& client,
                                const SamplingPlan& plan,
                                const std::vector<ClientProfile>& clients,
                                const ModelStatistics& stats,
                                const SystemConfig& sys) {
  const double gI = sys.learning_rate * sys.aggregation_interval;
  const double exact_max = max_weighted_ratio(plan.q, clients);
  return 2.0 * gI * gI *
         (sys.num_clients * exact_max + 1.0 / client.success_probability()) *
         stats.g_sq_sum(1, plan.max_cut);
}

}  // namespace sflopt
