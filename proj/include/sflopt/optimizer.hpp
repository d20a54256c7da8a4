#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sflopt/bound.hpp"
#include "sflopt/core_types.hpp"
#include "sflopt/latency.hpp"

namespace sflopt {

/// Stopping tolerances and search brackets of the nested bisection.
struct Tolerances {
  double eps_M = 1e-6;
  double eps_lambda = 1e-6;  // bound on |sum q - 1|
  double eps_nu = 1e-6;      // bound on the latency excess, seconds
  double M_min = 1e-8;
  double M_max = 1e7;
  double lambda_min = 1e-8;
  double lambda_max = 1e7;
  double nu_min = 1e-8;
  double nu_max = 1e7;

  void validate() const {
    using detail::fail;
    if (!(eps_M > 0 && eps_lambda > 0 && eps_nu > 0)) {
      fail("tolerances: eps values must be positive");
    }
    if (!(M_min > 0 && M_min < M_max)) fail("tolerances: need 0 < M_min < M_max");
    if (!(lambda_min > 0 && lambda_min < lambda_max)) {
      fail("tolerances: need 0 < lambda_min < lambda_max");
    }
    if (!(nu_min > 0 && nu_min < nu_max)) fail("tolerances: need 0 < nu_min < nu_max");
  }
};

/// Coefficients with |C~| <= this are neither positive nor negative.
inline constexpr double kZeroCoefficient = 1e-12;

/// Client ids (1-based) grouped by the sign of C~_{i,L_c}(M).
struct Partition {
  std::vector<int> positive;
  std::vector<int> negative;
  std::vector<int> zero;
};

inline Partition partition_clients(double aux_M, int max_cut,
                                   const std::vector<ClientProfile>& clients,
                                   const ModelStatistics& stats,
                                   const SystemConfig& sys) {
  Partition out;
  for (const ClientProfile& c : clients) {
    const double coef = coefficient_c_tilde(c, stats, max_cut, aux_M, sys);
    if (coef > kZeroCoefficient) {
      out.positive.push_back(c.id);
    } else if (coef < -kZeroCoefficient) {
      out.negative.push_back(c.id);
    } else {
      out.zero.push_back(c.id);
    }
  }
  return out;
}

/// Lower bound on q_i implied by the auxiliary constraint:
/// m^2 / (M (1-a)(1-p)(1-phi)).
inline double q_negative(const ClientProfile& client, double aux_M) {
  return client.weight * client.weight /
         (aux_M * client.success_probability());
}

/// Stationary point of the positive-branch Lagrangian, clipped from below by
/// q_negative. nullopt when lambda + nu*K*A* <= 0.
inline std::optional<double> q_positive(const ClientProfile& client,
                                        const ModelStatistics& stats,
                                        int max_cut, double aux_M,
                                        double lambda, double nu,
                                        double latency_star,
                                        const SystemConfig& sys) {
  const double denom = lambda + nu * sys.sampled_per_round * latency_star;
  if (!(denom > 0.0)) return std::nullopt;
  const double coef = coefficient_c_tilde(client, stats, max_cut, aux_M, sys);
  const double m_sq = client.weight * client.weight;
  return std::max(q_negative(client, aux_M), std::sqrt(m_sq * coef / denom));
}

enum class InnerStatus {
  kFeasible,
  kShortfall,  // floors m^2/(M s) or the latency budget cannot be met: M too small
  kSurplus,    // only floor-pinned clients and their floors sum below 1: M too large
};

struct InnerSolution {
  InnerStatus status = InnerStatus::kShortfall;
  std::vector<double> q;
  std::vector<bool> pinned;  // q_i sits on its floor m^2/(M s)
  double lambda = 0.0;
  double nu = 0.0;
  double normalization_error = 0.0;  // e1 = sum q - 1
  double latency_error = 0.0;        // e2 = max(0, K sum q A* - T)
  double latency = 0.0;
  int positive_count = 0;

  bool feasible() const { return status == InnerStatus::kFeasible; }
};

/// One outer-loop probe.
struct IterationRecord {
  int max_cut = 0;
  double M_lo = 0.0;
  double M_hi = 0.0;
  double M = 0.0;
  double M_candidate = 0.0;
  double lambda = 0.0;
  double nu = 0.0;
  double e1 = 0.0;
  double e2 = 0.0;
  InnerStatus status = InnerStatus::kShortfall;
};

struct OuterSolution {
  double aux_M = 0.0;
  double M_candidate = 0.0;  // exact max_i m^2/(q_i s_i) at the returned q
  InnerSolution inner;
};

namespace detail {

// C~ split as base_i + slope * M for one maximum cut.
struct CutContext {
  std::vector<double> m_sq;
  std::vector<double> success;
  std::vector<double> base;
  std::vector<double> latency;
  double slope = 0.0;
  double K = 1.0;
  double T = 1.0;

  CutContext(int max_cut, const std::vector<double>& latencies,
             const std::vector<ClientProfile>& clients,
             const ModelStatistics& stats, const SystemConfig& sys)
      : latency(latencies),
        K(sys.sampled_per_round),
        T(sys.latency_budget) {
    const double beta_gamma = stats.beta * sys.learning_rate;
    const double head_g = stats.g_sq_sum(1, max_cut);
    const double all_g = stats.g_sq_sum(1, stats.num_layers());
    const double drift = drift_scale(stats, sys);
    slope = drift * sys.num_clients * head_g;
    for (const ClientProfile& c : clients) {
      m_sq.push_back(c.weight * c.weight);
      success.push_back(c.success_probability());
      base.push_back(beta_gamma * variance_coefficient(c, stats, max_cut) +
                     drift * head_g / c.success_probability() - all_g);
    }
  }

  std::size_t size() const { return m_sq.size(); }
  double coefficient(std::size_t i, double M) const { return base[i] + slope * M; }
  double floor(std::size_t i, double M) const { return m_sq[i] / (M * success[i]); }
};

class InnerSolver {
 public:
  InnerSolver(const CutContext& ctx, double M, const Tolerances& tol)
      : ctx_(ctx), M_(M), tol_(tol), n_(ctx.size()) {
    floor_.resize(n_);
    coef_.resize(n_);
    positive_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      floor_[i] = ctx.floor(i, M);
      coef_[i] = ctx.coefficient(i, M);
      positive_[i] = coef_[i] > kZeroCoefficient;
    }
  }

  InnerSolution solve() {
    InnerSolution out;
    double pinned_mass = 0.0;
    double positive_floor_mass = 0.0;
    double pinned_latency = 0.0;
    min_positive_latency_ = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_; ++i) {
      if (positive_[i]) {
        positive_floor_mass += floor_[i];
        min_positive_latency_ = std::min(min_positive_latency_, ctx_.latency[i]);
        ++out.positive_count;
      } else {
        pinned_mass += floor_[i];
        pinned_latency += floor_[i] * ctx_.latency[i];
      }
    }
    pinned_latency_ = pinned_latency;
    const double budget = ctx_.T + tol_.eps_nu;

    if (pinned_mass + positive_floor_mass > 1.0 + tol_.eps_lambda) {
      out.status = InnerStatus::kShortfall;
      return out;
    }
    if (out.positive_count == 0) {
      out.q = floor_;
      out.pinned.assign(n_, true);
      out.normalization_error = pinned_mass - 1.0;
      out.latency = ctx_.K * pinned_latency;
      out.latency_error = std::max(0.0, out.latency - ctx_.T);
      if (std::abs(out.normalization_error) > tol_.eps_lambda) {
        out.status = InnerStatus::kSurplus;
      } else if (out.latency > budget) {
        out.status = InnerStatus::kShortfall;
      } else {
        out.status = InnerStatus::kFeasible;
      }
      return out;
    }

    target_ = 1.0 - pinned_mass;
    positive_floor_mass_ = positive_floor_mass;
    // Cheapest latency: every positive client on its floor, the remainder on
    // the fastest positive client.
    double floor_latency = pinned_latency;
    for (std::size_t i = 0; i < n_; ++i) {
      if (positive_[i]) floor_latency += floor_[i] * ctx_.latency[i];
    }
    const double cheapest =
        ctx_.K * (floor_latency +
                  std::max(0.0, target_ - positive_floor_mass) * min_positive_latency_);
    if (cheapest > budget) {
      out.status = InnerStatus::kShortfall;
      return out;
    }

    double nu = 0.0;
    double lambda = solve_lambda(nu);
    double lat = latency_of(lambda, nu);
    if (lat > budget) {
      // Complementary slackness: the budget binds, so bisect nu.
      double lo = 0.0;
      double hi = tol_.nu_max;
      double hi_lambda = solve_lambda(hi);
      double hi_lat = latency_of(hi_lambda, hi);
      for (int widen = 0; hi_lat > budget && widen < 40; ++widen) {
        hi *= 10.0;
        hi_lambda = solve_lambda(hi);
        hi_lat = latency_of(hi_lambda, hi);
      }
      if (hi_lat > budget) {
        out.status = InnerStatus::kShortfall;
        return out;
      }
      nu = hi;
      lambda = hi_lambda;
      lat = hi_lat;
      for (int it = 0; it < 300; ++it) {
        if (lat >= ctx_.T - tol_.eps_nu) break;
        const double mid = 0.5 * (lo + hi);
        if (!(mid > lo && mid < hi)) break;
        const double mid_lambda = solve_lambda(mid);
        const double mid_lat = latency_of(mid_lambda, mid);
        if (mid_lat > budget) {
          lo = mid;
        } else {
          hi = mid;
          nu = mid;
          lambda = mid_lambda;
          lat = mid_lat;
        }
      }
    }

    out.q.assign(n_, 0.0);
    out.pinned.assign(n_, false);
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      if (positive_[i]) {
        out.q[i] = positive_q(i, lambda, nu);
        out.pinned[i] = out.q[i] == floor_[i];
      } else {
        out.q[i] = floor_[i];
        out.pinned[i] = true;
      }
      total += out.q[i];
    }
    out.lambda = lambda;
    out.nu = nu;
    out.normalization_error = total - 1.0;
    out.latency = lat;
    out.latency_error = std::max(0.0, lat - ctx_.T);
    out.status = std::abs(out.normalization_error) <= tol_.eps_lambda
                     ? InnerStatus::kFeasible
                     : InnerStatus::kShortfall;
    return out;
  }

  // dV/dM of the inner optimum, by the envelope theorem: the explicit M in C~
  // plus the shadow price of every floor-pinned client.
  double value_slope(const InnerSolution& sol) const {
    double d = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      d += ctx_.slope * ctx_.m_sq[i] / sol.q[i];
      if (sol.pinned[i]) {
        const double qi = sol.q[i];
        const double mu = sol.lambda + sol.nu * ctx_.K * ctx_.latency[i] -
                          ctx_.m_sq[i] * coef_[i] / (qi * qi);
        d -= mu * floor_[i] / M_;
      }
    }
    return d;
  }

 private:
  double positive_q(std::size_t i, double lambda, double nu) const {
    const double denom = lambda + nu * ctx_.K * ctx_.latency[i];
    if (!(denom > 0.0)) return 1.0;
    const double interior = std::sqrt(ctx_.m_sq[i] * coef_[i] / denom);
    return std::min(1.0, std::max(floor_[i], interior));
  }

  double positive_mass(double lambda, double nu) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      if (positive_[i]) s += positive_q(i, lambda, nu);
    }
    return s;
  }

  double latency_of(double lambda, double nu) const {
    double s = pinned_latency_;
    for (std::size_t i = 0; i < n_; ++i) {
      if (positive_[i]) s += positive_q(i, lambda, nu) * ctx_.latency[i];
    }
    return ctx_.K * s;
  }

  // Positive mass is non-increasing in lambda; bisect until it matches the
  // mass left by the pinned clients.
  double solve_lambda(double nu) const {
    const double eps = tol_.eps_lambda;
    double hi = tol_.lambda_max;
    for (int widen = 0; positive_mass(hi, nu) > target_ + eps && widen < 40; ++widen) {
      hi *= 10.0;
    }
    double lo = tol_.lambda_min;
    if (positive_mass(lo, nu) < target_ - eps) {
      lo = -nu * ctx_.K * min_positive_latency_;
    }
    double best = hi;
    double best_err = std::abs(positive_mass(hi, nu) - target_);
    for (int it = 0; it < 400 && best_err > eps; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (!(mid > lo && mid < hi)) break;
      const double err = positive_mass(mid, nu) - target_;
      if (std::abs(err) < best_err) {
        best = mid;
        best_err = std::abs(err);
      }
      if (err > 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    return best;
  }

  const CutContext& ctx_;
  double M_;
  const Tolerances& tol_;
  std::size_t n_;
  std::vector<double> floor_;
  std::vector<double> coef_;
  std::vector<bool> positive_;
  double target_ = 1.0;
  double positive_floor_mass_ = 0.0;
  double pinned_latency_ = 0.0;
  double min_positive_latency_ = 0.0;
};

inline double exact_candidate(const std::vector<double>& q, const CutContext& ctx) {
  double best = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    best = std::max(best, ctx.m_sq[i] / (q[i] * ctx.success[i]));
  }
  return best;
}

inline std::optional<OuterSolution> outer_bisection(
    const CutContext& ctx, const Tolerances& tol, int max_cut,
    std::vector<IterationRecord>* trace) {
  auto probe = [&](double M) { return InnerSolver(ctx, M, tol).solve(); };

  double lo = tol.M_min;
  double hi = tol.M_max;
  InnerSolution at_hi = probe(hi);
  if (at_hi.status == InnerStatus::kShortfall) {
    hi *= 10.0;
    at_hi = probe(hi);
    if (at_hi.status == InnerStatus::kShortfall) return std::nullopt;
  }

  for (int it = 0; it < 500 && hi - lo >= tol.eps_M; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    InnerSolver solver(ctx, mid, tol);
    InnerSolution sol = solver.solve();
    IterationRecord rec;
    rec.max_cut = max_cut;
    rec.M_lo = lo;
    rec.M_hi = hi;
    rec.M = mid;
    rec.lambda = sol.lambda;
    rec.nu = sol.nu;
    rec.e1 = sol.normalization_error;
    rec.e2 = sol.latency_error;
    rec.status = sol.status;
    if (!sol.q.empty()) rec.M_candidate = exact_candidate(sol.q, ctx);

    bool lower_upper = false;
    switch (sol.status) {
      case InnerStatus::kShortfall:
        lower_upper = false;
        break;
      case InnerStatus::kSurplus:
        lower_upper = true;
        break;
      case InnerStatus::kFeasible:
        lower_upper = sol.positive_count == 0 || solver.value_slope(sol) >= 0.0;
        break;
    }
    if (lower_upper) {
      hi = mid;
      at_hi = std::move(sol);
    } else {
      lo = mid;
    }
    if (trace != nullptr) trace->push_back(rec);
  }

  double M = hi;
  double fixed = 0.0;
  for (std::size_t i = 0; i < ctx.size(); ++i) fixed += ctx.m_sq[i] / ctx.success[i];
  if (at_hi.status == InnerStatus::kSurplus ||
      (at_hi.feasible() && at_hi.positive_count == 0) ||
      hi - fixed < tol.eps_M + 4.0 * tol.eps_lambda * fixed) {
    // Only floor-pinned clients, or a final bracket that reaches the fixed
    // point sum m^2/((1-a)(1-p)(1-phi)) where every floor is tight. Snapping
    // removes the slack the bracket width and the normalization tolerance
    // leave in M.
    M = fixed;
    at_hi = probe(M);
  }
  if (!at_hi.feasible()) return std::nullopt;
  OuterSolution out;
  out.aux_M = M;
  out.M_candidate = exact_candidate(at_hi.q, ctx);
  out.inner = std::move(at_hi);
  return out;
}

}  // namespace detail

/// Inner loop at a fixed M: bisection on lambda (normalization) and, when the
/// latency budget binds, on nu. Clients with non-positive C~ sit on their
/// floor m^2/(M s).
inline InnerSolution inner_bisection(double aux_M, int max_cut,
                                     const std::vector<double>& latency_star,
                                     const std::vector<ClientProfile>& clients,
                                     const ModelStatistics& stats,
                                     const SystemConfig& sys,
                                     const Tolerances& tol) {
  detail::CutContext ctx(max_cut, latency_star, clients, stats, sys);
  return detail::InnerSolver(ctx, aux_M, tol).solve();
}

/// Outer bisection on M for one maximum cut L_c.
inline std::optional<OuterSolution> outer_bisection_M(
    int max_cut, const std::vector<double>& latency_star,
    const std::vector<ClientProfile>& clients, const ModelStatistics& stats,
    const SystemConfig& sys, const Tolerances& tol,
    std::vector<IterationRecord>* trace = nullptr) {
  detail::CutContext ctx(max_cut, latency_star, clients, stats, sys);
  return detail::outer_bisection(ctx, tol, max_cut, trace);
}

/// Solution for one L_c after the maximum-cut constraint is restored.
struct CutSolution {
  SamplingPlan plan;
  OuterSolution outer;
  std::vector<double> latency;  // A_i used by the final solve
  int forced_client = 0;        // 1-based id moved to L_c, 0 when none
  BoundBreakdown bound;
};

/// A_i(cut) for every client and cut; row i, column cut-1.
using LatencyTable = std::vector<std::vector<double>>;

inline LatencyTable latency_table(const std::vector<ClientProfile>& clients,
                                  const LatencyProfile& prof) {
  LatencyTable table(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    for (int cut = 1; cut <= prof.num_layers(); ++cut) {
      table[i].push_back(per_client_latency(clients[i], prof, cut));
    }
  }
  return table;
}

/// Guarantees max_i cut_i = L_c. When no client already sits at L_c, each
/// client in turn is moved to L_c and the problem re-solved; the client with
/// the smallest resulting bound is kept (ties: smallest id). A candidate
/// whose move leaves the relaxed q within the latency budget cannot be
/// beaten, so such a candidate ends the search without a re-solve.
inline std::optional<CutSolution> enforce_max_cut(
    int max_cut, const OuterSolution& relaxed,
    const std::vector<int>& relaxed_cuts, const LatencyTable& table,
    const std::vector<ClientProfile>& clients, const ModelStatistics& stats,
    const SystemConfig& sys, const Tolerances& tol) {
  const std::size_t n = clients.size();
  std::vector<double> latency_star(n);
  for (std::size_t i = 0; i < n; ++i) {
    latency_star[i] = table[i][relaxed_cuts[i] - 1];
  }
  auto finish = [&](const OuterSolution& outer, std::vector<int> cuts,
                    std::vector<double> latency, int forced) {
    CutSolution out;
    out.plan.q = outer.inner.q;
    out.plan.cut_layers = std::move(cuts);
    out.plan.max_cut = max_cut;
    out.plan.aux_M = outer.aux_M;
    out.outer = outer;
    out.latency = std::move(latency);
    out.forced_client = forced;
    out.bound = convergence_upper_bound(out.plan, clients, stats, sys);
    return out;
  };

  if (std::find(relaxed_cuts.begin(), relaxed_cuts.end(), max_cut) !=
      relaxed_cuts.end()) {
    return finish(relaxed, relaxed_cuts, latency_star, 0);
  }

  const double K = sys.sampled_per_round;
  double relaxed_latency = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    relaxed_latency += relaxed.inner.q[i] * latency_star[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double moved = relaxed_latency + relaxed.inner.q[i] *
                                               (table[i][max_cut - 1] - latency_star[i]);
    if (K * moved <= sys.latency_budget + tol.eps_nu) {
      std::vector<int> cuts = relaxed_cuts;
      cuts[i] = max_cut;
      std::vector<double> latency = latency_star;
      latency[i] = table[i][max_cut - 1];
      return finish(relaxed, std::move(cuts), std::move(latency),
                    static_cast<int>(i) + 1);
    }
  }

  std::optional<CutSolution> best;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> latency = latency_star;
    latency[i] = table[i][max_cut - 1];
    auto outer = outer_bisection_M(max_cut, latency, clients, stats, sys, tol);
    if (!outer) continue;
    std::vector<int> cuts = relaxed_cuts;
    cuts[i] = max_cut;
    CutSolution candidate =
        finish(*outer, std::move(cuts), std::move(latency), static_cast<int>(i) + 1);
    if (!best || candidate.bound.total < best->bound.total) {
      best = std::move(candidate);
    }
  }
  return best;
}

/// Outcome of one L_c in the enumeration.
struct CandidateRecord {
  int max_cut = 0;
  bool feasible = false;
  double objective = std::numeric_limits<double>::infinity();
};

struct OptimizerResult {
  SamplingPlan plan;
  double objective = 0.0;
  BoundBreakdown bound;
  double lambda = 0.0;
  double nu = 0.0;
  double M_candidate = 0.0;
  std::vector<double> latency;  // A_i at the returned cuts
  int forced_client = 0;
  std::vector<CandidateRecord> candidates;
  std::vector<IterationRecord> trace;
};

/// Joint sampling distribution and cut layers minimizing the convergence
/// bound under the latency budget. Throws InfeasibleError when no L_c admits
/// a feasible plan.
inline OptimizerResult optimize(const std::vector<ClientProfile>& clients,
                                const ModelStatistics& stats,
                                const LatencyProfile& prof,
                                const SystemConfig& sys,
                                const Tolerances& tol = {}) {
  tol.validate();
  const int L = stats.num_layers();
  if (prof.num_layers() != L) {
    throw ValidationError("latency profile and model statistics disagree on L");
  }
  const LatencyTable table = latency_table(clients, prof);

  OptimizerResult result;
  std::optional<CutSolution> best;
  for (int max_cut = sys.min_cut; max_cut <= L; ++max_cut) {
    std::vector<int> cuts(clients.size());
    std::vector<double> latency_star(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const SplitChoice split = best_split(clients[i], prof, max_cut, sys);
      cuts[i] = split.cut;
      latency_star[i] = split.latency;
    }
    CandidateRecord record;
    record.max_cut = max_cut;
    auto relaxed = outer_bisection_M(max_cut, latency_star, clients, stats, sys,
                                     tol, &result.trace);
    std::optional<CutSolution> solution;
    if (relaxed) {
      solution = enforce_max_cut(max_cut, *relaxed, cuts, table, clients, stats,
                                 sys, tol);
    }
    if (solution) {
      record.feasible = true;
      record.objective = solution->bound.total;
      if (!best || solution->bound.total < best->bound.total) {
        best = std::move(solution);
      }
    }
    result.candidates.push_back(record);
  }
  if (!best) {
    throw InfeasibleError(
        "no maximum cut layer admits a sampling plan within the latency budget");
  }
  result.plan = best->plan;
  result.objective = best->bound.total;
  result.bound = best->bound;
  result.lambda = best->outer.inner.lambda;
  result.nu = best->outer.inner.nu;
  result.M_candidate = best->outer.M_candidate;
  result.latency = best->latency;
  result.forced_client = best->forced_client;
  return result;
}

/// Sampling distribution only, for cut layers fixed in advance; L_c is
/// their maximum. Throws InfeasibleError when the budget cannot be met.
inline OptimizerResult optimize_fixed_cuts(const std::vector<ClientProfile>& clients,
                                           const ModelStatistics& stats,
                                           const LatencyProfile& prof,
                                           const SystemConfig& sys,
                                           const std::vector<int>& cuts,
                                           const Tolerances& tol = {}) {
  tol.validate();
  if (cuts.size() != clients.size()) {
    throw ValidationError("fixed cuts: one cut per client required");
  }
  const int max_cut = *std::max_element(cuts.begin(), cuts.end());
  std::vector<double> latency(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (cuts[i] < sys.min_cut || cuts[i] > stats.num_layers()) {
      throw ValidationError("fixed cuts: cut of client " + std::to_string(i + 1) +
                            " out of range");
    }
    latency[i] = per_client_latency(clients[i], prof, cuts[i]);
  }
  OptimizerResult result;
  auto outer = outer_bisection_M(max_cut, latency, clients, stats, sys, tol, &result.trace);
  if (!outer) {
    throw InfeasibleError("fixed cut layers admit no sampling plan within the latency budget");
  }
  result.plan.q = outer->inner.q;
  result.plan.cut_layers = cuts;
  result.plan.max_cut = max_cut;
  result.plan.aux_M = outer->aux_M;
  result.bound = convergence_upper_bound(result.plan, clients, stats, sys);
  result.objective = result.bound.total;
  result.lambda = outer->inner.lambda;
  result.nu = outer->inner.nu;
  result.M_candidate = outer->M_candidate;
  result.latency = latency;
  result.candidates.push_back({max_cut, true, result.objective});
  return result;
}

}  // namespace sflopt
