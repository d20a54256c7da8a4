#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "sflopt/core_types.hpp"
#include "sflopt/model.hpp"

namespace sflopt {

// An Objective provides
//   double loss_and_grad(const Blocks& w, const Dataset& batch, Blocks* grad) const;
// with one gradient block per layer.

struct EstimationReport {
  double beta_local = 0.0;
  double beta_cross = 0.0;
  double beta = 0.0;
  bool cross_defined = false;  // false when fewer than two distinct models
  Vec sigma_sq;
  Vec g_sq;
  bool single_batch = false;  // variance came from one batch and is 0
  double vartheta = 0.0;
  int calibration_rounds = 0;

  ModelStatistics statistics() const {
    ModelStatistics s;
    s.sigma_sq = sigma_sq;
    s.g_sq = g_sq;
    s.beta = beta;
    s.loss_gap = vartheta;
    return s;
  }
};

inline double blocks_distance(const Blocks& a, const Blocks& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) s += squared_distance(a[l], b[l]);
  return std::sqrt(s);
}

/// 1e-3 of the parameter norm, the default finite-difference step.
inline double default_perturbation(const Blocks& w) { return 1e-3 * std::sqrt(squared_norm(w)); }

namespace detail {

inline std::vector<int> random_rows(int n, int count, std::mt19937_64& rng) {
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (count >= n) return rows;
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(count);
  return rows;
}

}  // namespace detail

/// Finite-difference smoothness per client, ||grad f(w+e) - grad f(w)|| / ||e||
/// on one mini-batch with e an isotropic direction of norm `scale`, averaged
/// with weights n_i.
template <class Objective>
double estimate_beta_local(const Objective& f, const Blocks& w,
                           const std::vector<Dataset>& data_per_client, double scale,
                           int batch_size, std::mt19937_64& rng) {
  if (!(scale > 0.0)) detail::fail("beta estimate: perturbation scale must be positive");
  std::normal_distribution<double> gauss(0.0, 1.0);
  double weighted = 0.0, total = 0.0;
  for (const Dataset& d : data_per_client) {
    if (d.size() == 0) continue;
    const Dataset batch = d.subset(detail::random_rows(d.size(), batch_size, rng));
    Blocks dir = w;
    for (Vec& b : dir) {
      for (double& e : b) e = gauss(rng);
    }
    const double norm = std::sqrt(squared_norm(dir));
    Blocks shifted = w;
    for (std::size_t l = 0; l < w.size(); ++l) {
      for (std::size_t k = 0; k < w[l].size(); ++k) {
        dir[l][k] *= scale / norm;
        shifted[l][k] += dir[l][k];
      }
    }
    Blocks g0, g1;
    f.loss_and_grad(w, batch, &g0);
    f.loss_and_grad(shifted, batch, &g1);
    const double ratio = blocks_distance(g1, g0) / std::sqrt(squared_norm(dir));
    weighted += ratio * d.size();
    total += d.size();
  }
  return total > 0.0 ? weighted / total : 0.0;
}

struct CrossEstimate {
  double value = 0.0;
  bool defined = false;
};

/// max over model pairs of ||grad f(w_i) - grad f(w_z)|| / ||w_i - w_z|| on
/// shared data; pairs closer than 1e-12 are skipped.
template <class Objective>
CrossEstimate estimate_beta_cross(const Objective& f, const std::vector<Blocks>& models,
                                  const Dataset& shared) {
  std::vector<Blocks> grads(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) f.loss_and_grad(models[i], shared, &grads[i]);
  CrossEstimate out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t z = i + 1; z < models.size(); ++z) {
      const double dw = blocks_distance(models[i], models[z]);
      if (dw < 1e-12) continue;
      out.value = std::max(out.value, blocks_distance(grads[i], grads[z]) / dw);
      out.defined = true;
    }
  }
  return out;
}

struct LayerStats {
  Vec sigma_sq;
  Vec g_sq;
  bool single_batch = false;
};

/// Per layer over every mini-batch of `epochs` shuffled passes at fixed w:
/// sigma_j^2 is the population variance of ||grad_j||^2, G_j^2 its maximum.
template <class Objective>
LayerStats estimate_layer_stats(const Objective& f, const Blocks& w, const Dataset& data,
                                int epochs, int batch_size, std::mt19937_64& rng) {
  if (epochs < 1) detail::fail("layer statistics: epochs must be >= 1");
  if (data.size() == 0) detail::fail("layer statistics: empty dataset");
  const std::size_t L = w.size();
  std::vector<Vec> norms(L);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Blocks g;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < data.size(); start += batch_size) {
      const int stop = std::min(data.size(), start + batch_size);
      const Dataset batch = data.subset(std::vector<int>(order.begin() + start, order.begin() + stop));
      f.loss_and_grad(w, batch, &g);
      for (std::size_t l = 0; l < L; ++l) norms[l].push_back(squared_norm(g[l]));
    }
  }
  LayerStats out;
  out.single_batch = norms.front().size() == 1;
  for (std::size_t l = 0; l < L; ++l) {
    const Vec& v = norms[l];
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    out.sigma_sq.push_back(var / v.size());
    out.g_sq.push_back(*std::max_element(v.begin(), v.end()));
  }
  return out;
}

struct CalibrationOptions {
  int rounds = 100;          // centralized SGD steps for the loss gap
  int local_steps = 10;      // per-client steps producing the cross-check models
  int batch_size = 16;
  int epochs = 1;
  int checkpoints = 3;       // layer statistics taken at this many points
  double learning_rate = 0.05;
  double perturbation = 0.0; // 0: default_perturbation(w0)
};

/// Full calibration from scratch: beta at w0 (local) and across briefly
/// trained client models (cross), layer statistics as the element-wise max
/// over checkpoints of a centralized SGD run, and the loss gap
/// f(w0) - min observed loss over that run.
template <class Objective>
EstimationReport calibrate(const Objective& f, const Blocks& w0,
                           const std::vector<Dataset>& data_per_client,
                           const CalibrationOptions& opt, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset pooled;
  for (const Dataset& d : data_per_client) pooled.append(d);

  EstimationReport rep;
  const double scale = opt.perturbation > 0.0 ? opt.perturbation : default_perturbation(w0);
  rep.beta_local = estimate_beta_local(f, w0, data_per_client, scale, opt.batch_size, rng);

  std::vector<Blocks> locals;
  Blocks g;
  for (const Dataset& d : data_per_client) {
    if (d.size() == 0) continue;
    Blocks w = w0;
    for (int s = 0; s < opt.local_steps; ++s) {
      f.loss_and_grad(w, d.subset(detail::random_rows(d.size(), opt.batch_size, rng)), &g);
      for (std::size_t l = 0; l < w.size(); ++l) {
        for (std::size_t k = 0; k < w[l].size(); ++k) w[l][k] -= opt.learning_rate * g[l][k];
      }
    }
    locals.push_back(std::move(w));
  }
  const CrossEstimate cross = estimate_beta_cross(f, locals, pooled);
  rep.beta_cross = cross.value;
  rep.cross_defined = cross.defined;
  rep.beta = std::max(rep.beta_local, rep.beta_cross);

  const double f0 = f.loss_and_grad(w0, pooled, nullptr);
  double best = f0;
  Blocks w = w0;
  const int every = std::max(1, opt.rounds / std::max(1, opt.checkpoints - 1));
  rep.sigma_sq.assign(w0.size(), 0.0);
  rep.g_sq.assign(w0.size(), 0.0);
  for (int t = 0; t <= opt.rounds; ++t) {
    if (t % every == 0 || t == opt.rounds) {
      const LayerStats ls = estimate_layer_stats(f, w, pooled, opt.epochs, opt.batch_size, rng);
      rep.single_batch = rep.single_batch || ls.single_batch;
      for (std::size_t l = 0; l < w0.size(); ++l) {
        rep.sigma_sq[l] = std::max(rep.sigma_sq[l], ls.sigma_sq[l]);
        rep.g_sq[l] = std::max(rep.g_sq[l], ls.g_sq[l]);
      }
    }
    if (t == opt.rounds) break;
    f.loss_and_grad(w, pooled.subset(detail::random_rows(pooled.size(), opt.batch_size, rng)),
                    &g);
    for (std::size_t l = 0; l < w.size(); ++l) {
      for (std::size_t k = 0; k < w[l].size(); ++k) w[l][k] -= opt.learning_rate * g[l][k];
    }
    best = std::min(best, f.loss_and_grad(w, pooled, nullptr));
  }
  rep.vartheta = f0 - best;
  rep.calibration_rounds = opt.rounds;
  return rep;
}

}  // namespace sflopt
