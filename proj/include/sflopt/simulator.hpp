#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sflopt/core_types.hpp"
#include "sflopt/model.hpp"

namespace sflopt {

/// SplitMix64 finalizer; the basis of every derived seed and counter-based
/// draw so results do not depend on iteration order.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

enum class FailureKind { kUpload = 0, kDownload = 1, kAggregation = 2 };

/// s_u, s_d, s_a: true when the exchange succeeded.
struct FailureFlags {
  bool upload = true;
  bool download = true;
  bool aggregation = true;
};

/// Bernoulli failures drawn from a hash of (seed, client, kind, round): one
/// independent stream per client and failure kind.
class FailureSampler {
 public:
  explicit FailureSampler(std::uint64_t seed) : seed_(seed) {}

  double uniform(int client_id, FailureKind kind, long long round) const {
    const std::uint64_t h = derive_seed(seed_, static_cast<std::uint64_t>(client_id),
                                        static_cast<std::uint64_t>(kind) + 1,
                                        static_cast<std::uint64_t>(round));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  bool failed(int client_id, FailureKind kind, long long round, double probability) const {
    return uniform(client_id, kind, round) < probability;
  }

  FailureFlags draw(const ClientProfile& c, long long round) const {
    FailureFlags f;
    f.upload = !failed(c.id, FailureKind::kUpload, round, c.upload_failure);
    f.download = !failed(c.id, FailureKind::kDownload, round, c.download_failure);
    f.aggregation = !failed(c.id, FailureKind::kAggregation, round, c.aggregation_failure);
    return f;
  }

 private:
  std::uint64_t seed_;
};

/// K categorical draws with replacement; returns 1-based ids in draw order.
inline std::vector<int> sample_clients(const std::vector<double>& q, int K,
                                       std::mt19937_64& rng) {
  std::discrete_distribution<int> pick(q.begin(), q.end());
  std::vector<int> ids(K);
  for (int& id : ids) id = pick(rng) + 1;
  return ids;
}

/// Mini-batch rows of one client in one round (with replacement).
inline std::vector<int> batch_rows(std::uint64_t seed, int client_id, long long round,
                                   int dataset_size, int batch_size) {
  std::mt19937_64 rng(derive_seed(seed, 0xba7c4ULL, static_cast<std::uint64_t>(client_id),
                                  static_cast<std::uint64_t>(round)));
  std::uniform_int_distribution<int> row(0, dataset_size - 1);
  std::vector<int> rows(batch_size);
  for (int& r : rows) r = row(rng);
  return rows;
}

/// Client layers 1..cut step only when both the upload and the download went
/// through, scaled by 1/((1-p)(1-phi)).
inline void client_side_step(const ClientProfile& c, Blocks& w, const Blocks& grad, int cut,
                             bool s_u, bool s_d, double gamma) {
  if (!(s_u && s_d)) return;
  const double scale = gamma / ((1.0 - c.upload_failure) * (1.0 - c.download_failure));
  for (int l = 1; l <= cut; ++l) {
    Vec& b = w[l - 1];
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= scale * grad[l - 1][k];
  }
}

/// Server layers cut+1..L (non-common and common) step when the activations
/// arrived, scaled by 1/(1-p).
inline void server_side_step(Blocks& w, const Blocks& grad, int cut, bool s_u, double gamma,
                             double p) {
  if (!s_u) return;
  const double scale = gamma / (1.0 - p);
  for (std::size_t l = cut; l < w.size(); ++l) {
    for (std::size_t k = 0; k < w[l].size(); ++k) w[l][k] -= scale * grad[l][k];
  }
}

namespace detail {

inline double occurrence_weight(int id, const std::vector<ClientProfile>& clients,
                                const std::vector<double>& q, int K) {
  return clients[id - 1].weight / q[id - 1] / K;
}

inline Blocks zeros_like(const Blocks& b) {
  Blocks z(b.size());
  for (std::size_t l = 0; l < b.size(); ++l) z[l].assign(b[l].size(), 0.0);
  return z;
}

inline void add_scaled(Vec& acc, const Vec& v, double s) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += s * v[k];
}

}  // namespace detail

/// (1/K) sum over the multiset of (m_i/q_i) h_{s,i}; parts[k] belongs to
/// multiset[k].
inline Blocks aggregate_common(const std::vector<Blocks>& parts,
                               const std::vector<int>& multiset,
                               const std::vector<ClientProfile>& clients,
                               const std::vector<double>& q) {
  const int K = static_cast<int>(multiset.size());
  Blocks out = detail::zeros_like(parts.front());
  for (int k = 0; k < K; ++k) {
    const double w = detail::occurrence_weight(multiset[k], clients, q, K);
    for (std::size_t l = 0; l < out.size(); ++l) detail::add_scaled(out[l], parts[k][l], w);
  }
  return out;
}

/// Same weights applied to the change since `reference` (the last
/// aggregate): reference + (1/K) sum (m_i/q_i)(h_{s,i} - reference).
inline Blocks aggregate_common_delta(const Blocks& reference, const std::vector<Blocks>& parts,
                                     const std::vector<int>& multiset,
                                     const std::vector<ClientProfile>& clients,
                                     const std::vector<double>& q) {
  const int K = static_cast<int>(multiset.size());
  Blocks out = reference;
  for (int k = 0; k < K; ++k) {
    const double w = detail::occurrence_weight(multiset[k], clients, q, K);
    for (std::size_t l = 0; l < out.size(); ++l) {
      for (std::size_t e = 0; e < out[l].size(); ++e) {
        out[l][e] += w * (parts[k][l][e] - reference[l][e]);
      }
    }
  }
  return out;
}

/// Forged models [h_{m,i}; (s_a/(1-a_i)) w_{c,i}] averaged with the sampling
/// weights. parts[k] holds layers 1..L_c of multiset[k]; layers 1..cuts[k]
/// are its client-side block.
inline Blocks aggregate_client_specific(const std::vector<Blocks>& parts,
                                        const std::vector<bool>& s_a,
                                        const std::vector<int>& cuts,
                                        const std::vector<int>& multiset,
                                        const std::vector<ClientProfile>& clients,
                                        const std::vector<double>& q) {
  const int K = static_cast<int>(multiset.size());
  Blocks out = detail::zeros_like(parts.front());
  for (int k = 0; k < K; ++k) {
    const ClientProfile& c = clients[multiset[k] - 1];
    const double w = detail::occurrence_weight(multiset[k], clients, q, K);
    const double forge = s_a[k] ? 1.0 / (1.0 - c.aggregation_failure) : 0.0;
    for (std::size_t l = 0; l < out.size(); ++l) {
      const double s = static_cast<int>(l) < cuts[k] ? w * forge : w;
      detail::add_scaled(out[l], parts[k][l], s);
    }
  }
  return out;
}

/// Delta form of the forged aggregate: the client-side change since the
/// last broadcast is what gets forged and reweighted.
inline Blocks aggregate_client_specific_delta(const Blocks& reference,
                                              const std::vector<Blocks>& parts,
                                              const std::vector<bool>& s_a,
                                              const std::vector<int>& cuts,
                                              const std::vector<int>& multiset,
                                              const std::vector<ClientProfile>& clients,
                                              const std::vector<double>& q) {
  const int K = static_cast<int>(multiset.size());
  Blocks out = reference;
  for (int k = 0; k < K; ++k) {
    const ClientProfile& c = clients[multiset[k] - 1];
    const double w = detail::occurrence_weight(multiset[k], clients, q, K);
    const double forge = s_a[k] ? 1.0 / (1.0 - c.aggregation_failure) : 0.0;
    for (std::size_t l = 0; l < out.size(); ++l) {
      const double s = static_cast<int>(l) < cuts[k] ? w * forge : w;
      for (std::size_t e = 0; e < out[l].size(); ++e) {
        out[l][e] += s * (parts[k][l][e] - reference[l][e]);
      }
    }
  }
  return out;
}

enum class AggregationForm {
  kDelta,     // reweight changes since the last aggregate
  kAbsolute,  // reweight the models themselves
};

struct SimulationOptions {
  int batch_size = 16;
  AggregationForm form = AggregationForm::kDelta;
  bool record_discrepancy = false;
  bool record_grad_norm = true;  // costs one full-data backward pass per round
  double round_latency = 0.0;    // expected latency reported per round
};

/// Picks the multiset for one sampling window (1-based ids).
using ClientSelector = std::function<std::vector<int>(long long window, std::mt19937_64& rng)>;

struct RoundRecord {
  long long round = 0;  // 1-based
  std::vector<int> sampled;
  std::string failed_upload, failed_download, failed_aggregation;  // '1' = failed
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double latency = 0.0;
  std::vector<double> discrepancy;  // ||h_c - h_{c,i}||^2 per client
};

struct SimulationTrace {
  std::vector<RoundRecord> rounds;
  double final_loss = 0.0;
  std::vector<double> max_layer_grad_sq;  // largest per-batch ||grad_j||^2 seen
  Blocks final_model;
};

/// Split federated training with failure injection. Every I rounds a
/// multiset of K clients is drawn and kept for the window; each round the
/// distinct sampled clients take one step on a mini-batch, the common server
/// layers L_c+1..L are aggregated, and every I-th round the client-specific
/// layers 1..L_c are aggregated from forged models and broadcast. The
/// reported loss is the full-data loss of the aggregated model.
template <class Model>
SimulationTrace run_training(const Population& pop, const SamplingPlan& plan, const Model& model,
                             const std::vector<Dataset>& data, std::uint64_t seed,
                             const SimulationOptions& opt = {},
                             const ClientSelector& selector = {}) {
  const auto& clients = pop.clients;
  const SystemConfig& sys = pop.sys;
  const int N = static_cast<int>(clients.size());
  const int L = model.num_layers();
  const int Lc = plan.max_cut;
  if (pop.stats.num_layers() != L) {
    detail::fail("simulator: model has ", L, " layers, statistics describe ",
                 pop.stats.num_layers());
  }
  if (static_cast<int>(data.size()) != N) {
    detail::fail("simulator: ", data.size(), " datasets for ", N, " clients");
  }
  validate_plan(plan, clients, sys, L, 1e-6, std::numeric_limits<double>::infinity());
  for (int i = 0; i < N; ++i) {
    if (data[i].size() == 0) detail::fail("simulator: client ", i + 1, " has no data");
  }

  Dataset pooled;
  for (const Dataset& d : data) pooled.append(d);

  const Blocks w0 = model.init(derive_seed(seed, 0x1417ULL));
  const FailureSampler failures(derive_seed(seed, 0xfa11ULL));
  std::mt19937_64 sampling_rng(derive_seed(seed, 0x5a3bULL));
  const std::uint64_t batch_seed = derive_seed(seed, 0xba7cULL);

  auto head = [&](const Blocks& w) { return Blocks(w.begin(), w.begin() + Lc); };
  auto tail = [&](const Blocks& w) { return Blocks(w.begin() + Lc, w.end()); };
  auto join = [](Blocks a, const Blocks& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  Blocks common = tail(w0);
  Blocks broadcast = head(w0);
  std::vector<Blocks> local(N, broadcast);

  SimulationTrace trace;
  trace.max_layer_grad_sq.assign(L, 0.0);
  std::vector<int> multiset;
  const auto K = sys.sampled_per_round;
  const int I = sys.aggregation_interval;

  for (long long t = 0; t < sys.rounds; ++t) {
    if (t % I == 0) {
      multiset = selector ? selector(t / I, sampling_rng)
                          : sample_clients(plan.q, K, sampling_rng);
      if (static_cast<int>(multiset.size()) != K) {
        detail::fail("simulator: selector returned ", multiset.size(), " clients, K = ", K);
      }
    }
    std::vector<int> distinct = multiset;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    RoundRecord rec;
    rec.round = t + 1;
    rec.sampled = multiset;
    rec.failed_upload.assign(N, '0');
    rec.failed_download.assign(N, '0');
    rec.failed_aggregation.assign(N, '0');
    rec.latency = opt.round_latency;

    std::vector<Blocks> common_of(N);
    std::vector<FailureFlags> flags(N);
    Blocks grads;
    for (int id : distinct) {
      const int i = id - 1;
      const ClientProfile& c = clients[i];
      const int cut = plan.cut_layers[i];
      Blocks w = join(local[i], common);
      const Dataset batch = data[i].subset(batch_rows(batch_seed, id, t, data[i].size(),
                                                      opt.batch_size));
      model.split_gradient(w, cut, batch, grads);
      for (int l = 0; l < L; ++l) {
        trace.max_layer_grad_sq[l] = std::max(trace.max_layer_grad_sq[l], squared_norm(grads[l]));
      }
      const FailureFlags f = failures.draw(c, t);
      flags[i] = f;
      rec.failed_upload[i] = f.upload ? '0' : '1';
      rec.failed_download[i] = f.download ? '0' : '1';
      rec.failed_aggregation[i] = f.aggregation ? '0' : '1';
      server_side_step(w, grads, cut, f.upload, sys.learning_rate, c.upload_failure);
      client_side_step(c, w, grads, cut, f.upload, f.download, sys.learning_rate);
      local[i] = head(w);
      common_of[i] = tail(w);
    }

    std::vector<Blocks> common_parts, head_parts;
    std::vector<bool> s_a;
    std::vector<int> cuts;
    for (int id : multiset) {
      common_parts.push_back(common_of[id - 1]);
      head_parts.push_back(local[id - 1]);
      s_a.push_back(flags[id - 1].aggregation);
      cuts.push_back(plan.cut_layers[id - 1]);
    }
    const bool delta = opt.form == AggregationForm::kDelta;
    if (!common.empty()) {
      common = delta ? aggregate_common_delta(common, common_parts, multiset, clients, plan.q)
                     : aggregate_common(common_parts, multiset, clients, plan.q);
    }
    const Blocks forged =
        delta ? aggregate_client_specific_delta(broadcast, head_parts, s_a, cuts, multiset,
                                                clients, plan.q)
              : aggregate_client_specific(head_parts, s_a, cuts, multiset, clients, plan.q);
    if (opt.record_discrepancy) {
      rec.discrepancy.resize(N);
      for (int i = 0; i < N; ++i) {
        double d = 0.0;
        for (int l = 0; l < Lc; ++l) d += squared_distance(forged[l], local[i][l]);
        rec.discrepancy[i] = d;
      }
    }

    Blocks evaluated_head;
    if ((t + 1) % I == 0) {
      broadcast = forged;
      std::fill(local.begin(), local.end(), broadcast);
      evaluated_head = broadcast;
    } else {
      // Unforged weighted average of the current client-specific models.
      std::vector<bool> all_ok(multiset.size(), true);
      std::vector<int> no_cut(multiset.size(), 0);
      evaluated_head =
          delta ? aggregate_client_specific_delta(broadcast, head_parts, all_ok, no_cut,
                                                  multiset, clients, plan.q)
                : aggregate_client_specific(head_parts, all_ok, no_cut, multiset, clients,
                                            plan.q);
    }
    const Blocks w_eval = join(evaluated_head, common);
    if (opt.record_grad_norm) {
      Blocks full_grad;
      rec.loss = model.loss_and_grad(w_eval, pooled, &full_grad);
      rec.grad_norm_sq = squared_norm(full_grad);
    } else {
      rec.loss = model.loss_and_grad(w_eval, pooled, nullptr);
    }
    trace.rounds.push_back(std::move(rec));
    if (t + 1 == sys.rounds) trace.final_model = w_eval;
  }
  trace.final_loss = trace.rounds.empty() ? 0.0 : trace.rounds.back().loss;
  return trace;
}

/// One row per round: round,loss,grad_norm_sq,sampled_ids,failures_u,
/// failures_d,failures_a,latency. Ids are ';'-joined; failure columns are
/// per-client bitstrings.
inline void write_trace(std::ostream& os, const SimulationTrace& trace) {
  os << "round,loss,grad_norm_sq,sampled_ids,failures_u,failures_d,failures_a,latency\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const RoundRecord& r : trace.rounds) {
    line.str("");
    line << r.round << ',' << r.loss << ',' << r.grad_norm_sq << ',';
    for (std::size_t k = 0; k < r.sampled.size(); ++k) line << (k ? ";" : "") << r.sampled[k];
    line << ',' << r.failed_upload << ',' << r.failed_download << ',' << r.failed_aggregation
         << ',' << r.latency << '\n';
    os << line.str();
  }
}

}  // namespace sflopt
