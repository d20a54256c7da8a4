#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "sflopt/bound.hpp"
#include "sflopt/core_types.hpp"
#include "sflopt/estimation.hpp"
#include "sflopt/latency.hpp"
#include "sflopt/model.hpp"
#include "sflopt/optimizer.hpp"
#include "sflopt/simulator.hpp"

namespace sflopt {

enum class Policy { kOmsOcs, kFmsOcs, kUniform, kWeighted, kRoundRobin, kRandomFixedSplit };

inline const std::vector<std::pair<Policy, std::string>>& policy_tags() {
  static const std::vector<std::pair<Policy, std::string>> tags = {
      {Policy::kOmsOcs, "oms-ocs"},       {Policy::kFmsOcs, "fms-ocs"},
      {Policy::kUniform, "uniform"},      {Policy::kWeighted, "weighted"},
      {Policy::kRoundRobin, "round-robin"}, {Policy::kRandomFixedSplit, "random-fixed-split"}};
  return tags;
}

inline std::string policy_tag(Policy p) {
  for (const auto& [policy, tag] : policy_tags()) {
    if (policy == p) return tag;
  }
  return "?";
}

/// Accepts the canonical tags plus the upper-case '+' spellings
/// (OMS+OCS, FMS+OCS) and "weighted-by-data".
inline Policy parse_policy(std::string tag) {
  std::transform(tag.begin(), tag.end(), tag.begin(), [](unsigned char c) {
    return c == '+' || c == '_' ? '-' : static_cast<char>(std::tolower(c));
  });
  if (tag == "weighted-by-data") tag = "weighted";
  for (const auto& [policy, name] : policy_tags()) {
    if (name == tag) return policy;
  }
  detail::fail("unknown policy tag '", tag, "'");
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct PopulationSpec {
  int clients = 10;
  int size_min = 60, size_max = 140;  // samples per client; weights follow
  Range upload{0.2, 0.6}, download{0.2, 0.6}, aggregation{0.2, 0.6};
  Range uplink{2e5, 2e6}, downlink{5e5, 5e6}, fed_uplink{2e5, 2e6};  // bytes/s
  Range compute{2e7, 2e8};                                           // flop/s
};

struct ModelSpec {
  int input_dim = 8;
  int classes = 6;
  std::vector<int> hidden = {16, 16, 16, 16, 16};
  double separation = 1.0;
  double noise = 1.0;
  bool iid = false;

  std::vector<int> dims() const {
    std::vector<int> d{input_dim};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(classes);
    return d;
  }
};

struct ExperimentConfig {
  PopulationSpec population;
  SystemConfig system;
  int batch_size = 32;
  std::uint64_t seed = 1;
  double server_speed = 2e9;   // flop/s
  double bytes_per_value = 4.0;
  ModelSpec model;
  Policy policy = Policy::kOmsOcs;
  int fixed_cut = 0;           // fms-ocs cut; 0 means L_c_min
  double noise_cv = 0.0;
  std::optional<ModelStatistics> stats;  // loaded; calibrated when absent
  CalibrationOptions calibration;
  std::vector<Policy> compare_policies;  // empty: every policy
  int compare_seeds = 1;

  ExperimentConfig() {
    system.num_clients = population.clients;
    system.sampled_per_round = 3;
    system.aggregation_interval = 1;
    system.learning_rate = 0.2;
    system.rounds = 100;
    system.latency_budget = 0.05;
    system.min_cut = 1;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || !std::isfinite(x)) fail("config: ", key, " expects a number, got '", v, "'");
  return x;
}

inline long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size()) fail("config: ", key, " expects an integer, got '", v, "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail("config: ", key, " expects true/false, got '", v, "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Vec parse_reals(const std::string& key, const std::string& v) {
  Vec out;
  for (const std::string& s : split_list(v)) out.push_back(parse_real(key, s));
  return out;
}

inline Range parse_range(const std::string& key, const std::string& v) {
  const Vec r = parse_reals(key, v);
  if (r.size() == 1) return {r[0], r[0]};
  if (r.size() != 2 || r[0] > r[1]) fail("config: ", key, " expects 'lo, hi' with lo <= hi");
  return {r[0], r[1]};
}

}  // namespace detail

/// Reads `key = value` lines; '#' starts a comment. Unknown keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
  using namespace detail;
  ExperimentConfig cfg;
  ModelStatistics stats;
  bool any_stats = false;
  std::set<std::string> stats_keys;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("config line ", line_no, ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    auto integer = [&] { return static_cast<int>(parse_integer(key, v)); };
    auto real = [&] { return parse_real(key, v); };
    auto range = [&] { return parse_range(key, v); };

    PopulationSpec& pop = cfg.population;
    SystemConfig& sys = cfg.system;
    if (key == "population.clients") pop.clients = integer();
    else if (key == "population.samples") {
      const Range r = range();
      pop.size_min = static_cast<int>(r.lo);
      pop.size_max = static_cast<int>(r.hi);
    }
    else if (key == "population.failure") pop.upload = pop.download = pop.aggregation = range();
    else if (key == "population.upload_failure") pop.upload = range();
    else if (key == "population.download_failure") pop.download = range();
    else if (key == "population.aggregation_failure") pop.aggregation = range();
    else if (key == "population.uplink_rate") pop.uplink = range();
    else if (key == "population.downlink_rate") pop.downlink = range();
    else if (key == "population.fed_uplink_rate") pop.fed_uplink = range();
    else if (key == "population.compute_speed") pop.compute = range();
    else if (key == "system.sampled_per_round") sys.sampled_per_round = integer();
    else if (key == "system.aggregation_interval") sys.aggregation_interval = integer();
    else if (key == "system.learning_rate") sys.learning_rate = real();
    else if (key == "system.rounds") sys.rounds = integer();
    else if (key == "system.latency_budget") sys.latency_budget = real();
    else if (key == "system.min_cut") sys.min_cut = integer();
    else if (key == "system.batch_size") cfg.batch_size = integer();
    else if (key == "system.seed") cfg.seed = static_cast<std::uint64_t>(parse_integer(key, v));
    else if (key == "system.server_speed") cfg.server_speed = real();
    else if (key == "system.bytes_per_value") cfg.bytes_per_value = real();
    else if (key == "model.input_dim") cfg.model.input_dim = integer();
    else if (key == "model.classes") cfg.model.classes = integer();
    else if (key == "model.hidden") {
      cfg.model.hidden.clear();
      for (double h : parse_reals(key, v)) cfg.model.hidden.push_back(static_cast<int>(h));
    }
    else if (key == "model.separation") cfg.model.separation = real();
    else if (key == "model.noise") cfg.model.noise = real();
    else if (key == "model.iid") cfg.model.iid = parse_bool(key, v);
    else if (key == "policy.name") cfg.policy = parse_policy(v);
    else if (key == "policy.fixed_cut") cfg.fixed_cut = integer();
    else if (key == "policy.noise_cv") cfg.noise_cv = real();
    else if (key == "policy.compare") {
      cfg.compare_policies.clear();
      for (const std::string& t : split_list(v)) cfg.compare_policies.push_back(parse_policy(t));
    }
    else if (key == "policy.compare_seeds") cfg.compare_seeds = integer();
    else if (key == "stats.sigma_sq") { stats.sigma_sq = parse_reals(key, v); any_stats = true; stats_keys.insert(key); }
    else if (key == "stats.g_sq") { stats.g_sq = parse_reals(key, v); any_stats = true; stats_keys.insert(key); }
    else if (key == "stats.beta") { stats.beta = real(); any_stats = true; stats_keys.insert(key); }
    else if (key == "stats.loss_gap") { stats.loss_gap = real(); any_stats = true; stats_keys.insert(key); }
    else if (key == "stats.calibration_rounds") cfg.calibration.rounds = integer();
    else if (key == "stats.local_steps") cfg.calibration.local_steps = integer();
    else if (key == "stats.epochs") cfg.calibration.epochs = integer();
    else if (key == "stats.checkpoints") cfg.calibration.checkpoints = integer();
    else if (key == "stats.learning_rate") cfg.calibration.learning_rate = real();
    else if (key == "stats.perturbation") cfg.calibration.perturbation = real();
    else fail("config line ", line_no, ": unknown key '", key, "'");
  }
  if (any_stats) {
    if (stats_keys.size() != 4) {
      fail("config: stats.sigma_sq, stats.g_sq, stats.beta and stats.loss_gap must be given together");
    }
    cfg.stats = stats;
  }
  cfg.system.num_clients = cfg.population.clients;
  cfg.calibration.batch_size = cfg.batch_size;
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::fail("cannot open config '", path, "'");
  return parse_config(in);
}

/// Checks what the parser cannot: ranges, sizes and cross-field limits.
inline void validate_config(const ExperimentConfig& cfg) {
  using detail::fail;
  const PopulationSpec& p = cfg.population;
  if (p.clients < 1) fail("config: population.clients must be >= 1");
  if (p.size_min < 1 || p.size_min > p.size_max) fail("config: population.samples must be 1 <= lo <= hi");
  for (const Range* r : {&p.upload, &p.download, &p.aggregation}) {
    if (!(r->lo >= 0.0 && r->hi < 1.0 && r->lo <= r->hi)) {
      fail("config: failure probability ranges must lie within [0, 1)");
    }
  }
  for (const Range* r : {&p.uplink, &p.downlink, &p.fed_uplink, &p.compute}) {
    if (!(r->lo > 0.0 && r->lo <= r->hi)) fail("config: rate ranges must be positive");
  }
  if (cfg.batch_size < 1) fail("config: system.batch_size must be >= 1");
  if (!(cfg.server_speed > 0.0 && cfg.bytes_per_value > 0.0)) {
    fail("config: server speed and bytes per value must be positive");
  }
  if (cfg.model.input_dim < 1 || cfg.model.classes < 2 ||
      std::any_of(cfg.model.hidden.begin(), cfg.model.hidden.end(), [](int h) { return h < 1; })) {
    fail("config: model widths must be positive and classes >= 2");
  }
  if (!(cfg.noise_cv >= 0.0)) fail("config: policy.noise_cv must be >= 0");
  if (cfg.compare_seeds < 1) fail("config: policy.compare_seeds must be >= 1");
  const int L = static_cast<int>(cfg.model.hidden.size()) + 1;
  validate_system(cfg.system, L);
  if (cfg.fixed_cut != 0 && (cfg.fixed_cut < cfg.system.min_cut || cfg.fixed_cut > L)) {
    fail("config: policy.fixed_cut outside [min_cut, L]");
  }
  if (cfg.stats) {
    validate_statistics(*cfg.stats);
    if (cfg.stats->num_layers() != L) fail("config: stats describe ", cfg.stats->num_layers(), " layers, model has ", L);
  }
}

namespace detail {

inline double draw(const Range& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace detail

struct GeneratedPopulation {
  std::vector<ClientProfile> clients;
  std::vector<int> sizes;  // samples per client
};

/// Uniform draws from the configured ranges; weights are sample shares.
inline GeneratedPopulation generate_population(const PopulationSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x909ULL));
  GeneratedPopulation out;
  std::uniform_int_distribution<int> size(spec.size_min, spec.size_max);
  long long total = 0;
  for (int i = 0; i < spec.clients; ++i) {
    ClientProfile c;
    c.id = i + 1;
    c.upload_failure = detail::draw(spec.upload, rng);
    c.download_failure = detail::draw(spec.download, rng);
    c.aggregation_failure = detail::draw(spec.aggregation, rng);
    c.uplink_rate = detail::draw(spec.uplink, rng);
    c.downlink_rate = detail::draw(spec.downlink, rng);
    c.fed_uplink_rate = detail::draw(spec.fed_uplink, rng);
    c.compute_speed = detail::draw(spec.compute, rng);
    out.sizes.push_back(size(rng));
    total += out.sizes.back();
    out.clients.push_back(c);
  }
  // Weights are normalized so that their floating-point sum is 1 within 1e-9.
  for (int i = 0; i < spec.clients; ++i) {
    out.clients[i].weight = static_cast<double>(out.sizes[i]) / static_cast<double>(total);
  }
  return out;
}

/// Activation sizes and forward+backward work derived from the layer
/// widths: cut j sends batch*width_j values; layer l costs
/// 6*batch*in*out flops.
inline LatencyProfile latency_profile_for(const std::vector<int>& dims, int batch_size,
                                          double bytes_per_value, double server_speed) {
  LatencyProfile prof;
  double work = 0.0;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    prof.activation_size.push_back(batch_size * dims[l] * bytes_per_value);
    work += 6.0 * batch_size * dims[l - 1] * dims[l];
    prof.client_work_prefix.push_back(work);
  }
  prof.total_work = work;
  prof.server_speed = server_speed;
  return prof;
}

/// Copies of the clients with p, phi, a multiplied by (1 + cv*Z), Z standard
/// normal, clamped to [0, 0.99]. Only the optimizer sees these.
inline std::vector<ClientProfile> perturb_probabilities(std::vector<ClientProfile> clients,
                                                        double cv, std::uint64_t seed) {
  if (cv == 0.0) return clients;
  std::mt19937_64 rng(derive_seed(seed, 0x0153ULL));
  std::normal_distribution<double> z(0.0, 1.0);
  auto noisy = [&](double p) { return std::clamp(p * (1.0 + cv * z(rng)), 0.0, 0.99); };
  for (ClientProfile& c : clients) {
    c.upload_failure = noisy(c.upload_failure);
    c.download_failure = noisy(c.download_failure);
    c.aggregation_failure = noisy(c.aggregation_failure);
  }
  return clients;
}

/// Cyclic blocks of K over a permutation that is reshuffled every full pass.
inline ClientSelector round_robin_selector(int N, int K, std::uint64_t seed) {
  struct State {
    std::mt19937_64 rng;
    std::vector<int> order;
  };
  auto st = std::make_shared<State>(State{std::mt19937_64(derive_seed(seed, 0x7070ULL)), {}});
  return [st, N, K](long long window, std::mt19937_64&) {
    const std::size_t need = static_cast<std::size_t>(window + 1) * K;
    while (st->order.size() < need) {
      std::vector<int> pass(N);
      std::iota(pass.begin(), pass.end(), 1);
      std::shuffle(pass.begin(), pass.end(), st->rng);
      st->order.insert(st->order.end(), pass.begin(), pass.end());
    }
    return std::vector<int>(st->order.begin() + window * K, st->order.begin() + (window + 1) * K);
  };
}

/// One uniform-random cut per client in [L_c_min, L], fixed for the run.
inline std::vector<int> random_fixed_cuts(int N, int min_cut, int L, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0xc07ULL));
  std::uniform_int_distribution<int> cut(min_cut, L);
  std::vector<int> cuts(N);
  for (int& c : cuts) c = cut(rng);
  return cuts;
}

/// Everything an experiment needs before the simulation: the population,
/// its data, the model and the statistics.
struct Setup {
  ExperimentConfig config;
  Population population;  // true probabilities
  std::vector<int> sizes;
  std::vector<Dataset> data;
  Mlp model{{1, 2}};
  LatencyProfile latency;
  std::optional<EstimationReport> calibration;
};

inline Setup prepare(const ExperimentConfig& cfg) {
  validate_config(cfg);
  Setup s;
  s.config = cfg;
  s.model = Mlp(cfg.model.dims());
  const GeneratedPopulation gen = generate_population(cfg.population, cfg.seed);
  s.sizes = gen.sizes;
  ClusterTask task;
  task.dim = cfg.model.input_dim;
  task.classes = cfg.model.classes;
  task.separation = cfg.model.separation;
  task.noise = cfg.model.noise;
  s.data = make_client_data(task, gen.sizes, cfg.model.iid, derive_seed(cfg.seed, 0xda7aULL));
  s.latency = latency_profile_for(cfg.model.dims(), cfg.batch_size, cfg.bytes_per_value,
                                  cfg.server_speed);
  ModelStatistics stats;
  if (cfg.stats) {
    stats = *cfg.stats;
  } else {
    const Blocks w0 = s.model.init(derive_seed(cfg.seed, 0xca1ULL));
    s.calibration = calibrate(s.model, w0, s.data, cfg.calibration, derive_seed(cfg.seed, 0xca2ULL));
    stats = s.calibration->statistics();
  }
  s.population = validate_population(gen.clients, stats, cfg.system);
  return s;
}

struct PolicyPlan {
  Policy policy = Policy::kOmsOcs;
  SamplingPlan plan;
  std::optional<OptimizerResult> optimizer;  // set for optimized policies
  BoundBreakdown bound;                      // at the true probabilities
  double expected_latency = 0.0;
};

/// The (q, cuts) a policy prescribes. Optimized policies see probabilities
/// perturbed by the configured noise; the reported bound uses the truth.
inline PolicyPlan select_plan(const Setup& s, Policy policy) {
  const ExperimentConfig& cfg = s.config;
  const auto& truth = s.population.clients;
  const int N = static_cast<int>(truth.size());
  const int L = s.population.stats.num_layers();
  const std::vector<ClientProfile> seen = perturb_probabilities(truth, cfg.noise_cv, cfg.seed);
  const std::vector<int> random_cuts = random_fixed_cuts(N, cfg.system.min_cut, L, cfg.seed);

  PolicyPlan out;
  out.policy = policy;
  switch (policy) {
    case Policy::kOmsOcs:
      out.optimizer = optimize(seen, s.population.stats, s.latency, cfg.system);
      break;
    case Policy::kFmsOcs: {
      const int cut = cfg.fixed_cut ? cfg.fixed_cut : cfg.system.min_cut;
      out.optimizer = optimize_fixed_cuts(seen, s.population.stats, s.latency, cfg.system,
                                          std::vector<int>(N, cut));
      break;
    }
    case Policy::kRandomFixedSplit:
      out.optimizer = optimize_fixed_cuts(seen, s.population.stats, s.latency, cfg.system,
                                          random_cuts);
      break;
    case Policy::kUniform:
    case Policy::kRoundRobin:
      out.plan.q.assign(N, 1.0 / N);
      break;
    case Policy::kWeighted:
      for (const ClientProfile& c : truth) out.plan.q.push_back(c.weight);
      break;
  }
  if (out.optimizer) {
    out.plan = out.optimizer->plan;
  } else {
    out.plan.cut_layers = random_cuts;
    out.plan.max_cut = *std::max_element(random_cuts.begin(), random_cuts.end());
  }
  out.plan.aux_M = std::max(out.plan.aux_M, max_weighted_ratio(out.plan.q, truth));
  out.bound = convergence_upper_bound(out.plan, truth, s.population.stats, cfg.system);
  out.expected_latency = expected_round_latency(out.plan, truth, s.latency, cfg.system);
  return out;
}

struct ExperimentResult {
  PolicyPlan plan;
  SimulationTrace trace;
};

inline ExperimentResult simulate_policy(const Setup& s, Policy policy,
                                        bool record_grad_norm = true) {
  ExperimentResult r;
  r.plan = select_plan(s, policy);
  SimulationOptions opt;
  opt.batch_size = s.config.batch_size;
  opt.round_latency = r.plan.expected_latency;
  opt.record_grad_norm = record_grad_norm;
  ClientSelector selector;
  if (policy == Policy::kRoundRobin) {
    selector = round_robin_selector(s.config.system.num_clients,
                                    s.config.system.sampled_per_round, s.config.seed);
  }
  r.trace = run_training(s.population, r.plan.plan, s.model, s.data,
                         derive_seed(s.config.seed, 0x51aULL), opt, selector);
  return r;
}

/// generate -> statistics -> plan -> simulate with the true probabilities.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const Setup s = prepare(cfg);
  return simulate_policy(s, cfg.policy);
}

// ---- artifact writers ----

namespace detail {

inline std::string real_text(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string join_reals(const Vec& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + real_text(v[i]);
  return out;
}

}  // namespace detail

/// key = value header followed by a client,q,cut table.
inline void write_plan(std::ostream& os, const PolicyPlan& p) {
  using detail::real_text;
  os << "policy = " << policy_tag(p.policy) << '\n';
  os << "max_cut = " << p.plan.max_cut << '\n';
  os << "aux_M = " << real_text(p.plan.aux_M) << '\n';
  os << "bound = " << real_text(p.bound.total) << '\n';
  os << "expected_latency = " << real_text(p.expected_latency) << '\n';
  if (p.optimizer) {
    os << "lambda = " << real_text(p.optimizer->lambda) << '\n';
    os << "nu = " << real_text(p.optimizer->nu) << '\n';
  }
  os << "client,q,cut\n";
  for (std::size_t i = 0; i < p.plan.q.size(); ++i) {
    os << i + 1 << ',' << real_text(p.plan.q[i]) << ',' << p.plan.cut_layers[i] << '\n';
  }
}

/// Statistics in the config's stats.* syntax, loadable by parse_config.
inline void write_statistics(std::ostream& os, const ModelStatistics& st,
                             const std::optional<EstimationReport>& rep) {
  using detail::join_reals;
  using detail::real_text;
  if (rep) {
    os << "# beta_local = " << real_text(rep->beta_local) << '\n';
    os << "# beta_cross = " << real_text(rep->beta_cross)
       << (rep->cross_defined ? "" : " (undefined: fewer than two distinct models)") << '\n';
    os << "# calibration_rounds = " << rep->calibration_rounds << '\n';
    if (rep->single_batch) os << "# single batch per epoch: variances are 0\n";
  }
  os << "stats.sigma_sq = " << join_reals(st.sigma_sq) << '\n';
  os << "stats.g_sq = " << join_reals(st.g_sq) << '\n';
  os << "stats.beta = " << real_text(st.beta) << '\n';
  os << "stats.loss_gap = " << real_text(st.loss_gap) << '\n';
}

inline void write_summary(std::ostream& os, const ExperimentResult& r, std::uint64_t seed) {
  using detail::real_text;
  double cumulative = 0.0;
  for (const RoundRecord& rec : r.trace.rounds) cumulative += rec.latency;
  os << "policy,seed,final_loss,bound,expected_round_latency,cumulative_latency,rounds\n";
  os << policy_tag(r.plan.policy) << ',' << seed << ',' << real_text(r.trace.final_loss) << ','
     << real_text(r.plan.bound.total) << ',' << real_text(r.plan.expected_latency) << ','
     << real_text(cumulative) << ',' << r.trace.rounds.size() << '\n';
}

struct ComparisonRow {
  Policy policy = Policy::kOmsOcs;
  std::vector<double> final_losses;  // one per seed
  double median_final_loss = 0.0;
  double bound = 0.0;                // first seed
  double expected_latency = 0.0;     // first seed
  std::string error;                 // non-empty when the policy was infeasible
};

struct Comparison {
  std::vector<std::uint64_t> seeds;
  std::vector<ComparisonRow> rows;
  // policy, seed, round, loss, cumulative latency
  std::vector<std::tuple<Policy, std::uint64_t, long long, double, double>> curves;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Runs each policy on seeds seed, seed+1, ...; every policy sees the same
/// population, data and statistics for a given seed.
inline Comparison compare_policies(const ExperimentConfig& cfg, std::vector<Policy> policies,
                                   int seeds) {
  if (policies.empty()) {
    for (const auto& [p, tag] : policy_tags()) policies.push_back(p);
  }
  Comparison out;
  out.rows.resize(policies.size());
  for (std::size_t k = 0; k < policies.size(); ++k) out.rows[k].policy = policies[k];
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(s);
    out.seeds.push_back(c.seed);
    const Setup setup = prepare(c);
    for (std::size_t k = 0; k < policies.size(); ++k) {
      ComparisonRow& row = out.rows[k];
      if (!row.error.empty()) continue;
      try {
        const ExperimentResult r = simulate_policy(setup, policies[k], false);
        row.final_losses.push_back(r.trace.final_loss);
        if (s == 0) {
          row.bound = r.plan.bound.total;
          row.expected_latency = r.plan.expected_latency;
        }
        double cumulative = 0.0;
        for (const RoundRecord& rec : r.trace.rounds) {
          cumulative += rec.latency;
          out.curves.emplace_back(policies[k], c.seed, rec.round, rec.loss, cumulative);
        }
      } catch (const InfeasibleError& e) {
        row.error = e.what();
        row.final_losses.clear();
      }
    }
  }
  for (ComparisonRow& row : out.rows) row.median_final_loss = median(row.final_losses);
  return out;
}

inline void write_comparison(std::ostream& os, const Comparison& c) {
  using detail::real_text;
  os << "policy,median_final_loss,bound,expected_round_latency,final_losses,status\n";
  for (const ComparisonRow& r : c.rows) {
    os << policy_tag(r.policy) << ',' << real_text(r.median_final_loss) << ','
       << real_text(r.bound) << ',' << real_text(r.expected_latency) << ',';
    for (std::size_t k = 0; k < r.final_losses.size(); ++k) {
      os << (k ? ";" : "") << real_text(r.final_losses[k]);
    }
    os << ',' << (r.error.empty() ? "ok" : "infeasible: " + r.error) << '\n';
  }
}

inline void write_curves(std::ostream& os, const Comparison& c) {
  using detail::real_text;
  os << "policy,seed,round,loss,cumulative_latency\n";
  for (const auto& [p, seed, round, loss, lat] : c.curves) {
    os << policy_tag(p) << ',' << seed << ',' << round << ',' << real_text(loss) << ','
       << real_text(lat) << '\n';
  }
}

// ---- command-line verbs ----

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<std::string> policy;
  std::optional<double> noise_cv;
};

inline ExperimentConfig config_for(const CliOptions& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.policy) cfg.policy = parse_policy(*o.policy);
  if (o.noise_cv) cfg.noise_cv = *o.noise_cv;
  return cfg;
}

/// Runs optimize | simulate | calibrate | compare and returns the files
/// written under o.out.
inline std::vector<std::string> run_verb(const std::string& verb, const CliOptions& o) {
  namespace fs = std::filesystem;
  const ExperimentConfig cfg = config_for(o);
  fs::create_directories(o.out);
  std::vector<std::string> written;
  auto open = [&](const std::string& name) {
    const std::string path = (fs::path(o.out) / name).string();
    written.push_back(path);
    std::ofstream f(path, std::ios::binary);
    if (!f) detail::fail("cannot write '", path, "'");
    return f;
  };

  if (verb == "optimize") {
    const Setup s = prepare(cfg);
    auto f = open("plan.txt");
    write_plan(f, select_plan(s, cfg.policy));
  } else if (verb == "simulate") {
    const Setup s = prepare(cfg);
    const ExperimentResult r = simulate_policy(s, cfg.policy);
    auto plan = open("plan.txt");
    write_plan(plan, r.plan);
    auto trace = open("trace.csv");
    write_trace(trace, r.trace);
    auto summary = open("summary.csv");
    write_summary(summary, r, cfg.seed);
  } else if (verb == "calibrate") {
    ExperimentConfig c = cfg;
    c.stats.reset();
    const Setup s = prepare(c);
    auto f = open("stats.txt");
    write_statistics(f, s.population.stats, s.calibration);
  } else if (verb == "compare") {
    const Comparison cmp = compare_policies(cfg, cfg.compare_policies, cfg.compare_seeds);
    auto table = open("comparison.csv");
    write_comparison(table, cmp);
    auto curves = open("curves.csv");
    write_curves(curves, cmp);
  } else {
    detail::fail("unknown verb '", verb, "'");
  }
  return written;
}

}  // namespace sflopt
