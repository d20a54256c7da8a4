#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sflopt/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Client sampling and model splitting for split federated learning"};
  app.require_subcommand(1);

  sflopt::CliOptions opt;
  std::uint64_t seed = 0;
  std::string policy;
  double noise_cv = 0.0;

  const std::pair<const char*, const char*> verbs[] = {
      {"optimize", "Write the sampling plan of the configured policy"},
      {"simulate", "Plan, train with failure injection, write trace and summary"},
      {"calibrate", "Estimate model statistics and write them in config syntax"},
      {"compare", "Run several policies on shared seeds and tabulate final losses"},
  };
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "Experiment config (key = value)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Overrides system.seed");
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    sub->add_option("--policy", policy,
                    "oms-ocs | fms-ocs | uniform | weighted | round-robin | random-fixed-split");
    sub->add_option("--noise-cv", noise_cv, "Overrides policy.noise_cv")
        ->check(CLI::NonNegativeNumber);
  }

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--policy")) opt.policy = policy;
  if (sub->count("--noise-cv")) opt.noise_cv = noise_cv;

  try {
    for (const std::string& path : sflopt::run_verb(sub->get_name(), opt)) {
      std::cout << path << '\n';
    }
  } catch (const sflopt::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
