// dtql: train and compare tabular schedulers on generated offloading
// instances.
//
//   dtql run    --algo dteql --n-tasks 6 --phi 20 --episodes 25600 --out out/
//   dtql oracle --n-tasks 8 --seed 3
//   dtql sweep  --config sweep.cfg

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include <dtql/harness.hpp>

namespace {

using namespace dtql;

// Registers `--key` for every config key. Values are kept as strings and
// applied after the config file so that the command line wins.
struct KeyOptions {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  bool no_normalize{false};
  bool parallel{false};
  std::string config_file;

  void attach(CLI::App* app, bool with_config) {
    if (with_config) app->add_option("--config", config_file, "key = value config file");
    for (const auto& key : config_keys()) {
      if (key == "no-normalize") {
        options[key] = app->add_flag("--no-normalize", no_normalize,
                                     "skip the brute-force oracle and reward normalization");
      } else if (key == "parallel") {
        options[key] = app->add_flag("--parallel", parallel, "run dtaql twin agents on threads");
      } else {
        options[key] = app->add_option("--" + key, values[key]);
      }
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      if (key == "no-normalize") apply_config_entry(cfg, key, no_normalize ? "true" : "false");
      else if (key == "parallel") apply_config_entry(cfg, key, parallel ? "true" : "false");
      else apply_config_entry(cfg, key, values.at(key));
    }
    return cfg;
  }
};

void print_summary(const std::vector<ExperimentResult>& results) {
  write_summary(std::cout, [&] {
    std::vector<SummaryRow> rows;
    for (const auto& r : results) rows.push_back(r.row);
    return rows;
  }());
}

int cmd_run(const KeyOptions& opts) {
  const auto cfg = opts.resolve();
  std::vector<ExperimentResult> results{run_experiment(cfg)};
  write_reports(results, cfg.out);
  print_summary(results);
  return 0;
}

int cmd_sweep(const KeyOptions& opts) {
  const auto cfg = opts.resolve();
  const auto results = run_sweep(cfg);
  write_reports(results, cfg.out);
  print_summary(results);
  return 0;
}

int cmd_oracle(const KeyOptions& opts) {
  const auto cfg = opts.resolve();
  validate(cfg.dist);
  const auto inst = generate_instance(cfg.n_tasks, cfg.dist, cfg.base_seed);
  const auto [sched, rep] = brute_force_optimal(inst, cfg.oracle_limit);
  std::cout << "order:";
  for (auto i : sched.order) std::cout << ' ' << i;
  std::cout << '\n';
  std::printf("total_cost: %.6g\nmisses: %zu\navg_delay: %.6g\n", rep.total_cost, rep.misses,
              rep.avg_delay);
  std::cout << "completion:";
  for (double c : rep.completion) std::printf(" %.6g", c);
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-assisted tabular Q-learning for edge task scheduling"};
  app.require_subcommand(1);

  KeyOptions run_opts, oracle_opts, sweep_opts;
  auto* run = app.add_subcommand("run", "train one algorithm over a batch of seeded instances");
  run_opts.attach(run, true);
  auto* oracle = app.add_subcommand("oracle", "print the brute-force optimal schedule");
  oracle_opts.attach(oracle, true);
  auto* sweep = app.add_subcommand("sweep", "run the algo x phi grid from sweep-algos/sweep-phis");
  sweep_opts.attach(sweep, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*oracle) return cmd_oracle(oracle_opts);
    if (*sweep) return cmd_sweep(sweep_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
