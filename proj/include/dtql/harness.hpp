#pragma once

// Experiment runner: seeded instance batches, oracle normalization,
// convergence detection, aggregation and CSV reports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "algorithms.hpp"
#include "error.hpp"
#include "mdp_env.hpp"
#include "qtable.hpp"
#include "sched_core.hpp"

namespace dtql {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  Algo algo{Algo::dteql};
  std::size_t n_tasks{6};
  std::size_t phi{20};
  std::size_t delta{512};
  std::size_t episodes{25600};
  std::size_t num_instances{20};
  std::uint64_t base_seed{1};
  DistParams dist{};
  double lr{0.1};
  double gamma{1.0};
  double eps_min{0.1};
  double beta{5000.0};
  std::size_t eval_interval{8};
  std::size_t window{10};
  double tolerance{0.01};
  std::string out{"out"};
  bool normalize{true};
  std::size_t oracle_limit{kDefaultOracleLimit};
  bool parallel{false};
  std::size_t jobs{0};  // instance-level workers; 0 = hardware concurrency
  // Grid for the sweep command.
  std::vector<Algo> sweep_algos{Algo::ql, Algo::dtaql, Algo::dteql};
  std::vector<std::size_t> sweep_phis{5, 10, 20, 40};

  HyperParams hyperparams() const {
    HyperParams hp;
    hp.lr = lr;
    hp.gamma = gamma;
    hp.eps_min = eps_min;
    hp.beta = beta;
    hp.phi = algo == Algo::ql ? 0 : phi;
    hp.delta = delta;
    hp.episodes = episodes;
    return hp;
  }
};

inline void validate(const ExperimentConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(c.n_tasks, "n-tasks");
  positive(c.episodes, "episodes");
  positive(c.num_instances, "instances");
  positive(c.eval_interval, "eval-interval");
  positive(c.window, "window");
  positive(c.delta, "delta");
  if (c.algo != Algo::ql) positive(c.phi, "phi");
  if (!(c.tolerance > 0.0 && c.tolerance < 1.0)) throw ConfigError("tolerance must be in (0, 1)");
  if (c.n_tasks > kMaxTasks)
    throw ConfigError("n-tasks must be at most " + std::to_string(kMaxTasks));
  validate(c.dist);
  validate(c.hyperparams());
}

// ---------------------------------------------------------------------------
// Config file / CLI keys. Every key is also a `--key` flag of the CLI.

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "algo",          "n-tasks",        "phi",          "delta",          "episodes",
      "instances",     "seed",           "out",          "no-normalize",   "eval-interval",
      "window",        "tolerance",      "lr",           "gamma",          "eps-min",
      "beta",          "rate",           "cpu-freq",     "penalty",        "data-min",
      "data-max",      "complexity-min", "complexity-max", "deadline-min", "deadline-max",
      "oracle-limit",  "parallel",       "jobs",         "sweep-algos",    "sweep-phis"};
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v.empty()) return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
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

}  // namespace detail

inline void apply_config_entry(ExperimentConfig& c, const std::string& key,
                               const std::string& value) {
  using namespace detail;
  const auto& v = value;
  if (key == "algo") c.algo = parse_algo(v);
  else if (key == "n-tasks") c.n_tasks = parse_count(key, v);
  else if (key == "phi") c.phi = parse_count(key, v);
  else if (key == "delta") c.delta = parse_count(key, v);
  else if (key == "episodes") c.episodes = parse_count(key, v);
  else if (key == "instances") c.num_instances = parse_count(key, v);
  else if (key == "seed") c.base_seed = parse_count(key, v);
  else if (key == "out") c.out = v;
  else if (key == "no-normalize") c.normalize = !parse_bool(key, v);
  else if (key == "eval-interval") c.eval_interval = parse_count(key, v);
  else if (key == "window") c.window = parse_count(key, v);
  else if (key == "tolerance") c.tolerance = parse_real(key, v);
  else if (key == "lr") c.lr = parse_real(key, v);
  else if (key == "gamma") c.gamma = parse_real(key, v);
  else if (key == "eps-min") c.eps_min = parse_real(key, v);
  else if (key == "beta") c.beta = parse_real(key, v);
  else if (key == "rate") c.dist.rate = parse_real(key, v);
  else if (key == "cpu-freq") c.dist.cpu_freq = parse_real(key, v);
  else if (key == "penalty") c.dist.penalty = parse_real(key, v);
  else if (key == "data-min") c.dist.data_min = parse_real(key, v);
  else if (key == "data-max") c.dist.data_max = parse_real(key, v);
  else if (key == "complexity-min") c.dist.complexity_min = parse_real(key, v);
  else if (key == "complexity-max") c.dist.complexity_max = parse_real(key, v);
  else if (key == "deadline-min") c.dist.deadline_min = parse_real(key, v);
  else if (key == "deadline-max") c.dist.deadline_max = parse_real(key, v);
  else if (key == "oracle-limit") c.oracle_limit = parse_count(key, v);
  else if (key == "parallel") c.parallel = parse_bool(key, v);
  else if (key == "jobs") c.jobs = parse_count(key, v);
  else if (key == "sweep-algos") {
    c.sweep_algos.clear();
    for (const auto& a : split_list(v)) c.sweep_algos.push_back(parse_algo(a));
  } else if (key == "sweep-phis") {
    c.sweep_phis.clear();
    for (const auto& p : split_list(v)) c.sweep_phis.push_back(parse_count(key, p));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

// Flat `key = value` lines; `#` starts a comment.
inline void apply_config_text(ExperimentConfig& c, std::istream& in,
                              const std::string& origin = "<config>") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_config_entry(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(ExperimentConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  apply_config_text(c, in, path.string());
}

// ---------------------------------------------------------------------------
// Metrics

// Smallest evaluated episode from which every later evaluation stays within
// (1 + tolerance) of the best cost among the final `window` evaluations. The
// stable tail must itself cover at least `window` evaluations; otherwise the
// run has not converged.
inline std::optional<std::size_t> convergence_time(const std::vector<EvalRecord>& trace,
                                                   std::size_t window, double tolerance) {
  detail::require(!trace.empty(), "convergence_time: empty trace");
  detail::require(window >= 1, "convergence_time: window must be positive");
  const std::size_t n = trace.size();
  const std::size_t tail = std::min(window, n);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = n - tail; i < n; ++i) best = std::min(best, trace[i].total_cost);
  const double bound = best * (1.0 + tolerance);

  std::size_t k = n;
  while (k > 0 && trace[k - 1].total_cost <= bound) --k;
  if (n - k < tail) return std::nullopt;
  return trace[k].episode;
}

// First evaluated episode after which every evaluation matches `target`
// within relative tolerance `rel`.
inline std::optional<std::size_t> episodes_to_target(const std::vector<EvalRecord>& trace,
                                                     double target, double rel = 1e-9) {
  std::size_t k = trace.size();
  while (k > 0 && std::abs(trace[k - 1].total_cost - target) <= rel * std::abs(target)) --k;
  if (k == trace.size()) return std::nullopt;
  return trace[k].episode;
}

inline double normalized_reward(double achieved_cost, double oracle_cost) {
  detail::require(achieved_cost > 0.0 && oracle_cost > 0.0,
                  "normalized_reward: costs must be positive");
  // A tiny relative slack absorbs summation-order noise between permutations
  // of equal cost.
  if (achieved_cost < oracle_cost * (1.0 - 1e-12))
    throw ContractViolation("normalized_reward: achieved cost " + std::to_string(achieved_cost) +
                            " beats the oracle " + std::to_string(oracle_cost) +
                            "; oracle or simulator bug");
  return std::min(1.0, oracle_cost / achieved_cost);
}

// Median with "not converged" ordered last; nullopt when the median lands on
// a non-converged run.
inline std::optional<double> median_convergence(std::vector<std::optional<std::size_t>> xs) {
  if (xs.empty()) return std::nullopt;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> v;
  v.reserve(xs.size());
  for (const auto& x : xs) v.push_back(x ? static_cast<double>(*x) : inf);
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  const double m = n % 2 ? v[n / 2] : (v[n / 2 - 1] == inf || v[n / 2] == inf)
                                          ? inf
                                          : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (m == inf) return std::nullopt;
  return m;
}

// ---------------------------------------------------------------------------
// Experiments

struct RunRecord {
  Algo algo{Algo::ql};
  std::size_t phi{0};
  std::uint64_t seed{0};  // instance seed
  std::optional<double> oracle_cost;
  ScheduleReport final_report;
  std::optional<std::size_t> convergence;
  TrainingTrace trace;
};

struct SummaryRow {
  std::string algo;
  std::size_t phi{0};
  std::size_t delta{0};
  std::size_t n_tasks{0};
  std::size_t seeds{0};
  double normalized_reward{std::numeric_limits<double>::quiet_NaN()};
  double miss_ratio{0.0};
  double avg_delay{0.0};
  std::optional<double> convergence_episodes;
};

struct ExperimentResult {
  SummaryRow row;
  std::vector<RunRecord> runs;
};

inline std::uint64_t instance_seed(const ExperimentConfig& c, std::size_t k) {
  return c.base_seed + k;
}

inline std::uint64_t training_seed(std::uint64_t inst_seed) {
  return derive_seed(inst_seed, 0x747261696eull);
}

// Runs fn(0..n-1) on up to `jobs` threads; results must be written by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n && !failed;) {
          try {
            fn(i);
          } catch (...) {
            if (!failed.exchange(true)) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

inline RunRecord run_single(const ExperimentConfig& c, std::size_t k) {
  RunRecord r;
  r.algo = c.algo;
  r.phi = c.algo == Algo::ql ? 0 : c.phi;
  r.seed = instance_seed(c, k);
  Environment env(generate_instance(c.n_tasks, c.dist, r.seed));
  if (c.normalize) r.oracle_cost = brute_force_optimal(env.instance(), c.oracle_limit).second.total_cost;

  TrainOptions opts;
  opts.eval_interval = c.eval_interval;
  opts.parallel = c.parallel;
  auto result = train(c.algo, env, c.hyperparams(), training_seed(r.seed), opts);
  r.final_report = evaluate_policy(result.policy, env);
  r.trace = std::move(result.trace);
  if (!r.trace.records.empty()) r.convergence = convergence_time(r.trace.records, c.window, c.tolerance);
  return r;
}

inline SummaryRow summarize(const ExperimentConfig& c, const std::vector<RunRecord>& runs) {
  SummaryRow row;
  row.algo = to_string(c.algo);
  row.phi = c.algo == Algo::ql ? 0 : c.phi;
  row.delta = c.delta;
  row.n_tasks = c.n_tasks;
  row.seeds = runs.size();
  if (runs.empty()) return row;
  double reward = 0.0, delay = 0.0;
  std::size_t misses = 0;
  std::vector<std::optional<std::size_t>> conv;
  for (const auto& r : runs) {
    if (r.oracle_cost) reward += normalized_reward(r.final_report.total_cost, *r.oracle_cost);
    delay += r.final_report.avg_delay;
    misses += r.final_report.misses;
    conv.push_back(r.convergence);
  }
  const double m = static_cast<double>(runs.size());
  if (c.normalize) row.normalized_reward = reward / m;
  row.avg_delay = delay / m;
  row.miss_ratio = static_cast<double>(misses) / (m * static_cast<double>(c.n_tasks));
  row.convergence_episodes = median_convergence(std::move(conv));
  return row;
}

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  validate(c);
  if (c.normalize && c.n_tasks > c.oracle_limit) {
    throw OracleInfeasible("brute-force oracle infeasible at n-tasks=" + std::to_string(c.n_tasks) +
                           " (limit " + std::to_string(c.oracle_limit) +
                           "); rerun with --no-normalize or raise --oracle-limit");
  }
  ExperimentResult out;
  out.runs.resize(c.num_instances);
  parallel_for(c.num_instances, c.jobs, [&](std::size_t k) { out.runs[k] = run_single(c, k); });
  out.row = summarize(c, out.runs);
  return out;
}

// One ExperimentResult per (algo, phi) cell; ql ignores the phi axis.
inline std::vector<ExperimentResult> run_sweep(const ExperimentConfig& base) {
  std::vector<ExperimentResult> out;
  for (const auto algo : base.sweep_algos) {
    if (algo == Algo::ql) {
      auto c = base;
      c.algo = algo;
      out.push_back(run_experiment(c));
      continue;
    }
    for (const auto phi : base.sweep_phis) {
      auto c = base;
      c.algo = algo;
      c.phi = phi;
      out.push_back(run_experiment(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kSummaryHeader =
    "algo,phi,delta,n_tasks,seeds,normalized_reward,miss_ratio,avg_delay,convergence_episodes";
inline constexpr const char* kTraceHeader =
    "episode,epsilon,total_cost,normalized_reward,misses,avg_delay";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string summary_line(const SummaryRow& r) {
  std::string s = r.algo + ',' + std::to_string(r.phi) + ',' + std::to_string(r.delta) + ',' +
                  std::to_string(r.n_tasks) + ',' + std::to_string(r.seeds) + ',' +
                  format_real(r.normalized_reward) + ',' + format_real(r.miss_ratio) + ',' +
                  format_real(r.avg_delay) + ',';
  s += r.convergence_episodes ? format_real(*r.convergence_episodes) : "not converged";
  return s;
}

inline std::string trace_filename(const RunRecord& r) {
  return "trace_" + to_string(r.algo) + "_" + std::to_string(r.phi) + "_" +
         std::to_string(r.seed) + ".csv";
}

inline void write_trace(std::ostream& os, const RunRecord& r) {
  os << kTraceHeader << '\n';
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& e : r.trace.records) {
    const double norm = r.oracle_cost ? normalized_reward(e.total_cost, *r.oracle_cost) : nan;
    os << e.episode << ',' << format_real(e.epsilon) << ',' << format_real(e.total_cost) << ','
       << format_real(norm) << ',' << e.misses << ',' << format_real(e.avg_delay) << '\n';
  }
}

inline void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << kSummaryHeader << '\n';
  for (const auto& r : rows) os << summary_line(r) << '\n';
}

inline void write_reports(const std::vector<SummaryRow>& rows, const std::vector<RunRecord>& runs,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  auto write_file = [](const std::filesystem::path& path, auto&& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    body(os);
    os.flush();
    if (!os) throw IoError("write failed for " + path.string());
  };
  write_file(dir / "summary.csv", [&](std::ostream& os) { write_summary(os, rows); });
  for (const auto& r : runs)
    write_file(dir / trace_filename(r), [&](std::ostream& os) { write_trace(os, r); });
}

inline void write_reports(const std::vector<ExperimentResult>& results,
                          const std::filesystem::path& dir) {
  std::vector<SummaryRow> rows;
  std::vector<RunRecord> runs;
  for (const auto& r : results) {
    rows.push_back(r.row);
    runs.insert(runs.end(), r.runs.begin(), r.runs.end());
  }
  write_reports(rows, runs, dir);
}

}  // namespace dtql
