#pragma once

// Single-user edge offloading model: tasks are uploaded one at a time over a
// fixed-rate link and executed in arrival order on a single-core server.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace dtql {

struct Task {
  double data_bits{0.0};   // bits
  double complexity{0.0};  // CPU cycles per bit
  double deadline{1.0};    // seconds
};

struct Instance {
  std::vector<Task> tasks;
  double rate{1.0e7};       // bits / second
  double cpu_freq{1.0e10};  // cycles / second
  double penalty{10.0};     // cost added per deadline miss

  std::size_t size() const noexcept { return tasks.size(); }

  // Seconds to push task i's data over the link.
  double transmit_time(std::size_t i) const { return tasks[i].data_bits / rate; }
  // Seconds of server CPU for task i.
  double exec_time(std::size_t i) const {
    return tasks[i].data_bits * tasks[i].complexity / cpu_freq;
  }
};

// Throws ConfigError when the instance breaks its invariants.
inline void validate(const Instance& inst) {
  if (inst.tasks.empty()) throw ConfigError("instance has no tasks");
  if (!(inst.rate > 0.0)) throw ConfigError("rate must be positive");
  if (!(inst.cpu_freq > 0.0)) throw ConfigError("cpu_freq must be positive");
  if (!(inst.penalty >= 0.0)) throw ConfigError("penalty must be nonnegative");
  for (const auto& t : inst.tasks) {
    if (!(t.data_bits >= 0.0) || !(t.complexity >= 0.0) || !(t.deadline > 0.0))
      throw ConfigError("task violates d >= 0, c >= 0, deadline > 0");
  }
}

// A queue order: order[k] is the task transmitted (and executed) k-th.
struct Schedule {
  std::vector<std::size_t> order;

  static Schedule identity(std::size_t n) {
    Schedule s;
    s.order.resize(n);
    std::iota(s.order.begin(), s.order.end(), std::size_t{0});
    return s;
  }

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

inline bool is_permutation_of(const Schedule& s, std::size_t n) {
  if (s.order.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto i : s.order) {
    if (i >= n || seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

inline void require_valid(const Instance& inst, const Schedule& s) {
  detail::require(is_permutation_of(s, inst.size()),
                  "schedule is not a permutation of the instance's task indices");
}

struct ScheduleReport {
  std::vector<double> completion;  // per queue position, seconds
  double total_cost{0.0};
  std::size_t misses{0};
  double avg_delay{0.0};
};

// Time at which the data of the j-th queued task (1-based) has fully arrived.
inline double ready_time(const Instance& inst, const Schedule& s, std::size_t j) {
  require_valid(inst, s);
  detail::require(j >= 1 && j <= inst.size(), "queue position out of range");
  double t = 0.0;
  for (std::size_t k = 0; k < j; ++k) t += inst.transmit_time(s.order[k]);
  return t;
}

// One step of the completion recursion. `ready` is the cumulative transmit
// time including the task itself; `prev_completion` is 0 for the queue head.
inline double next_completion(const Instance& inst, std::size_t task, double ready,
                              double prev_completion) {
  return std::max(ready, prev_completion) + inst.exec_time(task);
}

inline std::vector<double> completion_times(const Instance& inst, const Schedule& s) {
  require_valid(inst, s);
  std::vector<double> out;
  out.reserve(inst.size());
  double ready = 0.0;
  double prev = 0.0;
  for (auto task : s.order) {
    ready += inst.transmit_time(task);
    prev = next_completion(inst, task, ready, prev);
    out.push_back(prev);
  }
  return out;
}

// Cost contributed by one queue position. The objective and the per-step
// environment reward both go through here so that episode returns match the
// objective bit for bit.
inline double position_cost(const Instance& inst, std::size_t task, double completion) {
  const bool miss = completion > inst.tasks[task].deadline;
  return completion + (miss ? inst.penalty : 0.0);
}

inline ScheduleReport objective(const Instance& inst, const Schedule& s) {
  ScheduleReport r;
  r.completion = completion_times(inst, s);
  double sum = 0.0;
  for (std::size_t k = 0; k < s.order.size(); ++k) {
    const auto task = s.order[k];
    const double c = r.completion[k];
    if (c > inst.tasks[task].deadline) ++r.misses;
    r.total_cost += position_cost(inst, task, c);
    sum += c;
  }
  r.avg_delay = sum / static_cast<double>(s.order.size());
  return r;
}

inline constexpr std::size_t kDefaultOracleLimit = 10;

// Exhaustive search over all N! queue orders. Enumeration is lexicographic
// and only strict improvements replace the incumbent, so ties resolve to the
// lexicographically smallest order.
inline std::pair<Schedule, ScheduleReport> brute_force_optimal(
    const Instance& inst, std::size_t oracle_limit = kDefaultOracleLimit) {
  validate(inst);
  const auto n = inst.size();
  if (n > oracle_limit) {
    throw OracleInfeasible("brute-force oracle infeasible: N=" + std::to_string(n) +
                           " exceeds limit " + std::to_string(oracle_limit));
  }
  Schedule cur = Schedule::identity(n);
  Schedule best = cur;
  double best_cost = objective(inst, cur).total_cost;
  while (std::next_permutation(cur.order.begin(), cur.order.end())) {
    // Inline cost evaluation; same arithmetic order as objective().
    double ready = 0.0, prev = 0.0, cost = 0.0;
    for (auto task : cur.order) {
      ready += inst.transmit_time(task);
      prev = next_completion(inst, task, ready, prev);
      cost += position_cost(inst, task, prev);
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = cur;
    }
  }
  return {best, objective(inst, best)};
}

// Uniform sampling bounds for generated instances plus the channel/server
// constants. Defaults: d ~ U[0, 2 Mb], c ~ U[0, 1000] cycles/bit,
// deadline ~ U[1, 5] s, f_ser = 10 GHz, R = 10 Mb/s, penalty = 10.
struct DistParams {
  double data_min{0.0};
  double data_max{2.0e6};
  double complexity_min{0.0};
  double complexity_max{1000.0};
  double deadline_min{1.0};
  double deadline_max{5.0};
  double rate{1.0e7};
  double cpu_freq{1.0e10};
  double penalty{10.0};
};

inline void validate(const DistParams& p) {
  auto bounds = [](double lo, double hi, const char* name) {
    if (!(lo <= hi)) throw ConfigError(std::string(name) + ": lower bound exceeds upper bound");
  };
  bounds(p.data_min, p.data_max, "data");
  bounds(p.complexity_min, p.complexity_max, "complexity");
  bounds(p.deadline_min, p.deadline_max, "deadline");
  if (p.data_min < 0.0) throw ConfigError("data: lower bound must be nonnegative");
  if (p.complexity_min < 0.0) throw ConfigError("complexity: lower bound must be nonnegative");
  if (!(p.deadline_min > 0.0)) throw ConfigError("deadline: lower bound must be positive");
  if (!(p.rate > 0.0)) throw ConfigError("rate must be positive");
  if (!(p.cpu_freq > 0.0)) throw ConfigError("cpu_freq must be positive");
  if (!(p.penalty >= 0.0)) throw ConfigError("penalty must be nonnegative");
}

inline Instance generate_instance(std::size_t n, const DistParams& dist, std::uint64_t seed) {
  if (n == 0) throw ConfigError("instance needs at least one task");
  validate(dist);
  Rng rng(seed);
  Instance inst;
  inst.rate = dist.rate;
  inst.cpu_freq = dist.cpu_freq;
  inst.penalty = dist.penalty;
  inst.tasks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Task t;
    t.data_bits = uniform_real(rng, dist.data_min, dist.data_max);
    t.complexity = uniform_real(rng, dist.complexity_min, dist.complexity_max);
    t.deadline = uniform_real(rng, dist.deadline_min, dist.deadline_max);
    inst.tasks.push_back(t);
  }
  return inst;
}

}  // namespace dtql
