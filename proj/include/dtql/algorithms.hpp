#pragma once

// Tabular training loops: plain Q-learning, twin-assisted asynchronous
// Q-learning (one real agent plus phi twin agents with periodic table
// averaging) and twin-assisted exploring Q-learning (one agent that also
// tries phi distinct actions in the twin at every real step).
//
// One training iteration is one full episode of N steps. Exploration decays
// per episode; episode indices in traces are 1-based counts of completed
// episodes.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"
#include "mdp_env.hpp"
#include "qtable.hpp"
#include "random.hpp"
#include "sched_core.hpp"

namespace dtql {

enum class Algo { ql, dtaql, dteql };

inline std::string to_string(Algo a) {
  switch (a) {
    case Algo::ql: return "ql";
    case Algo::dtaql: return "dtaql";
    case Algo::dteql: return "dteql";
  }
  return "?";
}

inline Algo parse_algo(const std::string& s) {
  if (s == "ql") return Algo::ql;
  if (s == "dtaql") return Algo::dtaql;
  if (s == "dteql") return Algo::dteql;
  throw ConfigError("unknown algorithm '" + s + "' (expected ql, dtaql or dteql)");
}

struct TrainOptions {
  std::size_t eval_interval{8};
  // dtaql: run twin agents on worker threads between sync barriers.
  bool parallel{false};
  // dtaql: give every twin the real agent's RNG stream (test hook).
  bool shared_twin_seed{false};
};

struct EvalRecord {
  std::size_t episode{0};
  double epsilon{0.0};
  double total_cost{0.0};
  std::size_t misses{0};
  double avg_delay{0.0};
  std::size_t table_size{0};

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct TrainingTrace {
  std::vector<EvalRecord> records;
  std::uint64_t real_steps{0};
  std::uint64_t twin_steps{0};
};

struct TrainedPolicy {
  QTable table;
  Instance instance;
  HyperParams hyperparams;
};

struct TrainingResult {
  TrainedPolicy policy;
  TrainingTrace trace;
};

// Greedy rollout from the empty prefix. Runs on a twin so that evaluation
// never consumes real-environment steps.
inline Schedule greedy_schedule(const QTable& table, const Environment& env) {
  Environment twin = env.clone_twin();
  State s = twin.reset();
  while (!twin.is_terminal(s)) {
    const auto valid = twin.valid_actions(s);
    s = twin.step(s, best_action(table, s, valid)).next_state;
  }
  return s.to_schedule();
}

inline ScheduleReport evaluate_policy(const QTable& table, const Environment& env) {
  return objective(env.instance(), greedy_schedule(table, env));
}

inline ScheduleReport evaluate_policy(const TrainedPolicy& policy, const Environment& env) {
  return evaluate_policy(policy.table, env);
}

namespace detail {

inline EvalRecord make_record(std::size_t episode, double eps, const QTable& table,
                              const Environment& env) {
  const auto rep = evaluate_policy(table, env);
  return EvalRecord{episode, eps, rep.total_cost, rep.misses, rep.avg_delay, table.num_states()};
}

// `hook(state, valid)` runs after the real update of every step.
template <typename StepHook>
void play_episode(Environment& env, QTable& table, double eps, const HyperParams& hp, Rng& rng,
                  StepHook&& hook) {
  State s = env.reset();
  while (!env.is_terminal(s)) {
    const auto valid = env.valid_actions(s);
    const Action a = epsilon_greedy(table, s, valid, eps, rng);
    const Transition t = env.step(s, a);
    td_update(table, s, a, t.reward, t.next_state, env.valid_actions(t.next_state), hp);
    hook(s, valid);
    s = t.next_state;
  }
}

inline void play_episode(Environment& env, QTable& table, double eps, const HyperParams& hp,
                         Rng& rng) {
  play_episode(env, table, eps, hp, rng, [](const State&, const ActionSet&) {});
}

// Up to k distinct members of `valid`, drawn uniformly without replacement.
// Taking all of them needs no randomness.
inline ActionSet sample_unique(const ActionSet& valid, std::size_t k, Rng& rng) {
  if (k >= valid.size()) return valid;
  std::array<Action, kMaxTasks> pool{};
  std::copy(valid.begin(), valid.end(), pool.begin());
  ActionSet out;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, valid.size() - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

inline TrainingResult finish(QTable table, const Environment& env, const HyperParams& hp,
                             TrainingTrace trace) {
  return TrainingResult{TrainedPolicy{std::move(table), env.instance(), hp}, std::move(trace)};
}

}  // namespace detail

inline TrainingResult train_ql(Environment& env, const HyperParams& hp, std::uint64_t seed,
                               const TrainOptions& opts = {}) {
  validate(hp);
  detail::require(opts.eval_interval >= 1, "eval_interval must be positive");
  const auto steps0 = env.steps();
  QTable table(env.num_tasks());
  Rng rng(derive_seed(seed, 0));
  TrainingTrace trace;
  for (std::size_t e = 0; e < hp.episodes; ++e) {
    const double eps = epsilon_schedule(e, hp.eps_min, hp.beta);
    detail::play_episode(env, table, eps, hp, rng);
    if ((e + 1) % opts.eval_interval == 0)
      trace.records.push_back(detail::make_record(e + 1, eps, table, env));
  }
  trace.real_steps = env.steps() - steps0;
  return detail::finish(std::move(table), env, hp, std::move(trace));
}

// Every real step also evaluates min(phi, |valid|) distinct actions from the
// same state in the twin and applies a TD update with each simulated
// transition's own reward and next state. phi = 0 reduces to train_ql.
inline TrainingResult train_dteql(Environment& env, const HyperParams& hp, std::uint64_t seed,
                                  const TrainOptions& opts = {}) {
  validate(hp);
  detail::require(opts.eval_interval >= 1, "eval_interval must be positive");
  const auto steps0 = env.steps();
  Environment twin = env.clone_twin();
  QTable table(env.num_tasks());
  Rng rng(derive_seed(seed, 0));
  TrainingTrace trace;

  auto simulate = [&](const State& s, const ActionSet& valid) {
    if (hp.phi == 0) return;
    for (const Action a : detail::sample_unique(valid, hp.phi, rng)) {
      const Transition t = twin.step(s, a);
      td_update(table, s, a, t.reward, t.next_state, twin.valid_actions(t.next_state), hp);
    }
  };

  for (std::size_t e = 0; e < hp.episodes; ++e) {
    const double eps = epsilon_schedule(e, hp.eps_min, hp.beta);
    detail::play_episode(env, table, eps, hp, rng, simulate);
    if ((e + 1) % opts.eval_interval == 0)
      trace.records.push_back(detail::make_record(e + 1, eps, table, env));
  }
  trace.real_steps = env.steps() - steps0;
  trace.twin_steps = twin.steps();
  return detail::finish(std::move(table), env, hp, std::move(trace));
}

// One real agent and phi twin agents, each with its own table, environment
// and RNG stream, play one episode per iteration in lockstep. After every
// delta-th episode all 1 + phi tables are replaced by their average. Only
// the real agent is evaluated.
inline TrainingResult train_dtaql(Environment& env, const HyperParams& hp, std::uint64_t seed,
                                  const TrainOptions& opts = {}) {
  validate(hp);
  if (hp.phi < 1) throw ConfigError("dtaql needs phi >= 1");
  if (hp.delta < 1) throw ConfigError("dtaql needs delta >= 1");
  detail::require(opts.eval_interval >= 1, "eval_interval must be positive");

  const auto steps0 = env.steps();
  const std::size_t agents = 1 + hp.phi;
  std::vector<QTable> tables(agents, QTable(env.num_tasks()));
  std::vector<Environment> twins;
  std::vector<Rng> rngs;
  twins.reserve(hp.phi);
  rngs.reserve(agents);
  rngs.emplace_back(derive_seed(seed, 0));
  for (std::size_t j = 1; j < agents; ++j) {
    twins.push_back(env.clone_twin());
    rngs.emplace_back(opts.shared_twin_seed ? derive_seed(seed, 0) : derive_seed(seed, j));
  }
  auto env_of = [&](std::size_t agent) -> Environment& {
    return agent == 0 ? env : twins[agent - 1];
  };

  TrainingTrace trace;
  auto sync = [&] {
    QTable avg = average_tables(tables[0], std::span<const QTable>(tables).subspan(1));
    for (auto& t : tables) t = avg;
  };

  if (!opts.parallel) {
    // Reference schedule: episode by episode, agents in ascending order.
    for (std::size_t e = 0; e < hp.episodes; ++e) {
      const double eps = epsilon_schedule(e, hp.eps_min, hp.beta);
      for (std::size_t a = 0; a < agents; ++a)
        detail::play_episode(env_of(a), tables[a], eps, hp, rngs[a]);
      const auto done = e + 1;
      if (done % hp.delta == 0) sync();
      if (done % opts.eval_interval == 0)
        trace.records.push_back(detail::make_record(done, eps, tables[0], env));
    }
  } else {
    // Agents are independent between barriers, so each runs a whole sync
    // period on its own. The real agent stays on the calling thread.
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(hp.phi, std::thread::hardware_concurrency()));
    for (std::size_t begin = 0; begin < hp.episodes; begin += hp.delta) {
      const std::size_t end = std::min(begin + hp.delta, hp.episodes);
      auto run_agent = [&](std::size_t a) {
        for (std::size_t e = begin; e < end; ++e) {
          const double eps = epsilon_schedule(e, hp.eps_min, hp.beta);
          detail::play_episode(env_of(a), tables[a], eps, hp, rngs[a]);
          if (a == 0 && e + 1 < end && (e + 1) % opts.eval_interval == 0)
            trace.records.push_back(detail::make_record(e + 1, eps, tables[0], env));
        }
      };
      {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (std::size_t a = 1 + w; a < agents; a += workers) run_agent(a);
          });
        }
        run_agent(0);
      }
      if (end % hp.delta == 0) sync();
      if (end % opts.eval_interval == 0) {
        const double eps = epsilon_schedule(end - 1, hp.eps_min, hp.beta);
        trace.records.push_back(detail::make_record(end, eps, tables[0], env));
      }
    }
  }

  trace.real_steps = env.steps() - steps0;
  for (const auto& t : twins) trace.twin_steps += t.steps();
  return detail::finish(std::move(tables[0]), env, hp, std::move(trace));
}

inline TrainingResult train(Algo algo, Environment& env, const HyperParams& hp, std::uint64_t seed,
                            const TrainOptions& opts = {}) {
  switch (algo) {
    case Algo::ql: return train_ql(env, hp, seed, opts);
    case Algo::dtaql: return train_dtaql(env, hp, seed, opts);
    case Algo::dteql: return train_dteql(env, hp, seed, opts);
  }
  throw ContractViolation("unknown algorithm");
}

}  // namespace dtql
