#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include <dtql/qtable.hpp>

#include "oracles.hpp"

using namespace dtql;

namespace {

// Dense reference table over the full prefix enumeration.
struct DenseTable {
  std::size_t n;
  std::vector<std::vector<std::size_t>> prefixes;
  std::map<std::vector<std::size_t>, std::size_t> index;
  std::vector<std::vector<double>> q;

  explicit DenseTable(std::size_t n_) : n(n_), prefixes(dtql::testing::all_prefixes(n_)) {
    for (std::size_t i = 0; i < prefixes.size(); ++i) index[prefixes[i]] = i;
    q.assign(prefixes.size(), std::vector<double>(n, 0.0));
  }
  double& at(const std::vector<std::size_t>& p, std::size_t a) { return q[index.at(p)][a]; }
  double max_next(const std::vector<std::size_t>& p) {
    if (p.size() == n) return 0.0;
    double m = -1e300;
    for (std::size_t a = 0; a < n; ++a)
      if (std::find(p.begin(), p.end(), a) == p.end()) m = std::max(m, at(p, a));
    return m;
  }
};

std::vector<std::size_t> prefix_of(const State& s) {
  std::vector<std::size_t> p;
  for (std::size_t k = 0; k < s.length(); ++k) p.push_back(s.at(k));
  return p;
}

}  // namespace

TEST(BestAction, ZeroTableTieBreaksLowest) {
  Environment env(generate_instance(4, DistParams{}, 1));
  QTable table(4);
  EXPECT_EQ(best_action(table, env.reset(), env.valid_actions(env.reset())).task_index, 0u);
  const State s = env.step(env.reset(), Action{0}).next_state;
  table.row(s.key());  // explicit zero row
  EXPECT_EQ(best_action(table, s, env.valid_actions(s)).task_index, 1u);
}

TEST(BestAction, PicksLargestAndIsShiftInvariant) {
  Environment env(generate_instance(4, DistParams{}, 1));
  const State root = env.reset();
  const auto valid = env.valid_actions(root);
  QTable table(4);
  table.set(root.key(), 0, -3.0);
  table.set(root.key(), 1, 1.0);
  table.set(root.key(), 2, 5.0);
  table.set(root.key(), 3, 2.0);
  EXPECT_EQ(best_action(table, root, valid).task_index, 2u);
  for (std::size_t a = 0; a < 4; ++a) table.row(root.key())[a] -= 17.25;
  EXPECT_EQ(best_action(table, root, valid).task_index, 2u);
}

TEST(BestAction, EmptyValidSetThrows) {
  QTable table(2);
  EXPECT_THROW(best_action(table, State{}, ActionSet{}), ContractViolation);
}

TEST(EpsilonGreedy, ZeroEpsilonIsGreedy) {
  Environment env(generate_instance(5, DistParams{}, 1));
  const State root = env.reset();
  QTable table(5);
  table.set(root.key(), 3, 1.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i)
    EXPECT_EQ(epsilon_greedy(table, root, env.valid_actions(root), 0.0, rng).task_index, 3u);
}

TEST(EpsilonGreedy, SelectionFrequencies) {
  Environment env(generate_instance(5, DistParams{}, 1));
  const State root = env.reset();
  const auto valid = env.valid_actions(root);
  QTable table(5);
  table.set(root.key(), 3, 1.0);
  constexpr int kDraws = 100000;
  for (double eps : {1.0, 0.1}) {
    Rng rng(99);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < kDraws; ++i) ++counts[epsilon_greedy(table, root, valid, eps, rng).task_index];
    for (std::size_t a = 0; a < 5; ++a) {
      const double p = eps / 5.0 + (a == 3 ? 1.0 - eps : 0.0);
      const double sigma = std::sqrt(kDraws * p * (1.0 - p));
      EXPECT_NEAR(counts[a], kDraws * p, 3.0 * sigma) << "eps=" << eps << " a=" << a;
    }
  }
}

TEST(EpsilonSchedule, Values) {
  EXPECT_DOUBLE_EQ(epsilon_schedule(0, 0.1, 5000), 1.0);
  EXPECT_NEAR(epsilon_schedule(5000, 0.1, 5000), 0.1 + 0.9 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(epsilon_schedule(5000, 0.1, 5000), 0.4311, 1e-4);
  EXPECT_NEAR(epsilon_schedule(10'000'000, 0.1, 5000), 0.1, 1e-12);
  for (std::size_t i = 0; i < 50000; i += 97)
    EXPECT_GT(epsilon_schedule(i, 0.1, 5000), epsilon_schedule(i + 97, 0.1, 5000));
}

TEST(TdUpdate, SingleStepAndFixedPoint) {
  Environment env(generate_instance(1, DistParams{}, 1));
  const State root = env.reset();
  const auto t = env.step(root, Action{0});
  HyperParams hp;
  QTable table(1);
  EXPECT_DOUBLE_EQ(td_update(table, root, Action{0}, -1.0, t.next_state, ActionSet{}, hp), -0.1);

  QTable fixed(1);
  fixed.set(root.key(), 0, -2.5);
  EXPECT_EQ(td_update(fixed, root, Action{0}, -2.5, t.next_state, ActionSet{}, hp), -2.5);
}

TEST(TdUpdate, GeometricContraction) {
  Environment env(generate_instance(1, DistParams{}, 1));
  const State root = env.reset();
  const auto next = env.step(root, Action{0}).next_state;
  for (double lr : {0.1, 0.5, 1.0}) {
    HyperParams hp;
    hp.lr = lr;
    QTable table(1);
    const double q0 = 3.0, target = -7.0;
    table.set(root.key(), 0, q0);
    for (int k = 1; k <= 60; ++k) {
      const double q = td_update(table, root, Action{0}, target, next, ActionSet{}, hp);
      const double expected = std::pow(1.0 - lr, k) * std::abs(q0 - target);
      EXPECT_NEAR(std::abs(q - target), expected, 1e-12 * (1.0 + std::abs(target)));
    }
  }
}

TEST(TdUpdate, BootstrapsFromNextState) {
  Environment env(generate_instance(2, DistParams{}, 1));
  const State root = env.reset();
  const auto t = env.step(root, Action{0});
  QTable table(2);
  table.set(t.next_state.key(), 1, -4.0);
  HyperParams hp;
  hp.gamma = 0.5;
  // 0 + 0.1 * (-1 + 0.5 * -4 - 0)
  EXPECT_DOUBLE_EQ(
      td_update(table, root, Action{0}, -1.0, t.next_state, env.valid_actions(t.next_state), hp),
      -0.3);
}

TEST(AverageTables, Identities) {
  QTable a(3);
  a.set(0, 0, 1.5);
  a.set(0x21, 2, -4.0);
  const std::vector<QTable> same{a, a, a};
  EXPECT_EQ(average_tables(a, same), a);

  QTable main(2);
  main.set(0, 1, 1.0);
  const std::vector<QTable> empty_twin{QTable(2)};
  EXPECT_DOUBLE_EQ(average_tables(main, empty_twin).value(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(average_tables(main, empty_twin).value(0, 0), 0.0);
}

TEST(AverageTables, MismatchedSizesThrow) {
  const std::vector<QTable> twins{QTable(4)};
  EXPECT_THROW(average_tables(QTable(3), twins), ContractViolation);
}

TEST(QTableProperties, SparseMatchesDense) {
  for (std::size_t n = 1; n <= 4; ++n) {
    Environment env(generate_instance(n, DistParams{}, 60 + n));
    const auto prefixes = dtql::testing::all_prefixes(n);
    Rng rng(1234 + n);
    HyperParams hp;
    hp.gamma = 0.9;
    QTable sparse(n);
    DenseTable dense(n);
    for (int op = 0; op < 3000; ++op) {
      const auto& p = prefixes[uniform_index(rng, prefixes.size())];
      if (p.size() == n) continue;
      const State s = dtql::testing::state_of(env, p);
      const auto valid = env.valid_actions(s);
      const Action a = valid[uniform_index(rng, valid.size())];
      const auto t = env.step(s, a);
      const double r = t.reward * (1.0 + uniform01(rng));

      if (op % 500 == 499) {
        // Averaging with a random twin.
        QTable twin(n);
        DenseTable dtwin(n);
        for (int k = 0; k < 20; ++k) {
          const auto& q = prefixes[uniform_index(rng, prefixes.size())];
          const auto b = uniform_index(rng, n);
          const double v = -uniform01(rng);
          twin.set(dtql::testing::state_of(env, q).key(), b, v);
          dtwin.at(q, b) = v;
        }
        sparse = average_tables(sparse, std::vector<QTable>{twin});
        for (std::size_t i = 0; i < dense.q.size(); ++i)
          for (std::size_t b = 0; b < n; ++b) dense.q[i][b] = (dense.q[i][b] + dtwin.q[i][b]) / 2.0;
      }

      const double got = td_update(sparse, s, a, r, t.next_state, env.valid_actions(t.next_state), hp);
      double& d = dense.at(p, a.task_index);
      d = d + hp.lr * (r + hp.gamma * dense.max_next(prefix_of(t.next_state)) - d);
      ASSERT_EQ(got, d);
    }
    for (const auto& p : prefixes) {
      const State s = dtql::testing::state_of(env, p);
      for (std::size_t a = 0; a < n; ++a) ASSERT_EQ(sparse.value(s.key(), a), dense.at(p, a));
    }
  }
}

TEST(QTableProperties, AverageMatchesDenseOracle) {
  Rng rng(77);
  const std::size_t n = 4;
  Environment env(generate_instance(n, DistParams{}, 1));
  const auto prefixes = dtql::testing::all_prefixes(n);
  QTable main(n);
  std::vector<QTable> twins(3, QTable(n));
  std::vector<DenseTable> dense(4, DenseTable(n));
  for (std::size_t t = 0; t < 4; ++t) {
    QTable& table = t == 0 ? main : twins[t - 1];
    for (int k = 0; k < 40; ++k) {
      const auto& p = prefixes[uniform_index(rng, prefixes.size())];
      const auto a = uniform_index(rng, n);
      const double v = uniform_real(rng, -10.0, 0.0);
      table.set(dtql::testing::state_of(env, p).key(), a, v);
      dense[t].at(p, a) = v;
    }
  }
  const QTable avg = average_tables(main, twins);
  for (const auto& p : prefixes) {
    const auto key = dtql::testing::state_of(env, p).key();
    for (std::size_t a = 0; a < n; ++a) {
      const double expected =
          (dense[0].at(p, a) + dense[1].at(p, a) + dense[2].at(p, a) + dense[3].at(p, a)) / 4.0;
      EXPECT_EQ(avg.value(key, a), expected);
    }
  }
}

TEST(QTableProperties, ValuesStayWithinHorizonBound) {
  Environment env(generate_instance(5, DistParams{}, 8));
  HyperParams hp;
  QTable table(5);
  Rng rng(3);
  double r_max = 0.0;
  for (int ep = 0; ep < 2000; ++ep) {
    State s = env.reset();
    while (!env.is_terminal(s)) {
      const auto valid = env.valid_actions(s);
      const Action a = epsilon_greedy(table, s, valid, 0.5, rng);
      const auto t = env.step(s, a);
      r_max = std::max(r_max, -t.reward);
      td_update(table, s, a, t.reward, t.next_state, env.valid_actions(t.next_state), hp);
      s = t.next_state;
    }
  }
  for (const auto& [key, row] : table.rows()) {
    for (double v : row) {
      EXPECT_LE(v, 0.0);
      EXPECT_GE(v, -5.0 * r_max);
    }
  }
}

TEST(QTableProperties, SeededRunsAreBitIdentical) {
  auto run = [] {
    Environment env(generate_instance(4, DistParams{}, 8));
    HyperParams hp;
    QTable table(4);
    Rng rng(17);
    for (int ep = 0; ep < 500; ++ep) {
      State s = env.reset();
      while (!env.is_terminal(s)) {
        const auto valid = env.valid_actions(s);
        const Action a = epsilon_greedy(table, s, valid, 0.3, rng);
        const auto t = env.step(s, a);
        td_update(table, s, a, t.reward, t.next_state, env.valid_actions(t.next_state), hp);
        s = t.next_state;
      }
    }
    return table;
  };
  EXPECT_EQ(run(), run());
}

TEST(QTableDump, RoundTripsThroughText) {
  Environment env(generate_instance(3, DistParams{}, 8));
  QTable table(3);
  table.set(0, 1, -0.1);
  table.set(dtql::testing::state_of(env, {2, 0}).key(), 1, -1.0 / 3.0);
  std::stringstream ss;
  dump(table, ss);
  EXPECT_NE(ss.str().find("qtable 3\n. 0 -0.10000000000000001 0\n"), std::string::npos);
  EXPECT_NE(ss.str().find("\n2.0 "), std::string::npos);
  EXPECT_EQ(load(ss), table);
}

TEST(QTableDump, RejectsMalformedInput) {
  std::stringstream bad_header("table 3\n");
  EXPECT_THROW(load(bad_header), ConfigError);
  std::stringstream repeated("qtable 3\n1.1 0 0 0\n");
  EXPECT_THROW(load(repeated), ConfigError);
  std::stringstream short_row("qtable 2\n. 0\n");
  EXPECT_THROW(load(short_row), ConfigError);
}
