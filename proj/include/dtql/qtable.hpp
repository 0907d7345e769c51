#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "mdp_env.hpp"
#include "random.hpp"

namespace dtql {

struct HyperParams {
  double lr{0.1};
  double gamma{1.0};
  double eps_min{0.1};
  double beta{5000.0};
  std::size_t phi{0};
  std::size_t delta{512};
  std::size_t episodes{25600};
};

inline void validate(const HyperParams& hp) {
  if (!(hp.lr > 0.0 && hp.lr <= 1.0)) throw ConfigError("lr must be in (0, 1]");
  if (!(hp.gamma >= 0.0 && hp.gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  if (!(hp.eps_min >= 0.0 && hp.eps_min < 1.0)) throw ConfigError("eps_min must be in [0, 1)");
  if (!(hp.beta > 0.0)) throw ConfigError("beta must be positive");
  if (hp.episodes == 0) throw ConfigError("episodes must be positive");
}

// Sparse Q-table: canonical prefix key -> one value per task index. Absent
// rows read as all zeros.
class QTable {
 public:
  using Row = std::vector<double>;
  using Map = std::unordered_map<std::uint64_t, Row>;

  explicit QTable(std::size_t num_actions) : num_actions_(num_actions) {}

  std::size_t num_actions() const noexcept { return num_actions_; }
  std::size_t num_states() const noexcept { return rows_.size(); }
  const Map& rows() const noexcept { return rows_; }

  double value(std::uint64_t key, std::size_t action) const {
    auto it = rows_.find(key);
    return it == rows_.end() ? 0.0 : it->second[action];
  }
  double value(const State& s, Action a) const { return value(s.key(), a.task_index); }

  const Row* find(std::uint64_t key) const {
    auto it = rows_.find(key);
    return it == rows_.end() ? nullptr : &it->second;
  }

  // Creates a zero row on first touch.
  Row& row(std::uint64_t key) {
    auto [it, inserted] = rows_.try_emplace(key);
    if (inserted) it->second.assign(num_actions_, 0.0);
    return it->second;
  }

  void set(std::uint64_t key, std::size_t action, double v) { row(key)[action] = v; }

  friend bool operator==(const QTable& a, const QTable& b) {
    return a.num_actions_ == b.num_actions_ && a.rows_ == b.rows_;
  }

 private:
  std::size_t num_actions_;
  Map rows_;
};

// Greedy action; ties go to the lowest task index.
inline Action best_action(const QTable& table, const State& s, const ActionSet& valid) {
  detail::require(!valid.empty(), "best_action: no valid actions");
  const auto* row = table.find(s.key());
  if (row == nullptr) return valid[0];
  Action best = valid[0];
  double best_v = (*row)[best.task_index];
  for (std::size_t i = 1; i < valid.size(); ++i) {
    const double v = (*row)[valid[i].task_index];
    if (v > best_v) {
      best_v = v;
      best = valid[i];
    }
  }
  return best;
}

// With probability eps a uniform valid action, otherwise the greedy one.
// Always consumes exactly one uniform draw, plus one index draw on explore.
inline Action epsilon_greedy(const QTable& table, const State& s, const ActionSet& valid,
                             double eps, Rng& rng) {
  detail::require(eps >= 0.0 && eps <= 1.0, "epsilon_greedy: eps must be in [0, 1]");
  detail::require(!valid.empty(), "epsilon_greedy: no valid actions");
  if (uniform01(rng) < eps) return valid[uniform_index(rng, valid.size())];
  return best_action(table, s, valid);
}

// Exploration rate for 0-based episode i: decays from 1 toward eps_min with
// time constant beta episodes.
inline double epsilon_schedule(std::size_t i, double eps_min, double beta) {
  return eps_min + (1.0 - eps_min) * std::exp(-static_cast<double>(i) / beta);
}

inline double max_value(const QTable& table, const State& s, const ActionSet& valid) {
  if (valid.empty()) return 0.0;
  const auto* row = table.find(s.key());
  if (row == nullptr) return 0.0;
  double m = (*row)[valid[0].task_index];
  for (std::size_t i = 1; i < valid.size(); ++i) m = std::max(m, (*row)[valid[i].task_index]);
  return m;
}

// One-step TD(0): Q <- Q + lr * (r + gamma * max_a' Q(s', a') - Q).
// `next_valid` is empty at terminal states, making the bootstrap 0.
inline double td_update(QTable& table, const State& s, Action a, double reward,
                        const State& next, const ActionSet& next_valid, const HyperParams& hp) {
  const double target = reward + hp.gamma * max_value(table, next, next_valid);
  double& q = table.row(s.key())[a.task_index];
  q = q + hp.lr * (target - q);
  return q;
}

// Entrywise mean of main and twins, absent entries counting as zero. The sum
// runs main first, then twins in ascending index, for every key.
inline QTable average_tables(const QTable& main, std::span<const QTable> twins) {
  const auto n = main.num_actions();
  for (const auto& t : twins)
    detail::require(t.num_actions() == n, "average_tables: tables differ in action count");

  std::vector<std::uint64_t> keys;
  keys.reserve(main.num_states());
  for (const auto& [k, _] : main.rows()) keys.push_back(k);
  for (const auto& t : twins)
    for (const auto& [k, _] : t.rows()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  const double count = 1.0 + static_cast<double>(twins.size());
  QTable out(n);
  for (auto key : keys) {
    auto& dst = out.row(key);
    for (std::size_t a = 0; a < n; ++a) {
      double sum = main.value(key, a);
      for (const auto& t : twins) sum += t.value(key, a);
      dst[a] = sum / count;
    }
  }
  return out;
}

inline QTable average_tables(const QTable& main, const std::vector<QTable>& twins) {
  return average_tables(main, std::span<const QTable>(twins));
}

// Text dump: a "qtable <N>" header, then one line per state sorted by key:
// the prefix as dot-separated indices ("." for the empty prefix) followed by
// N values printed with round-trip precision.
inline std::string prefix_from_key(std::uint64_t key) {
  if (key == 0) return ".";
  std::string out;
  for (std::size_t k = 0; key != 0; ++k, key >>= 4) {
    if (k) out += '.';
    out += std::to_string((key & 0xF) - 1);
  }
  return out;
}

inline std::uint64_t key_from_prefix(const std::string& text, std::size_t num_actions) {
  if (text == ".") return 0;
  std::uint64_t key = 0;
  std::size_t slot = 0;
  std::uint32_t used = 0;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '.')) {
    std::size_t idx = 0;
    try {
      std::size_t pos = 0;
      idx = std::stoul(part, &pos);
      if (pos != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("qtable: bad state prefix '" + text + "'");
    }
    if (idx >= num_actions || slot >= kMaxTasks || ((used >> idx) & 1u))
      throw ConfigError("qtable: bad state prefix '" + text + "'");
    used |= 1u << idx;
    key |= static_cast<std::uint64_t>(idx + 1) << (4 * slot++);
  }
  return key;
}

inline void dump(const QTable& table, std::ostream& os) {
  os << "qtable " << table.num_actions() << '\n';
  std::vector<std::uint64_t> keys;
  for (const auto& [k, _] : table.rows()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  char buf[32];
  for (auto k : keys) {
    os << prefix_from_key(k);
    for (double v : *table.find(k)) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      os << buf;
    }
    os << '\n';
  }
}

inline QTable load(std::istream& is) {
  std::string tag;
  std::size_t n = 0;
  if (!(is >> tag >> n) || tag != "qtable" || n == 0 || n > kMaxTasks)
    throw ConfigError("qtable: missing or bad header");
  QTable table(n);
  std::string prefix;
  while (is >> prefix) {
    auto& row = table.row(key_from_prefix(prefix, n));
    for (std::size_t a = 0; a < n; ++a)
      if (!(is >> row[a])) throw ConfigError("qtable: row '" + prefix + "' is short");
  }
  return table;
}

}  // namespace dtql
