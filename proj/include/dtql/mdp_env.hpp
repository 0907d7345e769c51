#pragma once

// Episodic scheduling MDP over one fixed instance. A state is the ordered
// prefix of already-queued tasks; an action appends one more task. The
// prefix order matters because the next completion time depends on the
// previous one, so an unordered "scheduled set" would not be Markov.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "error.hpp"
#include "sched_core.hpp"

namespace dtql {

// Prefix keys pack one 4-bit slot per position, so episodes are capped here.
inline constexpr std::size_t kMaxTasks = 15;

struct Action {
  std::size_t task_index{0};
  friend bool operator==(const Action&, const Action&) = default;
};

// Fixed-capacity list of actions, ascending by task index.
class ActionSet {
 public:
  void push_back(Action a) { items_[count_++] = a; }
  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  const Action& operator[](std::size_t i) const { return items_[i]; }
  const Action* begin() const noexcept { return items_.data(); }
  const Action* end() const noexcept { return items_.data() + count_; }

 private:
  std::array<Action, kMaxTasks> items_{};
  std::size_t count_{0};
};

class State {
 public:
  std::size_t length() const noexcept { return length_; }
  std::size_t at(std::size_t pos) const { return prefix_[pos]; }
  bool contains(std::size_t task) const noexcept { return (used_ >> task) & 1u; }

  // Canonical key: slot k holds (prefix[k] + 1), empty slots are 0. Distinct
  // prefixes map to distinct keys and the empty prefix maps to 0.
  std::uint64_t key() const noexcept { return key_; }

  // Cumulative upload time and completion time of the last queued task.
  double ready() const noexcept { return ready_; }
  double last_completion() const noexcept { return last_completion_; }

  Schedule to_schedule() const {
    Schedule s;
    s.order.assign(prefix_.begin(), prefix_.begin() + static_cast<std::ptrdiff_t>(length_));
    return s;
  }

  std::string to_string() const {
    std::string out = "(";
    for (std::size_t k = 0; k < length_; ++k) {
      if (k) out += ',';
      out += std::to_string(prefix_[k]);
    }
    return out + ")";
  }

  friend bool operator==(const State& a, const State& b) noexcept { return a.key_ == b.key_; }

 private:
  friend class Environment;

  std::array<std::uint8_t, kMaxTasks> prefix_{};
  std::size_t length_{0};
  std::uint32_t used_{0};
  std::uint64_t key_{0};
  double ready_{0.0};
  double last_completion_{0.0};
};

struct Transition {
  State next_state;
  double reward{0.0};
  bool terminal{false};
};

class Environment {
 public:
  explicit Environment(Instance inst)
      : instance_(std::make_shared<const Instance>(std::move(inst))) {
    validate(*instance_);
    if (instance_->size() > kMaxTasks)
      throw ConfigError("environment supports at most " + std::to_string(kMaxTasks) + " tasks");
  }

  const Instance& instance() const noexcept { return *instance_; }
  std::size_t num_tasks() const noexcept { return instance_->size(); }

  State reset() const { return State{}; }

  bool is_terminal(const State& s) const noexcept { return s.length() == num_tasks(); }

  ActionSet valid_actions(const State& s) const {
    ActionSet out;
    for (std::size_t i = 0; i < num_tasks(); ++i)
      if (!s.contains(i)) out.push_back(Action{i});
    return out;
  }

  // Reward is minus the position cost of the newly queued task, so the
  // undiscounted episode return equals minus the schedule objective.
  Transition step(const State& s, Action a) {
    detail::require(a.task_index < num_tasks() && !s.contains(a.task_index),
                    "invalid action " + std::to_string(a.task_index) + " in state " +
                        s.to_string());
    const auto& inst = *instance_;
    Transition t;
    State& n = t.next_state;
    n = s;
    n.prefix_[n.length_] = static_cast<std::uint8_t>(a.task_index);
    n.key_ |= static_cast<std::uint64_t>(a.task_index + 1) << (4 * n.length_);
    ++n.length_;
    n.used_ |= 1u << a.task_index;
    n.ready_ += inst.transmit_time(a.task_index);
    n.last_completion_ = next_completion(inst, a.task_index, n.ready_, s.last_completion_);
    t.reward = -position_cost(inst, a.task_index, n.last_completion_);
    t.terminal = n.length_ == num_tasks();
    ++steps_;
    return t;
  }

  // A perfect-fidelity digital twin: same instance and dynamics, separate
  // step counter. The instance is immutable and shared.
  Environment clone_twin() const { return Environment(instance_); }

  std::uint64_t steps() const noexcept { return steps_; }

 private:
  explicit Environment(std::shared_ptr<const Instance> inst) : instance_(std::move(inst)) {}

  std::shared_ptr<const Instance> instance_;
  std::uint64_t steps_{0};
};

}  // namespace dtql
