#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "replab/multiconsensus.hpp"
#include "replab/rng.hpp"
#include "replab/specs.hpp"

namespace replab {

inline bool step_applied(Guard g) { return g == Guard::ok; }
inline bool step_applied(const MultiConsensus::Applied& a) {
  return a.outcome == McOutcome::ok;
}

inline std::string step_label(const McStep& s) { return to_string(s); }
inline std::string step_label(const SpecStep& s) {
  return to_string(s.k) + "(r" + std::to_string(s.replica) + ",s" + std::to_string(s.slot) +
         ",v" + std::to_string(s.value) + ",a" + std::to_string(s.aux) + ")";
}

struct ExploreReport {
  uint64_t states{0};
  uint64_t edges{0};
  bool complete{true};
  std::optional<std::string> violation;
  std::vector<std::string> counterexample;
};

// Depth-first enumeration of every interleaving of enabled transitions within
// bounds. `check` runs on each newly reached state; the first violation stops
// the search with the path that produced it. Exceeding `max_states` flags the
// report incomplete, never a silent truncation.
template <typename M, typename Bounds>
ExploreReport explore(const M& init, const Bounds& bounds, uint64_t max_states,
                      const std::function<std::optional<std::string>(const M&)>& check) {
  ExploreReport report;
  using StepVec = decltype(init.enabled(bounds));
  struct Frame {
    M machine;
    StepVec steps;
    size_t next{0};
    std::string label;  // transition that produced this frame
  };

  std::unordered_set<std::string> visited;
  visited.reserve(1 << 16);

  std::vector<Frame> stack;
  {
    Frame f{init, init.enabled(bounds), 0, ""};
    visited.insert(init.canonical());
    report.states = 1;
    if (auto v = check(init)) {
      report.violation = v;
      return report;
    }
    stack.push_back(std::move(f));
  }

  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next >= top.steps.size()) {
      stack.pop_back();
      continue;
    }
    auto step = top.steps[top.next++];
    M succ = top.machine;
    auto applied = succ.apply(step);
    report.edges++;
    bool ok = step_applied(applied);
    std::optional<std::string> violation;
    if (!ok) {
      // a violating transition is a counterexample even though it did not
      // produce a new state
      violation = check(succ);
      if (!violation) continue;  // merely blocked
    } else {
      violation = check(succ);
    }
    if (violation) {
      report.violation = violation;
      for (const auto& f : stack)
        if (!f.label.empty()) report.counterexample.push_back(f.label);
      report.counterexample.push_back(step_label(step));
      return report;
    }
    std::string key = succ.canonical();
    if (!visited.insert(key).second) continue;
    report.states++;
    if (report.states > max_states) {
      report.complete = false;
      return report;
    }
    Frame f{std::move(succ), {}, 0, step_label(step)};
    f.steps = f.machine.enabled(bounds);
    stack.push_back(std::move(f));
  }
  return report;
}

// Seeded random walk with constructive fairness: a transition continuously
// enabled for more than `max_defer` rounds is forced before any fresh random
// choice.
template <typename M, typename Bounds>
class Walker {
 public:
  Walker(M machine, Bounds bounds, uint64_t seed, uint32_t max_defer = 8)
      : m_(std::move(machine)), bounds_(bounds), rng_(seed), max_defer_(max_defer) {}

  // Test hook: overrides the random choice, aging still applies.
  void set_choice(std::function<size_t(const std::vector<std::string>&)> choice) {
    choice_ = std::move(choice);
  }

  // Returns the fired transition label, or nullopt at quiescence.
  std::optional<std::string> step() {
    auto steps = m_.enabled(bounds_);
    if (steps.empty()) return std::nullopt;

    std::vector<std::string> labels;
    labels.reserve(steps.size());
    for (const auto& s : steps) labels.push_back(step_label(s));

    std::map<std::string, uint32_t> next_ages;
    for (const auto& l : labels) {
      auto it = ages_.find(l);
      next_ages[l] = it == ages_.end() ? 0 : it->second + 1;
    }
    ages_ = std::move(next_ages);

    size_t pick = labels.size();
    uint32_t best_age = max_defer_;
    for (size_t i = 0; i < labels.size(); ++i) {
      uint32_t age = ages_[labels[i]];
      if (age > best_age || (pick < labels.size() && age == best_age &&
                             labels[i] < labels[pick])) {
        pick = i;
        best_age = age;
      }
    }
    if (pick == labels.size())
      pick = choice_ ? choice_(labels) % labels.size() : size_t(rng_.below(labels.size()));

    auto applied = m_.apply(steps[pick]);
    if (!step_applied(applied)) {
      ages_.erase(labels[pick]);  // stale enablement; treat as fresh next round
      return step();
    }
    ages_.erase(labels[pick]);
    ++fired_;
    return labels[pick];
  }

  const M& machine() const { return m_; }
  M& machine() { return m_; }
  uint64_t fired() const { return fired_; }

 private:
  M m_;
  Bounds bounds_;
  Rng rng_;
  uint32_t max_defer_;
  std::map<std::string, uint32_t> ages_;
  std::function<size_t(const std::vector<std::string>&)> choice_;
  uint64_t fired_{0};
};

}  // namespace replab
