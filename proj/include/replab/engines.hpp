#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "replab/config.hpp"
#include "replab/trace.hpp"

namespace replab {

struct RunResult {
  std::vector<TraceEvent> trace;
  nlohmann::ordered_json header;
  uint32_t decided{0};            // distinct slots learned during the run
  bool violation{false};          // online safety monitor tripped
  std::string violation_reason;
  Tick end_time{0};
};

// Executes one scenario to quiescence, its tick limit, or the decided-command
// target. Deterministic: a (config, seed) pair always yields the same trace.
RunResult run_scenario(const ScenarioConfig& cfg);

}  // namespace replab
