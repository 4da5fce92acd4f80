#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "replab/app.hpp"
#include "replab/kernel.hpp"
#include "replab/multiconsensus.hpp"
#include "replab/types.hpp"

namespace replab {

enum class Protocol : uint8_t { paxos, vsr, zab };
std::string to_string(Protocol p);
bool parse_protocol(std::string_view s, Protocol& out);

enum class Dissemination : uint8_t { collect, broadcast };

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct LinkSpec {
  ProcessId from{};
  ProcessId to{};
  bool both_ways{false};
  LinkModel model{};
};

struct CrashSpec {
  ProcessId victim{};
  std::optional<Tick> at;
  std::optional<CrashTrigger> trigger;
};

struct ScenarioConfig {
  Protocol protocol{Protocol::paxos};
  uint32_t n{3};
  uint32_t f{1};
  uint32_t replicas{2};
  uint64_t seed{1};

  // workload
  uint32_t clients{2};
  uint32_t ops_per_client{20};
  AppKind app{AppKind::reg};
  int64_t register_init{0};
  std::vector<Operation::Kind> op_mix{Operation::Kind::inc, Operation::Kind::set,
                                      Operation::Kind::read};
  std::map<uint16_t, std::vector<Operation>> scripts;  // overrides the generator

  // network
  LinkModel delay{1, 1, 0.0};
  uint32_t max_defer{16};
  std::vector<LinkSpec> links;

  // faults
  std::vector<CrashSpec> crashes;
  bool respect_threshold{true};

  // engine knobs
  Dissemination dissemination{Dissemination::collect};
  enum class PoMode : uint8_t { automatic, on, off } po{PoMode::automatic};
  Tick progress_timeout{0};  // 0: 10x mean one-way delay
  Tick retry_timeout{0};     // 0: 4x mean one-way delay
  uint32_t sync_gap_limit{16};
  Tick omega_lag{5};
  enum class Backoff : uint8_t { immediate, backoff } backoff{Backoff::backoff};

  // run length
  uint64_t max_ticks{100000};
  uint32_t target_decided{0};  // 0: until the workload drains or max_ticks

  bool po_enabled() const {
    if (po == PoMode::on) return true;
    if (po == PoMode::off) return false;
    return protocol != Protocol::paxos;
  }
  McFlavor flavor() const {
    switch (protocol) {
      case Protocol::paxos: return McFlavor::paxos;
      case Protocol::vsr: return McFlavor::vsr;
      case Protocol::zab: return McFlavor::zab;
    }
    return McFlavor::paxos;
  }
  Tick mean_delay() const { return (delay.delay_min + delay.delay_max) / 2; }
  Tick eff_progress_timeout() const {
    return progress_timeout ? progress_timeout : 10 * std::max<Tick>(1, mean_delay());
  }
  Tick eff_retry_timeout() const {
    return retry_timeout ? retry_timeout : 4 * std::max<Tick>(1, mean_delay());
  }
  AppState initial_state() const { return AppState::initial(app, register_init); }

  void validate() const;  // throws ConfigError naming the offending key
  nlohmann::ordered_json to_json() const;
};

// Flat key = value text; '#' starts a comment; unknown keys are errors.
ScenarioConfig parse_scenario(const std::string& text);
ScenarioConfig apply_overrides(ScenarioConfig base, const std::vector<std::string>& kvs);

// Deterministic per-client operation scripts derived from config + seed.
std::vector<std::vector<Operation>> build_workload(const ScenarioConfig& cfg);

}  // namespace replab
