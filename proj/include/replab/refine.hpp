#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "replab/multiconsensus.hpp"
#include "replab/specs.hpp"
#include "replab/trace.hpp"

namespace replab {

enum class Mapping : uint8_t {
  engine_to_mc,
  engine_to_mcpo,
  mc_to_active,
  mcpo_to_passive,
  passive_to_active,
  active_to_linearizable,
};

std::string to_string(Mapping m);
bool parse_mapping(std::string_view s, Mapping& out);

struct Verdict {
  bool accepted{true};
  uint64_t fail_seq{0};
  std::string reason;
};

struct ChainConfig {
  uint32_t n{3};
  uint32_t replicas{1};
  AppState init_state;
  McFlavor flavor{McFlavor::paxos};
  int initial_sequencer{0};
};

// Standalone form of the certified-to-decisions projection: a slot is decided
// on v iff more than n/2 certifiers certified v in one round.
struct CertRecord {
  uint16_t cert{0};
  Slot slot{0};
  RoundId round{};
  Value val{};
};
std::map<Slot, Value> derive_decisions_from(const std::vector<CertRecord>& certified,
                                            uint32_t n, std::string* conflict);

// Replays a concrete trace against one abstract machine per mapping edge.
// Events either match an enabled abstract transition or are stutters; the
// first mismatch yields a failure with the offending event.
class ChainChecker {
 public:
  ChainChecker(std::vector<Mapping> chain, ChainConfig cfg);
  ~ChainChecker();

  void on_event(const TraceEvent& ev);
  void finish();  // final cross-checks (service state coherence)

  const std::vector<std::pair<Mapping, Verdict>>& verdicts() const { return verdicts_; }
  bool all_accepted() const;
  std::string summary() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::vector<std::pair<Mapping, Verdict>> verdicts_;
};

// Convenience wrapper: run the whole chain over a trace.
std::vector<std::pair<Mapping, Verdict>> check_chain(const std::vector<TraceEvent>& trace,
                                                     const std::vector<Mapping>& chain,
                                                     const ChainConfig& cfg);

// Default mapping chain for a protocol.
std::vector<Mapping> default_chain(McFlavor flavor, bool po);

}  // namespace replab
