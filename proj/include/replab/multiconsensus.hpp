#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "replab/specs.hpp"
#include "replab/types.hpp"

namespace replab {

// Per-slot progress indicator: a round id and a certified value (or none).
struct ProgressPI {
  RoundId round{};
  int32_t val{-1};  // interned value id, -1 = none

  friend auto operator<=>(const ProgressPI&, const ProgressPI&) = default;
};

// Strict total order on progress indicators of one slot.
inline bool pi_greater(const ProgressPI& a, const ProgressPI& b) {
  if (a.round != b.round) return a.round > b.round;
  return a.val >= 0 && b.val < 0;
}

// Two indicators for the same (slot, round) must agree when both hold values.
inline bool pi_conflict(const ProgressPI& a, const ProgressPI& b) {
  return a.round == b.round && a.val >= 0 && b.val >= 0 && a.val != b.val;
}

enum class McOutcome : uint8_t { ok, blocked, violation };

enum class McFlavor : uint8_t { generic, paxos, zab, vsr };

struct McConfig {
  uint32_t n{3};
  uint32_t replicas{1};
  bool po{false};
  McFlavor flavor{McFlavor::generic};
  // Certifier holding the sequencer role of round 0 at start; -1 leaves round
  // 0 without a sequencer.
  int initial_sequencer{0};
};

struct McStep {
  enum class K : uint8_t { certify_seq, certify, learn, support, recover } k{K::certify};
  uint16_t cert{0};
  Slot slot{0};
  RoundId round{};
  int32_t val{-1};
  uint16_t coord{0};
  uint32_t donor_mask{0};
  uint16_t replica{0};
};

std::string to_string(const McStep& s);

struct McBounds {
  Slot max_slot{1};
  uint32_t max_round_counter{1};
  std::vector<uint16_t> coords;  // prospective sequencers; empty = all
  bool enumerate_learn{true};
};

// Certifier/round transition system: certification, round support with
// snapshot publication, and sequencer recovery by majority merge. Serves as
// the reference machine for the trace checker and the exhaustive explorer.
class MultiConsensus {
 public:
  struct Certifier {
    RoundId bev{};
    bool seq_role{false};
    RoundId floor{};  // slots without an entry hold (floor, none)
    std::map<Slot, ProgressPI> prog;
  };
  struct Snapshot {
    uint16_t coord{0};
    RoundId floor{};
    std::map<Slot, ProgressPI> prog;
  };
  struct CertEntry {
    int32_t val{-1};
    std::set<uint16_t> certs;
  };

  MultiConsensus(McConfig cfg, ValueTable* vt);

  // Transition results; `decided` lists slots whose first majority was
  // completed by this step.
  struct Applied {
    McOutcome outcome{McOutcome::blocked};
    std::vector<std::pair<Slot, int32_t>> decided;
  };

  Applied certify_seq(uint16_t c, Slot slot, RoundId round, int32_t vid);
  Applied certify(uint16_t c, Slot slot, RoundId round, int32_t vid);
  Applied support(uint16_t c, RoundId round, uint16_t coord);
  Applied recover(uint16_t c, RoundId round, const std::vector<uint16_t>& donors);
  Applied learn(uint16_t replica, Slot slot, int32_t vid);
  // Follower copies the recovered sequencer's whole snapshot for `round`:
  // every slot moves to that round, certifying the view's values and lifting
  // empty slots past any value no majority can still decide.
  Applied adopt_view(uint16_t c, RoundId round);
  const std::map<Slot, ProgressPI>* view_of(RoundId round) const;

  void add_proposal(Slot slot, int32_t vid) { proposals_[slot].insert(vid); }
  bool proposed(Slot slot, int32_t vid) const {
    auto it = proposals_.find(slot);
    return it != proposals_.end() && it->second.count(vid) > 0;
  }

  ProgressPI pi(uint16_t c, Slot slot) const;
  const Certifier& certifier(uint16_t c) const { return certs_.at(c); }
  const std::map<std::pair<Slot, RoundId>, CertEntry>& certified() const { return certified_; }
  const std::map<Slot, int32_t>& learned(uint16_t replica) const { return learned_.at(replica); }
  const std::string& violation() const { return violation_; }
  uint32_t n() const { return cfg_.n; }
  const McConfig& config() const { return cfg_; }
  ValueTable& values() { return *vt_; }

  // Majority-certified value per slot; sets `conflict` if two distinct values
  // qualify for one slot.
  std::map<Slot, int32_t> derive_decisions(std::string* conflict = nullptr) const;

  // Extra cross-state checks for exploration: one sequencer per round,
  // gapless chained decisions under prefix order.
  std::optional<std::string> check_invariants() const;

  std::vector<McStep> enabled(const McBounds& bounds) const;
  Applied apply(const McStep& s);
  std::string canonical() const;

  // RoundStamp of a certifier's current progress: highest certified round and
  // the number of slots certified in it.
  RoundStamp stamp_of(uint16_t c) const;

 private:
  Applied add_certified(uint16_t c, Slot slot, RoundId round, int32_t vid);
  static RoundStamp stamp_of_snapshot(const Snapshot& s);

  McConfig cfg_;
  ValueTable* vt_;
  std::vector<Certifier> certs_;
  std::map<std::pair<Slot, RoundId>, CertEntry> certified_;
  std::map<std::pair<uint16_t, RoundId>, Snapshot> snapshots_;
  std::map<Slot, std::set<int32_t>> proposals_;
  std::vector<std::map<Slot, int32_t>> learned_;
  std::set<RoundId> recovered_rounds_;  // vsr: one sequencer appointment per round
  std::map<RoundId, std::map<Slot, ProgressPI>> views_;  // merged progress per recovered round
  std::string violation_;
};

}  // namespace replab
