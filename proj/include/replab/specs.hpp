#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "replab/app.hpp"
#include "replab/types.hpp"

namespace replab {

// Guarded transitions return blocked when their precondition fails; that is a
// contract for enumeration, not an error.
enum class Guard : uint8_t { ok, blocked };

// Shared transition descriptor for the abstract machines; fields are
// interpreted per transition kind.
struct SpecStep {
  enum class K : uint8_t {
    invoke, execute, response, propose, decide, learn, update, reset_shadow
  } k{K::invoke};
  uint16_t replica{0};
  Slot slot{0};
  int32_t value{-1};   // index into the machine's interned value table
  uint16_t client{0};
  uint32_t op_seq{0};
  int32_t aux{-1};     // reset_shadow source replica
};

std::string to_string(SpecStep::K k);

// Interned value table shared by machines and checkers. Identity is the
// canonical encoding, so distinct values never collide.
class ValueTable {
 public:
  int32_t intern(const Value& v) {
    auto key = v.encode();
    auto it = ids_.find(key);
    if (it != ids_.end()) return it->second;
    int32_t id = static_cast<int32_t>(values_.size());
    values_.push_back(v);
    ids_.emplace(std::move(key), id);
    return id;
  }
  const Value& at(int32_t id) const { return values_.at(size_t(id)); }
  size_t size() const { return values_.size(); }

 private:
  std::vector<Value> values_;
  std::map<std::string, int32_t> ids_;
};

// Client-facing service: invoke / execute / response over one application
// state. The execute transition may fire any number of times per command.
class LinearizableService {
 public:
  explicit LinearizableService(AppState init) : state_(std::move(init)) {}

  Guard invoke(const Command& cmd);
  Guard execute(const Value& v);  // applies next_state or a state update
  Guard response(ProcessId client, uint32_t op_seq, const Result& res);

  const AppState& state() const { return state_; }
  bool in_inputs(const Command& cmd) const { return inputs_.count(cmd.encode()) > 0; }
  bool in_outputs(const Command& cmd, const Result& res) const;
  const std::vector<uint64_t>& digest_history() const { return digest_history_; }

 private:
  AppState state_;
  std::set<std::string> inputs_;                       // command keys
  std::set<std::pair<std::string, Result>> outputs_;
  std::map<ProcessId, std::set<uint32_t>> invoked_;
  std::map<ProcessId, std::set<uint32_t>> received_;
  std::vector<uint64_t> digest_history_;               // digest after k executes
};

// Slot-based replication. Proposals are raw commands; update executes the
// learned command on the local state.
class ActiveReplication {
 public:
  struct Replica {
    std::map<Slot, std::set<int32_t>> proposals;
    std::map<Slot, int32_t> learned;
    AppState state;
    uint32_t version{1};
  };

  ActiveReplication(size_t n_replicas, AppState init, ValueTable* vt);

  Guard propose(uint16_t r, Slot slot, int32_t vid);
  Guard decide(Slot slot, int32_t vid);
  Guard learn(uint16_t r, Slot slot);
  Guard update(uint16_t r);

  void add_input(int32_t vid) { inputs_.insert(vid); }
  const std::map<Slot, int32_t>& decisions() const { return decisions_; }
  const Replica& replica(uint16_t r) const { return replicas_.at(r); }
  size_t n_replicas() const { return replicas_.size(); }
  const std::set<std::pair<int32_t, Result>>& outputs() const { return outputs_; }

  std::vector<SpecStep> enabled(Slot max_slot) const;
  Guard apply(const SpecStep& s);
  std::string canonical() const;

 private:
  ValueTable* vt_;
  std::set<int32_t> inputs_;
  std::map<Slot, int32_t> decisions_;
  std::vector<Replica> replicas_;
  std::set<std::pair<int32_t, Result>> outputs_;
};

// Primary-backup replication. Proposals carry (oldState, cmd, res, newState)
// provenance; decide chains each slot to the state decided in the prior one.
class PassiveReplication {
 public:
  struct Replica {
    std::map<Slot, std::set<int32_t>> proposals;
    std::map<Slot, int32_t> learned;
    AppState state;
    uint32_t version{1};
    AppState shadow_state;
    uint32_t shadow_version{1};
  };

  PassiveReplication(size_t n_replicas, AppState init, ValueTable* vt);

  Guard propose(uint16_t r, const Command& cmd);  // slot = shadow version
  Guard decide(Slot slot, int32_t vid);
  Guard learn(uint16_t r, Slot slot);
  Guard update(uint16_t r);
  Guard reset_shadow(uint16_t r, uint32_t version, const AppState& state);

  void add_input(const Command& cmd) { inputs_.insert(cmd.encode()); cmd_menu_.push_back(cmd); }
  const std::map<Slot, int32_t>& decisions() const { return decisions_; }
  const Replica& replica(uint16_t r) const { return replicas_.at(r); }
  const std::set<std::pair<int32_t, Result>>& outputs() const { return outputs_; }

  std::vector<SpecStep> enabled(Slot max_slot) const;
  Guard apply(const SpecStep& s);
  std::string canonical() const;

 private:
  ValueTable* vt_;
  std::set<std::string> inputs_;
  std::vector<Command> cmd_menu_;
  std::map<Slot, int32_t> decisions_;
  std::vector<Replica> replicas_;
  std::set<std::pair<int32_t, Result>> outputs_;
};

// Highest-version replica state; all maximal-version replicas must agree by
// digest.
struct ServiceStateView {
  bool ok{true};
  AppState state;
  std::string error;
};
ServiceStateView derive_service_state(const std::vector<std::pair<uint32_t, AppState>>& replicas);

}  // namespace replab
