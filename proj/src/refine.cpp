#include "replab/refine.hpp"

#include <sstream>

namespace replab {

namespace {

const char* kMappingNames[] = {
    "engine->mc", "engine->mcpo", "mc->active", "mcpo->passive",
    "passive->active", "active->linearizable",
};

struct Enriched {
  const TraceEvent* ev{nullptr};
  std::vector<std::pair<Slot, int32_t>> decided;  // from the certifier stage
  int32_t resolved_val{-1};                       // value for digest-only events
};

class StageBase {
 public:
  virtual ~StageBase() = default;
  virtual std::optional<std::string> step(Enriched& e) = 0;
};

bool cert_index(ProcessId p, uint32_t n, uint16_t& out) {
  if (p.kind != ProcKind::certifier || p.index >= n) return false;
  out = p.index;
  return true;
}

bool repl_index(ProcessId p, uint32_t m, uint16_t& out) {
  if (p.kind != ProcKind::replica || p.index >= m) return false;
  out = p.index;
  return true;
}

// Proposals may come from a replica role or from a certifier that hosts no
// replica; both get a proposer slot in the abstract replica array.
bool proposer_index(ProcessId p, uint32_t m, uint32_t n, uint16_t& out) {
  if (p.kind == ProcKind::replica && p.index < m) {
    out = p.index;
    return true;
  }
  if (p.kind == ProcKind::certifier && p.index < n) {
    out = static_cast<uint16_t>(m + p.index);
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Certifier-level stage: replays the trace against the MultiConsensus
// machine and surfaces the moments slots first reach a certification
// majority.

class McStage : public StageBase {
 public:
  McStage(const ChainConfig& cfg, bool po, ValueTable* vt) : cfg_(cfg), vt_(vt) {
    McConfig mc;
    mc.n = cfg.n;
    mc.replicas = cfg.replicas;
    mc.po = po;
    mc.flavor = cfg.flavor;
    mc.initial_sequencer = cfg.initial_sequencer;
    machine_ = std::make_unique<MultiConsensus>(mc, vt);
  }

  std::optional<std::string> step(Enriched& e) override {
    const TraceEvent& ev = *e.ev;
    uint16_t idx = 0;
    switch (ev.tr) {
      case Tr::propose: {
        if (!ev.val || ev.slot == 0) return "propose without slot or value";
        machine_->add_proposal(ev.slot, vt_->intern(*ev.val));
        return std::nullopt;
      }
      case Tr::certify_seq: {
        if (!ev.val) return "certify_seq without value";
        if (!cert_index(ev.proc, cfg_.n, idx)) return "certify_seq by non-certifier";
        auto a = machine_->certify_seq(idx, ev.slot, ev.round, vt_->intern(*ev.val));
        return outcome(a, e, "certify_seq");
      }
      case Tr::certify: {
        if (!ev.val) return "certify without value";
        if (!cert_index(ev.proc, cfg_.n, idx)) return "certify by non-certifier";
        auto a = machine_->certify(idx, ev.slot, ev.round, vt_->intern(*ev.val));
        return outcome(a, e, "certify");
      }
      case Tr::support_round: {
        if (!cert_index(ev.proc, cfg_.n, idx)) return "support_round by non-certifier";
        uint16_t coord = 0;
        if (!cert_index(ev.peer, cfg_.n, coord)) return "support_round without coordinator";
        auto a = machine_->support(idx, ev.round, coord);
        return outcome(a, e, "support_round");
      }
      case Tr::recover: {
        if (!cert_index(ev.proc, cfg_.n, idx)) return "recover by non-certifier";
        auto a = machine_->recover(idx, ev.round, ev.donors);
        return outcome(a, e, "recover");
      }
      case Tr::adopt_state: {
        if (!cert_index(ev.proc, cfg_.n, idx)) return "adopt_state by non-certifier";
        const auto* view = machine_->view_of(ev.round);
        if (!view) return "adopt_state for a round that never recovered";
        if (view->size() != ev.count)
          return "adopted prefix length " + std::to_string(ev.count) + " differs from view (" +
                 std::to_string(view->size()) + " slots)";
        if (ev.digest != 0 && ev.count > 0) {
          auto it = view->find(ev.count);
          if (it == view->end()) return "adopted view is not a contiguous prefix";
          const Value& last = vt_->at(it->second.val);
          if (last.passive && last.update.new_state.digest() != ev.digest)
            return "adopted state digest differs from the view's final state";
        }
        if (ev.digest != 0 && ev.count == 0 && ev.digest != cfg_.init_state.digest())
          return "adopted empty view with non-initial state";
        auto a = machine_->adopt_view(idx, ev.round);
        return outcome(a, e, "adopt_state");
      }
      case Tr::learn: {
        if (!repl_index(ev.proc, cfg_.replicas, idx)) return "learn by non-replica";
        int32_t vid = decided_value(ev.slot);
        if (vid < 0) return "learn before any certification majority for slot " +
                            std::to_string(ev.slot);
        if (ev.val && vt_->intern(*ev.val) != vid)
          return "learned value differs from the decided value";
        e.resolved_val = vid;
        auto a = machine_->learn(idx, ev.slot, vid);
        return outcome(a, e, "learn");
      }
      default:
        return std::nullopt;  // stutter
    }
  }

  MultiConsensus& machine() { return *machine_; }

 private:
  int32_t decided_value(Slot slot) const {
    for (const auto& [key, entry] : machine_->certified()) {
      if (key.first == slot && entry.certs.size() * 2 > machine_->n()) return entry.val;
    }
    return -1;
  }

  std::optional<std::string> outcome(const MultiConsensus::Applied& a, Enriched& e,
                                     const char* what) {
    if (a.outcome == McOutcome::violation) return machine_->violation();
    if (a.outcome == McOutcome::blocked)
      return std::string(what) + " is not an enabled transition";
    for (const auto& d : a.decided) e.decided.push_back(d);
    return std::nullopt;
  }

  ChainConfig cfg_;
  ValueTable* vt_;
  std::unique_ptr<MultiConsensus> machine_;
};

// ---------------------------------------------------------------------------
// Active replication stage. In update mode the values are state-update
// tuples (the passive->active edge); proposals then require the embedded
// client command to have been invoked.

class ActiveStage : public StageBase {
 public:
  ActiveStage(const ChainConfig& cfg, bool update_mode, ValueTable* vt)
      : cfg_(cfg), update_mode_(update_mode), vt_(vt),
        machine_(cfg.replicas + cfg.n, cfg.init_state, vt) {}

  std::optional<std::string> step(Enriched& e) override {
    const TraceEvent& ev = *e.ev;
    uint16_t idx = 0;
    switch (ev.tr) {
      case Tr::invoke: {
        if (!ev.val) return "invoke without command";
        invoked_.insert(ev.val->cmd.encode());
        if (!update_mode_) machine_.add_input(vt_->intern(*ev.val));
        return std::nullopt;
      }
      case Tr::propose: {
        if (!ev.val || ev.slot == 0) return "propose without slot or value";
        if (!proposer_index(ev.proc, cfg_.replicas, cfg_.n, idx)) return "bad proposer";
        int32_t vid = vt_->intern(*ev.val);
        if (update_mode_) {
          if (!ev.val->passive) return "active proposal in a passive chain";
          if (!invoked_.count(ev.val->cmd.encode()))
            return "proposed update for a command never invoked";
          machine_.add_input(vid);
        }
        if (machine_.propose(idx, ev.slot, vid) != Guard::ok)
          return "propose is not an enabled transition";
        return std::nullopt;
      }
      case Tr::learn: {
        if (!repl_index(ev.proc, cfg_.replicas, idx)) return "learn by non-replica";
        if (machine_.learn(idx, ev.slot) != Guard::ok)
          return "learn is not an enabled transition";
        int32_t got = machine_.replica(idx).learned.at(ev.slot);
        int32_t want = e.resolved_val >= 0 ? e.resolved_val
                       : ev.val ? vt_->intern(*ev.val) : got;
        if (got != want) return "learned value differs from the decision";
        return std::nullopt;
      }
      case Tr::update: {
        if (!repl_index(ev.proc, cfg_.replicas, idx)) return "update by non-replica";
        const auto& rep = machine_.replica(idx);
        if (ev.version != rep.version)
          return "update at version " + std::to_string(ev.version) + " but replica is at " +
                 std::to_string(rep.version);
        auto it = rep.learned.find(rep.version);
        if (it == rep.learned.end()) return "update before learning the slot";
        int32_t vid = it->second;
        if (ev.val && vt_->intern(*ev.val) != vid)
          return "update value differs from the learned decision";
        if (machine_.update(idx) != Guard::ok)
          return "update is not an enabled transition";
        const auto& after = machine_.replica(idx);
        if (ev.digest != 0 && after.state.digest() != ev.digest)
          return "replica state digest mismatch after update";
        e.resolved_val = vid;
        return std::nullopt;
      }
      case Tr::reset_shadow:
        if (!update_mode_) return "reset_shadow in an active chain";
        return std::nullopt;  // stutter at this level
      default:
        break;
    }
    for (const auto& [slot, vid] : e.decided) {
      if (machine_.decide(slot, vid) != Guard::ok)
        return "decision for slot " + std::to_string(slot) +
               " is not enabled (already decided or never proposed)";
    }
    return std::nullopt;
  }

 private:
  ChainConfig cfg_;
  bool update_mode_;
  ValueTable* vt_;
  ActiveReplication machine_;
  std::set<std::string> invoked_;
};

// ---------------------------------------------------------------------------
// Passive replication stage: proposals must chain to the proposer's shadow
// state and decisions to the previous slot's decided state.

class PassiveStage : public StageBase {
 public:
  PassiveStage(const ChainConfig& cfg, ValueTable* vt, McStage* mc)
      : cfg_(cfg), vt_(vt), mc_(mc),
        machine_(cfg.replicas + cfg.n, cfg.init_state, vt) {}

  std::optional<std::string> step(Enriched& e) override {
    const TraceEvent& ev = *e.ev;
    uint16_t idx = 0;
    switch (ev.tr) {
      case Tr::invoke: {
        if (!ev.val) return "invoke without command";
        machine_.add_input(ev.val->cmd);
        return std::nullopt;
      }
      case Tr::propose: {
        if (!ev.val || !ev.val->passive) return "passive propose without update value";
        if (!proposer_index(ev.proc, cfg_.replicas, cfg_.n, idx)) return "bad proposer";
        const auto& rep = machine_.replica(idx);
        if (rep.shadow_version != ev.slot)
          return "proposal for slot " + std::to_string(ev.slot) + " but shadow version is " +
                 std::to_string(rep.shadow_version);
        if (rep.shadow_state.digest() != ev.val->update.old_digest)
          return "proposal does not chain to the proposer's shadow state";
        if (machine_.propose(idx, ev.val->cmd) != Guard::ok)
          return "propose is not an enabled transition";
        // the machine computed the update itself; it must equal the traced one
        const auto& props = machine_.replica(idx).proposals.at(ev.slot);
        if (!props.count(vt_->intern(*ev.val)))
          return "traced update differs from the shadow execution";
        return std::nullopt;
      }
      case Tr::reset_shadow: {
        if (!proposer_index(ev.proc, cfg_.replicas, cfg_.n, idx)) return "bad proposer";
        AppState state;
        if (!resolve_state(ev, state)) return "cannot resolve shadow reset state";
        if (ev.digest != 0 && state.digest() != ev.digest)
          return "shadow reset digest mismatch";
        if (machine_.reset_shadow(idx, ev.version, state) != Guard::ok)
          return "reset_shadow is not an enabled transition";
        return std::nullopt;
      }
      case Tr::learn: {
        if (!repl_index(ev.proc, cfg_.replicas, idx)) return "learn by non-replica";
        if (machine_.learn(idx, ev.slot) != Guard::ok)
          return "learn is not an enabled transition";
        int32_t got = machine_.replica(idx).learned.at(ev.slot);
        int32_t want = e.resolved_val >= 0 ? e.resolved_val
                       : ev.val ? vt_->intern(*ev.val) : got;
        if (got != want) return "learned value differs from the decision";
        return std::nullopt;
      }
      case Tr::update: {
        if (!repl_index(ev.proc, cfg_.replicas, idx)) return "update by non-replica";
        const auto& rep = machine_.replica(idx);
        if (ev.version != rep.version)
          return "update at version " + std::to_string(ev.version) + " but replica is at " +
                 std::to_string(rep.version);
        auto it = rep.learned.find(rep.version);
        if (it == rep.learned.end()) return "update before learning the slot";
        int32_t vid = it->second;
        if (ev.val && vt_->intern(*ev.val) != vid)
          return "update value differs from the learned decision";
        if (machine_.update(idx) != Guard::ok)
          return "update is not an enabled transition";
        const auto& after = machine_.replica(idx);
        if (ev.digest != 0 && after.state.digest() != ev.digest)
          return "replica state digest mismatch after update";
        e.resolved_val = vid;
        return std::nullopt;
      }
      default:
        break;
    }
    for (const auto& [slot, vid] : e.decided) {
      if (machine_.decide(slot, vid) != Guard::ok)
        return "decision for slot " + std::to_string(slot) +
               " violates prefix order or was already taken";
    }
    return std::nullopt;
  }

 private:
  // Shadow resets name a version; the state is the recovered view's value for
  // version-1, or the initial state.
  bool resolve_state(const TraceEvent& ev, AppState& out) {
    if (ev.version == 0) return false;
    if (ev.version == 1) {
      out = cfg_.init_state;
      return true;
    }
    int node = ev.proc.kind == ProcKind::certifier ? ev.proc.index : ev.proc.index;
    if (node < 0 || node >= static_cast<int>(cfg_.n)) return false;
    ProgressPI p = mc_->machine().pi(static_cast<uint16_t>(node), ev.version - 1);
    if (p.val < 0) return false;
    const Value& v = mc_->machine().values().at(p.val);
    if (!v.passive) return false;
    out = v.update.new_state;
    return true;
  }

  ChainConfig cfg_;
  ValueTable* vt_;
  McStage* mc_;
  PassiveReplication machine_;
};

// ---------------------------------------------------------------------------
// Linearizable service stage. The first update to reach a new global version
// realizes the internal execute transition; later updates of the same slot
// must reproduce the recorded state digest.

class LinStage : public StageBase {
 public:
  LinStage(const ChainConfig& cfg, ValueTable* vt) : vt_(vt), machine_(cfg.init_state) {
    digest_history_.push_back(cfg.init_state.digest());
  }

  std::optional<std::string> step(Enriched& e) override {
    const TraceEvent& ev = *e.ev;
    switch (ev.tr) {
      case Tr::invoke: {
        if (!ev.val) return "invoke without command";
        if (machine_.invoke(ev.val->cmd) != Guard::ok)
          return "operation invoked twice";
        return std::nullopt;
      }
      case Tr::update: {
        int32_t vid = e.resolved_val >= 0 ? e.resolved_val
                      : ev.val ? vt_->intern(*ev.val) : -1;
        if (vid < 0) return "update value could not be resolved";
        const Value& v = vt_->at(vid);
        uint32_t slot = ev.version;
        if (slot == executed_ + 1) {
          if (machine_.execute(v) != Guard::ok)
            return "execute is not enabled (uninvoked command or broken state chain)";
          executed_ = slot;
          digest_history_.push_back(machine_.state().digest());
          if (ev.digest != 0 && ev.digest != digest_history_.back())
            return "service state diverges from the executing replica";
        } else if (slot <= executed_) {
          if (ev.digest != 0 && ev.digest != digest_history_.at(slot))
            return "lagging replica state diverges from the service history";
        } else {
          return "update skipped ahead of the service history";
        }
        return std::nullopt;
      }
      case Tr::response: {
        if (!ev.val || !ev.res) return "response without command or result";
        if (machine_.response(ev.val->cmd.client, ev.val->cmd.op_seq, *ev.res) != Guard::ok)
          return "response without a matching executed output, or duplicated";
        return std::nullopt;
      }
      default:
        return std::nullopt;
    }
  }

 private:
  ValueTable* vt_;
  LinearizableService machine_;
  std::vector<uint64_t> digest_history_;
  uint32_t executed_{0};
};

}  // namespace

std::string to_string(Mapping m) { return kMappingNames[static_cast<size_t>(m)]; }

bool parse_mapping(std::string_view s, Mapping& out) {
  for (size_t i = 0; i < sizeof(kMappingNames) / sizeof(kMappingNames[0]); ++i) {
    if (s == kMappingNames[i]) {
      out = static_cast<Mapping>(i);
      return true;
    }
  }
  return false;
}

std::map<Slot, Value> derive_decisions_from(const std::vector<CertRecord>& certified,
                                            uint32_t n, std::string* conflict) {
  std::map<std::pair<Slot, RoundId>, std::pair<int32_t, std::set<uint16_t>>> tally;
  ValueTable vt;
  for (const auto& rec : certified) {
    auto& cell = tally[{rec.slot, rec.round}];
    int32_t vid = vt.intern(rec.val);
    if (cell.second.empty()) cell.first = vid;
    else if (cell.first != vid && conflict)
      *conflict = "two values certified for slot " + std::to_string(rec.slot) + " in round " +
                  to_string(rec.round);
    cell.second.insert(rec.cert);
  }
  std::map<Slot, Value> out;
  for (const auto& [key, cell] : tally) {
    if (cell.second.size() * 2 <= n) continue;
    auto it = out.find(key.first);
    if (it == out.end()) out[key.first] = vt.at(cell.first);
    else if (!(it->second == vt.at(cell.first)) && conflict)
      *conflict = "slot " + std::to_string(key.first) + " decided with two values";
  }
  return out;
}

struct ChainChecker::Impl {
  ValueTable vt;
  ChainConfig cfg;
  std::vector<Mapping> chain;
  std::vector<std::unique_ptr<StageBase>> stages;
  bool failed{false};
};

ChainChecker::ChainChecker(std::vector<Mapping> chain, ChainConfig cfg)
    : impl_(std::make_unique<Impl>()) {
  impl_->cfg = cfg;
  impl_->chain = chain;
  McStage* mc = nullptr;
  for (Mapping m : chain) {
    switch (m) {
      case Mapping::engine_to_mc: {
        auto s = std::make_unique<McStage>(cfg, false, &impl_->vt);
        mc = s.get();
        impl_->stages.push_back(std::move(s));
        break;
      }
      case Mapping::engine_to_mcpo: {
        auto s = std::make_unique<McStage>(cfg, true, &impl_->vt);
        mc = s.get();
        impl_->stages.push_back(std::move(s));
        break;
      }
      case Mapping::mc_to_active:
        impl_->stages.push_back(std::make_unique<ActiveStage>(cfg, false, &impl_->vt));
        break;
      case Mapping::mcpo_to_passive:
        impl_->stages.push_back(std::make_unique<PassiveStage>(cfg, &impl_->vt, mc));
        break;
      case Mapping::passive_to_active:
        impl_->stages.push_back(std::make_unique<ActiveStage>(cfg, true, &impl_->vt));
        break;
      case Mapping::active_to_linearizable:
        impl_->stages.push_back(std::make_unique<LinStage>(cfg, &impl_->vt));
        break;
    }
    verdicts_.push_back({m, Verdict{}});
  }
}

ChainChecker::~ChainChecker() = default;

void ChainChecker::on_event(const TraceEvent& ev) {
  if (impl_->failed) return;
  Enriched e;
  e.ev = &ev;
  for (size_t i = 0; i < impl_->stages.size(); ++i) {
    auto err = impl_->stages[i]->step(e);
    if (err) {
      verdicts_[i].second.accepted = false;
      verdicts_[i].second.fail_seq = ev.seq;
      verdicts_[i].second.reason = *err;
      impl_->failed = true;
      return;
    }
  }
}

void ChainChecker::finish() {}

bool ChainChecker::all_accepted() const {
  for (const auto& [m, v] : verdicts_)
    if (!v.accepted) return false;
  return true;
}

std::string ChainChecker::summary() const {
  std::ostringstream os;
  for (const auto& [m, v] : verdicts_) {
    os << to_string(m) << ": " << (v.accepted ? "accepted" : "REJECTED") ;
    if (!v.accepted) os << " at event " << v.fail_seq << " (" << v.reason << ")";
    os << '\n';
  }
  return os.str();
}

std::vector<std::pair<Mapping, Verdict>> check_chain(const std::vector<TraceEvent>& trace,
                                                     const std::vector<Mapping>& chain,
                                                     const ChainConfig& cfg) {
  ChainChecker checker(chain, cfg);
  for (const auto& ev : trace) checker.on_event(ev);
  checker.finish();
  return checker.verdicts();
}

std::vector<Mapping> default_chain(McFlavor flavor, bool po) {
  if (flavor == McFlavor::paxos && !po)
    return {Mapping::engine_to_mc, Mapping::mc_to_active, Mapping::active_to_linearizable};
  if (!po)
    return {Mapping::engine_to_mc, Mapping::mc_to_active, Mapping::active_to_linearizable};
  return {Mapping::engine_to_mcpo, Mapping::mcpo_to_passive, Mapping::passive_to_active,
          Mapping::active_to_linearizable};
}

}  // namespace replab
