#include "replab/specs.hpp"

#include <sstream>

namespace replab {

std::string to_string(SpecStep::K k) {
  switch (k) {
    case SpecStep::K::invoke: return "invoke";
    case SpecStep::K::execute: return "execute";
    case SpecStep::K::response: return "response";
    case SpecStep::K::propose: return "propose";
    case SpecStep::K::decide: return "decide";
    case SpecStep::K::learn: return "learn";
    case SpecStep::K::update: return "update";
    case SpecStep::K::reset_shadow: return "reset_shadow";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// LinearizableService

Guard LinearizableService::invoke(const Command& cmd) {
  auto& inv = invoked_[cmd.client];
  if (inv.count(cmd.op_seq)) return Guard::blocked;
  inv.insert(cmd.op_seq);
  inputs_.insert(cmd.encode());
  return Guard::ok;
}

Guard LinearizableService::execute(const Value& v) {
  if (!inputs_.count(v.cmd.encode())) return Guard::blocked;
  Result res;
  AppState ns;
  if (v.passive) {
    ApplyOutcome out = apply_update(state_, v);
    if (!out.ok) return Guard::blocked;  // update does not chain to this state
    res = out.res;
    ns = out.state;
  } else {
    auto [r, s] = next_state(state_, v.cmd);
    res = r;
    ns = s;
  }
  state_ = ns;
  digest_history_.push_back(state_.digest());
  outputs_.insert({v.cmd.encode(), res});
  return Guard::ok;
}

bool LinearizableService::in_outputs(const Command& cmd, const Result& res) const {
  return outputs_.count({cmd.encode(), res}) > 0;
}

Guard LinearizableService::response(ProcessId client, uint32_t op_seq, const Result& res) {
  bool found = false;
  for (const auto& [key, r] : outputs_) {
    if (r == res) {
      Command probe;
      // command keys start with "<client>#<seq>:"
      std::string prefix = to_string(client) + "#" + std::to_string(op_seq) + ":";
      if (key.rfind(prefix, 0) == 0) {
        found = true;
        break;
      }
    }
  }
  if (!found) return Guard::blocked;
  auto& rec = received_[client];
  if (rec.count(op_seq)) return Guard::blocked;
  rec.insert(op_seq);
  return Guard::ok;
}

// ---------------------------------------------------------------------------
// ActiveReplication

ActiveReplication::ActiveReplication(size_t n, AppState init, ValueTable* vt) : vt_(vt) {
  replicas_.resize(n);
  for (auto& r : replicas_) r.state = init;
}

Guard ActiveReplication::propose(uint16_t r, Slot slot, int32_t vid) {
  if (r >= replicas_.size() || slot == 0) return Guard::blocked;
  if (!inputs_.count(vid)) return Guard::blocked;
  auto& rep = replicas_[r];
  if (rep.learned.count(slot)) return Guard::blocked;
  rep.proposals[slot].insert(vid);
  return Guard::ok;
}

Guard ActiveReplication::decide(Slot slot, int32_t vid) {
  if (decisions_.count(slot)) return Guard::blocked;
  bool proposed = false;
  for (const auto& rep : replicas_) {
    auto it = rep.proposals.find(slot);
    if (it != rep.proposals.end() && it->second.count(vid)) {
      proposed = true;
      break;
    }
  }
  if (!proposed) return Guard::blocked;
  decisions_[slot] = vid;
  return Guard::ok;
}

Guard ActiveReplication::learn(uint16_t r, Slot slot) {
  auto& rep = replicas_.at(r);
  if (rep.learned.count(slot)) return Guard::blocked;
  auto it = decisions_.find(slot);
  if (it == decisions_.end()) return Guard::blocked;
  rep.learned[slot] = it->second;
  return Guard::ok;
}

Guard ActiveReplication::update(uint16_t r) {
  auto& rep = replicas_.at(r);
  auto it = rep.learned.find(rep.version);
  if (it == rep.learned.end()) return Guard::blocked;
  const Value& v = vt_->at(it->second);
  Result res;
  AppState ns;
  if (v.passive) {
    ApplyOutcome out = apply_update(rep.state, v);
    if (!out.ok) return Guard::blocked;
    res = out.res;
    ns = out.state;
  } else {
    auto [rr, ss] = next_state(rep.state, v.cmd);
    res = rr;
    ns = ss;
  }
  outputs_.insert({it->second, res});
  rep.state = ns;
  rep.version += 1;
  return Guard::ok;
}

std::vector<SpecStep> ActiveReplication::enabled(Slot max_slot) const {
  std::vector<SpecStep> out;
  for (uint16_t r = 0; r < replicas_.size(); ++r) {
    const auto& rep = replicas_[r];
    // walk rule: propose in the lowest slot with no proposals and nothing learned
    for (Slot s = 1; s <= max_slot; ++s) {
      if (rep.learned.count(s)) continue;
      auto it = rep.proposals.find(s);
      if (it != rep.proposals.end() && !it->second.empty()) continue;
      for (int32_t vid : inputs_) {
        SpecStep st;
        st.k = SpecStep::K::propose;
        st.replica = r;
        st.slot = s;
        st.value = vid;
        out.push_back(st);
      }
      break;
    }
    for (const auto& [slot, vid] : decisions_) {
      if (!rep.learned.count(slot)) {
        SpecStep st;
        st.k = SpecStep::K::learn;
        st.replica = r;
        st.slot = slot;
        out.push_back(st);
      }
    }
    if (rep.learned.count(rep.version)) {
      SpecStep st;
      st.k = SpecStep::K::update;
      st.replica = r;
      out.push_back(st);
    }
  }
  for (Slot s = 1; s <= max_slot; ++s) {
    if (decisions_.count(s)) continue;
    std::set<int32_t> candidates;
    for (const auto& rep : replicas_) {
      auto it = rep.proposals.find(s);
      if (it != rep.proposals.end())
        candidates.insert(it->second.begin(), it->second.end());
    }
    for (int32_t vid : candidates) {
      SpecStep st;
      st.k = SpecStep::K::decide;
      st.slot = s;
      st.value = vid;
      out.push_back(st);
    }
  }
  return out;
}

Guard ActiveReplication::apply(const SpecStep& s) {
  switch (s.k) {
    case SpecStep::K::propose: return propose(s.replica, s.slot, s.value);
    case SpecStep::K::decide: return decide(s.slot, s.value);
    case SpecStep::K::learn: return learn(s.replica, s.slot);
    case SpecStep::K::update: return update(s.replica);
    default: return Guard::blocked;
  }
}

std::string ActiveReplication::canonical() const {
  std::ostringstream os;
  for (const auto& [slot, vid] : decisions_) os << 'd' << slot << '=' << vt_->at(vid).encode() << ';';
  for (const auto& rep : replicas_) {
    os << "|v" << rep.version << '@' << rep.state.encode() << ';';
    for (const auto& [slot, vids] : rep.proposals) {
      os << 'p' << slot << ':';
      for (int32_t v : vids) os << vt_->at(v).encode() << ',';
    }
    for (const auto& [slot, vid] : rep.learned) os << 'l' << slot << '=' << vt_->at(vid).encode() << ';';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// PassiveReplication

PassiveReplication::PassiveReplication(size_t n, AppState init, ValueTable* vt) : vt_(vt) {
  replicas_.resize(n);
  for (auto& r : replicas_) {
    r.state = init;
    r.shadow_state = init;
  }
}

Guard PassiveReplication::propose(uint16_t r, const Command& cmd) {
  if (r >= replicas_.size()) return Guard::blocked;
  if (!inputs_.count(cmd.encode())) return Guard::blocked;
  auto& rep = replicas_[r];
  Slot slot = rep.shadow_version;
  if (rep.learned.count(slot)) return Guard::blocked;
  Value v = Value::passive_from(rep.shadow_state, cmd);
  rep.proposals[slot].insert(vt_->intern(v));
  rep.shadow_state = v.update.new_state;
  rep.shadow_version = slot + 1;
  return Guard::ok;
}

Guard PassiveReplication::decide(Slot slot, int32_t vid) {
  if (decisions_.count(slot)) return Guard::blocked;
  const Value& v = vt_->at(vid);
  bool proposed = false;
  for (const auto& rep : replicas_) {
    auto it = rep.proposals.find(slot);
    if (it != rep.proposals.end() && it->second.count(vid)) {
      proposed = true;
      break;
    }
  }
  if (!proposed) return Guard::blocked;
  if (slot > 1) {
    auto prev = decisions_.find(slot - 1);
    if (prev == decisions_.end()) return Guard::blocked;
    if (vt_->at(prev->second).update.new_state.digest() != v.update.old_digest)
      return Guard::blocked;
  }
  decisions_[slot] = vid;
  return Guard::ok;
}

Guard PassiveReplication::learn(uint16_t r, Slot slot) {
  auto& rep = replicas_.at(r);
  if (rep.learned.count(slot)) return Guard::blocked;
  auto it = decisions_.find(slot);
  if (it == decisions_.end()) return Guard::blocked;
  rep.learned[slot] = it->second;
  return Guard::ok;
}

Guard PassiveReplication::update(uint16_t r) {
  auto& rep = replicas_.at(r);
  auto it = rep.learned.find(rep.version);
  if (it == rep.learned.end()) return Guard::blocked;
  const Value& v = vt_->at(it->second);
  outputs_.insert({it->second, v.update.res});
  rep.state = v.update.new_state;
  rep.version += 1;
  return Guard::ok;
}

Guard PassiveReplication::reset_shadow(uint16_t r, uint32_t version, const AppState& state) {
  auto& rep = replicas_.at(r);
  if (version < rep.version) return Guard::blocked;
  if (version == rep.version && !(state == rep.state)) return Guard::blocked;
  rep.shadow_state = state;
  rep.shadow_version = version;
  return Guard::ok;
}

std::vector<SpecStep> PassiveReplication::enabled(Slot max_slot) const {
  std::vector<SpecStep> out;
  for (uint16_t r = 0; r < replicas_.size(); ++r) {
    const auto& rep = replicas_[r];
    if (rep.shadow_version <= max_slot && !rep.learned.count(rep.shadow_version)) {
      for (size_t c = 0; c < cmd_menu_.size(); ++c) {
        SpecStep st;
        st.k = SpecStep::K::propose;
        st.replica = r;
        st.value = static_cast<int32_t>(c);  // index into cmd_menu_
        out.push_back(st);
      }
    }
    for (const auto& [slot, vid] : decisions_) {
      if (!rep.learned.count(slot)) {
        SpecStep st;
        st.k = SpecStep::K::learn;
        st.replica = r;
        st.slot = slot;
        out.push_back(st);
      }
    }
    if (rep.learned.count(rep.version)) {
      SpecStep st;
      st.k = SpecStep::K::update;
      st.replica = r;
      out.push_back(st);
    }
    // reset targets drawn from other replicas' current (version, state)
    for (uint16_t src = 0; src < replicas_.size(); ++src) {
      if (replicas_[src].version >= rep.version) {
        SpecStep st;
        st.k = SpecStep::K::reset_shadow;
        st.replica = r;
        st.aux = src;
        out.push_back(st);
      }
    }
  }
  for (Slot s = 1; s <= max_slot; ++s) {
    if (decisions_.count(s)) continue;
    std::set<int32_t> candidates;
    for (const auto& rep : replicas_) {
      auto it = rep.proposals.find(s);
      if (it != rep.proposals.end())
        candidates.insert(it->second.begin(), it->second.end());
    }
    for (int32_t vid : candidates) {
      SpecStep st;
      st.k = SpecStep::K::decide;
      st.slot = s;
      st.value = vid;
      out.push_back(st);
    }
  }
  return out;
}

Guard PassiveReplication::apply(const SpecStep& s) {
  switch (s.k) {
    case SpecStep::K::propose: return propose(s.replica, cmd_menu_.at(size_t(s.value)));
    case SpecStep::K::decide: return decide(s.slot, s.value);
    case SpecStep::K::learn: return learn(s.replica, s.slot);
    case SpecStep::K::update: return update(s.replica);
    case SpecStep::K::reset_shadow: {
      const auto& src = replicas_.at(size_t(s.aux));
      return reset_shadow(s.replica, src.version, src.state);
    }
    default: return Guard::blocked;
  }
}

std::string PassiveReplication::canonical() const {
  std::ostringstream os;
  for (const auto& [slot, vid] : decisions_) os << 'd' << slot << '=' << vt_->at(vid).encode() << ';';
  for (const auto& rep : replicas_) {
    os << "|v" << rep.version << '@' << rep.state.encode() << "~sv" << rep.shadow_version
       << '@' << rep.shadow_state.encode() << ';';
    for (const auto& [slot, vids] : rep.proposals) {
      os << 'p' << slot << ':';
      for (int32_t v : vids) os << vt_->at(v).encode() << ',';
    }
    for (const auto& [slot, vid] : rep.learned) os << 'l' << slot << '=' << vt_->at(vid).encode() << ';';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

ServiceStateView derive_service_state(const std::vector<std::pair<uint32_t, AppState>>& replicas) {
  ServiceStateView out;
  uint32_t max_version = 0;
  for (const auto& [v, _] : replicas) max_version = std::max(max_version, v);
  bool first = true;
  for (const auto& [v, s] : replicas) {
    if (v != max_version) continue;
    if (first) {
      out.state = s;
      first = false;
    } else if (s.digest() != out.state.digest()) {
      out.ok = false;
      out.error = "maximal-version replicas disagree: " + s.encode() + " vs " + out.state.encode();
      return out;
    }
  }
  return out;
}

}  // namespace replab
