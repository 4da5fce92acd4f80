#include "replab/multiconsensus.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

namespace replab {

std::string to_string(const McStep& s) {
  std::ostringstream os;
  switch (s.k) {
    case McStep::K::certify_seq:
      os << "certify_seq(cert" << s.cert << ",slot" << s.slot << "," << to_string(s.round)
         << ",v" << s.val << ")";
      break;
    case McStep::K::certify:
      os << "certify(cert" << s.cert << ",slot" << s.slot << "," << to_string(s.round)
         << ",v" << s.val << ")";
      break;
    case McStep::K::learn:
      os << "learn(repl" << s.replica << ",slot" << s.slot << ",v" << s.val << ")";
      break;
    case McStep::K::support:
      os << "support(cert" << s.cert << "," << to_string(s.round) << ",coord" << s.coord << ")";
      break;
    case McStep::K::recover:
      os << "recover(cert" << s.cert << "," << to_string(s.round) << ",donors=" << s.donor_mask
         << ")";
      break;
  }
  return os.str();
}

MultiConsensus::MultiConsensus(McConfig cfg, ValueTable* vt) : cfg_(cfg), vt_(vt) {
  certs_.resize(cfg_.n);
  learned_.resize(cfg_.replicas);
  if (cfg_.initial_sequencer >= 0 &&
      cfg_.initial_sequencer < static_cast<int>(cfg_.n)) {
    certs_[size_t(cfg_.initial_sequencer)].seq_role = true;
  }
}

ProgressPI MultiConsensus::pi(uint16_t c, Slot slot) const {
  const Certifier& cert = certs_.at(c);
  auto it = cert.prog.find(slot);
  if (it != cert.prog.end()) return it->second;
  return ProgressPI{cert.floor, -1};
}

MultiConsensus::Applied MultiConsensus::add_certified(uint16_t c, Slot slot, RoundId round,
                                                      int32_t vid) {
  Applied out;
  auto& entry = certified_[{slot, round}];
  if (entry.certs.empty()) {
    entry.val = vid;
  } else if (entry.val != vid) {
    violation_ = "round/slot uniqueness: slot " + std::to_string(slot) + " round " +
                 to_string(round) + " certified with two values";
    out.outcome = McOutcome::violation;
    return out;
  }
  size_t before = entry.certs.size();
  entry.certs.insert(c);
  bool majority_now = entry.certs.size() * 2 > cfg_.n;
  bool majority_before = before * 2 > cfg_.n;
  if (majority_now && !majority_before) {
    // first majority in this round; agreement requires every deciding round
    // of the slot to carry the same value
    for (const auto& [key, other] : certified_) {
      if (key.first != slot || key.second == round) continue;
      if (other.certs.size() * 2 > cfg_.n && other.val != vid) {
        violation_ = "agreement: slot " + std::to_string(slot) + " decided " +
                     vt_->at(other.val).encode() + " and " + vt_->at(vid).encode();
        out.outcome = McOutcome::violation;
        return out;
      }
    }
    // newly decided only if no other round had already reached majority
    bool already = false;
    for (const auto& [key, other] : certified_) {
      if (key.first != slot || key.second == round) continue;
      if (other.certs.size() * 2 > cfg_.n) already = true;
    }
    if (!already) out.decided.push_back({slot, vid});
  }
  out.outcome = McOutcome::ok;
  return out;
}

MultiConsensus::Applied MultiConsensus::certify_seq(uint16_t c, Slot slot, RoundId round,
                                                    int32_t vid) {
  Applied blocked;
  if (c >= certs_.size() || slot == 0 || vid < 0) return blocked;
  Certifier& cert = certs_[c];
  if (!cert.seq_role || round != cert.bev) return blocked;
  if (pi(c, slot) != ProgressPI{round, -1}) return blocked;
  for (Slot s = 1; s < slot; ++s)
    if (pi(c, s) == ProgressPI{round, -1}) return blocked;  // not the lowest empty slot
  if (!proposed(slot, vid)) return blocked;
  if (cfg_.po && slot > 1) {
    ProgressPI prev = pi(c, slot - 1);
    if (prev.val < 0 || prev.round != round) return blocked;
    const Value& v = vt_->at(vid);
    const Value& pv = vt_->at(prev.val);
    if (v.passive && pv.passive &&
        v.update.old_digest != pv.update.new_state.digest())
      return blocked;  // proposal not built on the value held for the prior slot
  }
  Applied out = add_certified(c, slot, round, vid);
  if (out.outcome != McOutcome::ok) return out;
  cert.prog[slot] = ProgressPI{round, vid};
  return out;
}

MultiConsensus::Applied MultiConsensus::certify(uint16_t c, Slot slot, RoundId round,
                                                int32_t vid) {
  Applied blocked;
  if (c >= certs_.size() || slot == 0 || vid < 0) return blocked;
  Certifier& cert = certs_[c];
  auto it = certified_.find({slot, round});
  if (it == certified_.end() || it->second.val != vid) return blocked;
  if (cert.bev != round) return blocked;
  ProgressPI incoming{round, vid};
  if (!pi_greater(incoming, pi(c, slot))) return blocked;
  if (cfg_.po && slot > 1) {
    ProgressPI prev = pi(c, slot - 1);
    if (prev.val < 0 || prev.round != round) return blocked;  // certify in order
  }
  Applied out = add_certified(c, slot, round, vid);
  if (out.outcome != McOutcome::ok) return out;
  cert.prog[slot] = incoming;
  return out;
}

MultiConsensus::Applied MultiConsensus::support(uint16_t c, RoundId round, uint16_t coord) {
  Applied out;
  if (c >= certs_.size() || coord >= certs_.size()) return out;
  Certifier& cert = certs_[c];
  if (!(round > cert.bev)) return out;  // supports a round at most once
  cert.bev = round;
  cert.seq_role = false;
  Snapshot snap;
  snap.coord = coord;
  snap.floor = cert.floor;
  snap.prog = cert.prog;
  snapshots_[{c, round}] = std::move(snap);
  out.outcome = McOutcome::ok;
  return out;
}

RoundStamp MultiConsensus::stamp_of_snapshot(const Snapshot& s) {
  RoundId best = s.floor;
  for (const auto& [slot, p] : s.prog)
    if (p.val >= 0 && p.round > best) best = p.round;
  uint32_t count = 0;
  for (const auto& [slot, p] : s.prog)
    if (p.val >= 0 && p.round == best) ++count;
  return RoundStamp{best, count};
}

RoundStamp MultiConsensus::stamp_of(uint16_t c) const {
  Snapshot s;
  s.floor = certs_.at(c).floor;
  s.prog = certs_.at(c).prog;
  return stamp_of_snapshot(s);
}

MultiConsensus::Applied MultiConsensus::recover(uint16_t c, RoundId round,
                                                const std::vector<uint16_t>& donors) {
  Applied out;
  if (c >= certs_.size()) return out;
  Certifier& cert = certs_[c];
  if (cert.bev != round || cert.seq_role) return out;
  if (donors.size() * 2 <= cfg_.n) return out;
  std::vector<const Snapshot*> snaps;
  for (uint16_t d : donors) {
    auto it = snapshots_.find({d, round});
    if (it == snapshots_.end()) return out;
    snaps.push_back(&it->second);
  }
  if (cfg_.flavor == McFlavor::vsr) {
    // snapshots name the view manager; the sequencer is the donor holding the
    // highest round-stamp, appointed once per round
    if (recovered_rounds_.count(round)) return out;
    for (const Snapshot* s : snaps)
      if (s->coord != round.owner) return out;
    uint16_t best = donors[0];
    RoundStamp best_stamp = stamp_of_snapshot(*snaps[0]);
    for (size_t i = 1; i < donors.size(); ++i) {
      RoundStamp st = stamp_of_snapshot(*snaps[i]);
      if (st > best_stamp || (st == best_stamp && donors[i] < best)) {
        best = donors[i];
        best_stamp = st;
      }
    }
    if (best != c) return out;
  } else {
    for (const Snapshot* s : snaps)
      if (s->coord != c) return out;
  }

  // per-slot maximum progress indicator across the donor snapshots
  std::set<Slot> slots;
  for (const Snapshot* s : snaps)
    for (const auto& [slot, p] : s->prog) slots.insert(slot);
  std::map<Slot, ProgressPI> merged;
  for (Slot s : slots) {
    ProgressPI best{};
    bool first = true;
    for (const Snapshot* snap : snaps) {
      auto it = snap->prog.find(s);
      ProgressPI p = it != snap->prog.end() ? it->second : ProgressPI{snap->floor, -1};
      if (first || pi_greater(p, best)) best = p;
      first = false;
    }
    if (best.val >= 0) merged[s] = ProgressPI{round, best.val};
  }
  cert.floor = round;
  cert.prog = merged;
  cert.seq_role = true;
  recovered_rounds_.insert(round);
  views_[round] = merged;
  out.outcome = McOutcome::ok;
  for (const auto& [slot, p] : merged) {
    Applied a = add_certified(c, slot, round, p.val);
    if (a.outcome == McOutcome::violation) return a;
    for (auto& d : a.decided) out.decided.push_back(d);
  }
  return out;
}

const std::map<Slot, ProgressPI>* MultiConsensus::view_of(RoundId round) const {
  auto it = views_.find(round);
  return it == views_.end() ? nullptr : &it->second;
}

MultiConsensus::Applied MultiConsensus::adopt_view(uint16_t c, RoundId round) {
  Applied out;
  if (c >= certs_.size()) return out;
  Certifier& cert = certs_[c];
  auto it = views_.find(round);
  if (it == views_.end()) return out;
  if (cert.bev != round) return out;
  if (!(cert.floor < round)) return out;  // at most one adoption per round
  cert.floor = round;
  cert.prog = it->second;
  out.outcome = McOutcome::ok;
  for (const auto& [slot, p] : it->second) {
    Applied a = add_certified(c, slot, round, p.val);
    if (a.outcome == McOutcome::violation) return a;
    for (auto& d : a.decided) out.decided.push_back(d);
  }
  return out;
}

MultiConsensus::Applied MultiConsensus::learn(uint16_t replica, Slot slot, int32_t vid) {
  Applied out;
  if (replica >= learned_.size()) return out;
  auto& l = learned_[replica];
  if (l.count(slot)) return out;
  bool decided = false;
  for (const auto& [key, entry] : certified_) {
    if (key.first == slot && entry.val == vid && entry.certs.size() * 2 > cfg_.n) {
      decided = true;
      break;
    }
  }
  if (!decided) return out;
  l[slot] = vid;
  out.outcome = McOutcome::ok;
  return out;
}

std::map<Slot, int32_t> MultiConsensus::derive_decisions(std::string* conflict) const {
  std::map<Slot, int32_t> out;
  for (const auto& [key, entry] : certified_) {
    if (entry.certs.size() * 2 <= cfg_.n) continue;
    auto it = out.find(key.first);
    if (it == out.end()) {
      out[key.first] = entry.val;
    } else if (it->second != entry.val && conflict) {
      *conflict = "slot " + std::to_string(key.first) + " decided twice";
    }
  }
  return out;
}

std::optional<std::string> MultiConsensus::check_invariants() const {
  if (!violation_.empty()) return violation_;
  // one sequencer per round
  for (size_t a = 0; a < certs_.size(); ++a) {
    for (size_t b = a + 1; b < certs_.size(); ++b) {
      if (certs_[a].seq_role && certs_[b].seq_role && certs_[a].bev == certs_[b].bev)
        return "two sequencers in round " + to_string(certs_[a].bev);
    }
  }
  std::string conflict;
  auto decisions = derive_decisions(&conflict);
  if (!conflict.empty()) return conflict;
  if (cfg_.po && !decisions.empty()) {
    // decided slots form a digest-chained prefix
    Slot max_slot = decisions.rbegin()->first;
    for (Slot s = 1; s <= max_slot; ++s)
      if (!decisions.count(s)) return "decision gap at slot " + std::to_string(s);
    for (Slot s = 2; s <= max_slot; ++s) {
      const Value& v = vt_->at(decisions[s]);
      const Value& prev = vt_->at(decisions[s - 1]);
      if (v.passive && prev.passive &&
          v.update.old_digest != prev.update.new_state.digest())
        return "prefix order broken between slots " + std::to_string(s - 1) + " and " +
               std::to_string(s);
    }
  }
  return std::nullopt;
}

std::vector<McStep> MultiConsensus::enabled(const McBounds& bounds) const {
  std::vector<McStep> out;
  std::vector<uint16_t> coords = bounds.coords;
  if (coords.empty())
    for (uint16_t i = 0; i < cfg_.n; ++i) coords.push_back(i);

  for (uint16_t c = 0; c < cfg_.n; ++c) {
    const Certifier& cert = certs_[c];
    // certify_seq in the lowest empty slot of the sequencer
    if (cert.seq_role) {
      for (Slot s = 1; s <= bounds.max_slot; ++s) {
        if (pi(c, s) != ProgressPI{cert.bev, -1}) continue;
        auto it = proposals_.find(s);
        if (it != proposals_.end()) {
          for (int32_t vid : it->second) {
            McStep st;
            st.k = McStep::K::certify_seq;
            st.cert = c;
            st.slot = s;
            st.round = cert.bev;
            st.val = vid;
            out.push_back(st);
          }
        }
        break;  // only the lowest empty slot qualifies
      }
    }
    // copy any existing certification for the supported round
    for (const auto& [key, entry] : certified_) {
      if (key.second != cert.bev) continue;
      ProgressPI incoming{key.second, entry.val};
      if (!pi_greater(incoming, pi(c, key.first))) continue;
      McStep st;
      st.k = McStep::K::certify;
      st.cert = c;
      st.slot = key.first;
      st.round = key.second;
      st.val = entry.val;
      out.push_back(st);
    }
    // support any higher round in bounds
    for (uint32_t k = 0; k <= bounds.max_round_counter; ++k) {
      RoundId r{k, 0};
      if (!(r > cert.bev)) continue;
      for (uint16_t coord : coords) {
        McStep st;
        st.k = McStep::K::support;
        st.cert = c;
        st.round = r;
        st.coord = coord;
        out.push_back(st);
      }
    }
    // recover from any majority of snapshots naming this certifier
    if (!cert.seq_role) {
      std::vector<uint16_t> holders;
      for (uint16_t d = 0; d < cfg_.n; ++d) {
        auto it = snapshots_.find({d, cert.bev});
        if (it != snapshots_.end() && it->second.coord == c) holders.push_back(d);
      }
      if (holders.size() * 2 > cfg_.n) {
        uint32_t subsets = 1u << holders.size();
        for (uint32_t mask = 1; mask < subsets; ++mask) {
          if (std::popcount(mask) * 2 <= static_cast<int>(cfg_.n)) continue;
          McStep st;
          st.k = McStep::K::recover;
          st.cert = c;
          st.round = cert.bev;
          uint32_t donor_mask = 0;
          for (size_t i = 0; i < holders.size(); ++i)
            if (mask & (1u << i)) donor_mask |= 1u << holders[i];
          st.donor_mask = donor_mask;
          out.push_back(st);
        }
      }
    }
  }
  if (bounds.enumerate_learn) {
    for (uint16_t r = 0; r < learned_.size(); ++r) {
      for (const auto& [key, entry] : certified_) {
        if (entry.certs.size() * 2 <= cfg_.n) continue;
        if (learned_[r].count(key.first)) continue;
        McStep st;
        st.k = McStep::K::learn;
        st.replica = r;
        st.slot = key.first;
        st.val = entry.val;
        out.push_back(st);
      }
    }
  }
  return out;
}

MultiConsensus::Applied MultiConsensus::apply(const McStep& s) {
  switch (s.k) {
    case McStep::K::certify_seq: return certify_seq(s.cert, s.slot, s.round, s.val);
    case McStep::K::certify: return certify(s.cert, s.slot, s.round, s.val);
    case McStep::K::learn: return learn(s.replica, s.slot, s.val);
    case McStep::K::support: return support(s.cert, s.round, s.coord);
    case McStep::K::recover: {
      std::vector<uint16_t> donors;
      for (uint16_t d = 0; d < cfg_.n; ++d)
        if (s.donor_mask & (1u << d)) donors.push_back(d);
      return recover(s.cert, s.round, donors);
    }
  }
  return {};
}

namespace {
void pack32(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
void pack_round(std::string& out, RoundId r) {
  pack32(out, r.counter);
  pack32(out, r.owner);
}
void pack_pi(std::string& out, const ProgressPI& p) {
  pack_round(out, p.round);
  pack32(out, uint32_t(p.val + 1));
}
}  // namespace

std::string MultiConsensus::canonical() const {
  std::string out;
  out.reserve(128);
  for (const auto& cert : certs_) {
    pack_round(out, cert.bev);
    out.push_back(cert.seq_role ? 1 : 0);
    pack_round(out, cert.floor);
    out.push_back(char(cert.prog.size()));
    for (const auto& [slot, p] : cert.prog) {
      pack32(out, slot);
      pack_pi(out, p);
    }
    out.push_back('|');
  }
  out.push_back('C');
  for (const auto& [key, entry] : certified_) {
    pack32(out, key.first);
    pack_round(out, key.second);
    pack32(out, uint32_t(entry.val + 1));
    uint32_t mask = 0;
    for (uint16_t c : entry.certs) mask |= 1u << c;
    pack32(out, mask);
  }
  out.push_back('S');
  for (const auto& [key, snap] : snapshots_) {
    pack32(out, key.first);
    pack_round(out, key.second);
    pack32(out, snap.coord);
    pack_round(out, snap.floor);
    out.push_back(char(snap.prog.size()));
    for (const auto& [slot, p] : snap.prog) {
      pack32(out, slot);
      pack_pi(out, p);
    }
  }
  out.push_back('L');
  for (const auto& l : learned_) {
    for (const auto& [slot, vid] : l) {
      pack32(out, slot);
      pack32(out, uint32_t(vid + 1));
    }
    out.push_back(';');
  }
  out.push_back('V');
  for (const auto& [round, view] : views_) {
    pack_round(out, round);
    out.push_back(char(view.size()));
    for (const auto& [slot, p] : view) {
      pack32(out, slot);
      pack_pi(out, p);
    }
  }
  return out;
}

}  // namespace replab
