#include "replab/engines.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>

#include "replab/kernel.hpp"

namespace replab {

namespace {

enum : uint64_t { kTimerRetry = 1, kTimerProgress = 2, kTimerGap = 3 };

struct Shared {
  Simulation* sim{nullptr};
  const ScenarioConfig* cfg{nullptr};
  uint16_t n{0};
  uint16_t m{0};
  bool po{false};

  ProcessId cert(uint16_t i) const { return ProcessId::certifier(i); }
  ProcessId repl(uint16_t i) const { return ProcessId::replica(i); }

  // staggered so the nearest prospective coordinator moves first
  Tick progress_timeout(uint16_t idx, uint16_t current_owner) const {
    Tick base = cfg->eff_progress_timeout();
    uint16_t dist = (idx + n - current_owner) % n;
    return base + dist * (base / 2);
  }
};

// ---------------------------------------------------------------------------
// Closed-loop client: next operation only after the previous response;
// retransmits by broadcasting to every certifier.

class ClientActor : public Actor {
 public:
  ClientActor(Shared* sh, uint16_t idx, std::vector<Operation> script)
      : sh_(sh), idx_(idx), script_(std::move(script)) {}

  void on_start() override { send_next(); }

  void on_message(const Message& m) override {
    if (m.tag != WireTag::RESPONSE || !m.val) return;
    if (!outstanding_ || m.val->cmd.op_seq != outstanding_->op_seq) return;  // stale duplicate
    TraceEvent ev = sh_->sim->make_event(pid(), Tr::response);
    ev.val = Value::active(*outstanding_);
    ev.res = m.res;
    sh_->sim->emit(std::move(ev));
    if (m.sequencer.kind == ProcKind::certifier) believed_seq_ = m.sequencer.index;
    outstanding_.reset();
    ++retry_epoch_;
    ++next_;
    send_next();
  }

  void on_timer(uint64_t kind, uint64_t data) override {
    if (kind != kTimerRetry || data != retry_epoch_ || !outstanding_) return;
    Message m;
    m.tag = WireTag::REQUEST;
    m.val = Value::active(*outstanding_);
    for (uint16_t c = 0; c < sh_->n; ++c) sh_->sim->send(pid(), sh_->cert(c), m);
    sh_->sim->set_timer(pid(), sh_->cfg->eff_retry_timeout(), kTimerRetry, retry_epoch_);
  }

 private:
  ProcessId pid() const { return ProcessId::client(idx_); }

  void send_next() {
    if (next_ >= script_.size()) return;
    Command cmd;
    cmd.client = pid();
    cmd.op_seq = static_cast<uint32_t>(next_);
    cmd.op = script_[next_];
    outstanding_ = cmd;
    TraceEvent ev = sh_->sim->make_event(pid(), Tr::invoke);
    ev.val = Value::active(cmd);
    sh_->sim->emit(std::move(ev));
    Message m;
    m.tag = WireTag::REQUEST;
    m.val = Value::active(cmd);
    sh_->sim->send(pid(), sh_->cert(believed_seq_), m);
    sh_->sim->set_timer(pid(), sh_->cfg->eff_retry_timeout(), kTimerRetry, retry_epoch_);
  }

  Shared* sh_;
  uint16_t idx_;
  std::vector<Operation> script_;
  size_t next_{0};
  std::optional<Command> outstanding_;
  uint16_t believed_seq_{0};
  uint64_t retry_epoch_{0};
};

// ---------------------------------------------------------------------------
// Shared certifier/replica node machinery.

struct ReplicaRole {
  uint16_t index{0};
  AppState state;
  uint32_t version{1};
  std::map<Slot, Value> learned;
};

class EngineNode : public Actor {
 public:
  EngineNode(Shared* sh, uint16_t idx) : sh_(sh), idx_(idx) {
    if (idx_ < sh_->m) {
      repl_.emplace();
      repl_->index = idx_;
      repl_->state = sh_->cfg->initial_state();
    }
  }

  void on_start() override {}

  void on_message(const Message& m) override {
    touch_activity();
    switch (m.tag) {
      case WireTag::REQUEST:
      case WireTag::PROPOSE:
        if (m.val) client_request(m.val->cmd);
        return;
      case WireTag::SYNC:
        if (m.from.kind == ProcKind::replica && m.phase == 0) {
          gap_repair(m);
          return;
        }
        break;
      default:
        break;
    }
    handle_protocol(m);
  }

  void on_timer(uint64_t kind, uint64_t data) override {
    if (kind == kTimerProgress) {
      progress_armed_ = false;
      if (is_seq_) return;
      if (!demand()) return;
      if (sh_->sim->now() - last_activity_ < sh_->cfg->eff_progress_timeout()) {
        arm_progress();
        return;
      }
      start_recovery();
      return;
    }
    if (kind == kTimerGap) {
      gap_armed_ = false;
      check_gap();
      return;
    }
    handle_timer(kind, data);
  }

 protected:
  virtual void handle_protocol(const Message& m) = 0;
  virtual void handle_timer(uint64_t kind, uint64_t data) {}
  virtual void serve(const Command& cmd) = 0;
  virtual void start_recovery() = 0;
  virtual bool has_undecided_work() const { return false; }
  virtual void resend_decided(const std::string& cmd_key) {}

  ProcessId cert_pid() const { return ProcessId::certifier(idx_); }
  ProcessId self_repl_pid() const { return ProcessId::replica(repl_->index); }
  ProcessId proposer_pid() const {
    return repl_ ? ProcessId::replica(repl_->index) : cert_pid();
  }

  bool demand() const { return !pending_.empty() || has_undecided_work(); }

  void touch_activity() { last_activity_ = sh_->sim->now(); }

  void arm_progress() {
    if (progress_armed_) return;
    progress_armed_ = true;
    Tick t = sh_->progress_timeout(idx_, seq_hint_);
    if (backoff_attempts_ > 0 && sh_->cfg->backoff == ScenarioConfig::Backoff::backoff)
      t <<= std::min<uint32_t>(backoff_attempts_, 4);
    sh_->sim->set_timer(cert_pid(), t, kTimerProgress);
  }

  void note(const std::string& what) {
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::note);
    ev.tag = what;
    sh_->sim->emit(std::move(ev));
  }

  Message base_msg(WireTag tag) const {
    Message m;
    m.tag = tag;
    m.round = bev_;
    return m;
  }

  void client_request(const Command& cmd) {
    std::string key = cmd.encode();
    if (is_seq_) {
      serve(cmd);
      return;
    }
    auto it = cmd_slot_.find(key);
    if (it != cmd_slot_.end() && decided_.count(it->second)) {
      resend_decided(key);
      return;
    }
    if (!pending_keys_.count(key)) {
      pending_keys_.insert(key);
      pending_.push_back(cmd);
    }
    // forward to the believed sequencer and start watching for progress
    Message fwd = base_msg(WireTag::PROPOSE);
    fwd.val = Value::active(cmd);
    if (seq_hint_ != idx_) sh_->sim->send(cert_pid(), sh_->cert(seq_hint_), fwd);
    arm_progress();
  }

  void serve_pending() {
    while (is_seq_ && !pending_.empty()) {
      Command cmd = pending_.front();
      pending_.pop_front();
      pending_keys_.erase(cmd.encode());
      serve(cmd);
    }
  }

  // replica side: learn a decision, then apply in version order
  void replica_learn(Slot slot, const Value& v) {
    if (!repl_ || repl_->learned.count(slot)) return;
    {
      TraceEvent ev = sh_->sim->make_event(self_repl_pid(), Tr::learn);
      ev.slot = slot;
      ev.val = v;
      sh_->sim->emit(std::move(ev));
    }
    repl_->learned[slot] = v;
    decided_[slot] = v;
    drain_replica();
    check_gap();
  }

  void drain_replica() {
    while (true) {
      auto it = repl_->learned.find(repl_->version);
      if (it == repl_->learned.end()) return;
      const Value& v = it->second;
      Result res;
      AppState ns;
      if (v.passive) {
        ApplyOutcome out = apply_update(repl_->state, v);
        if (!out.ok) {
          TraceEvent ev = sh_->sim->make_event(self_repl_pid(), Tr::note);
          ev.tag = "prefix_violation";
          ev.slot = repl_->version;
          sh_->sim->emit(std::move(ev));
          return;
        }
        res = out.res;
        ns = out.state;
      } else {
        auto [r, s] = next_state(repl_->state, v.cmd);
        res = r;
        ns = s;
      }
      TraceEvent ev = sh_->sim->make_event(self_repl_pid(), Tr::update);
      ev.version = repl_->version;
      ev.val = v;
      ev.res = res;
      ev.digest = ns.digest();
      sh_->sim->emit(std::move(ev));
      repl_->state = ns;
      repl_->version += 1;
      respond(v.cmd, res);
    }
  }

  void respond(const Command& cmd, const Result& res) {
    Message m;
    m.tag = WireTag::RESPONSE;
    m.val = Value::active(cmd);
    m.res = res;
    m.sequencer = sh_->cert(seq_hint_);
    sh_->sim->send(self_repl_pid(), cmd.client, m);
  }

  // broadcast dissemination: replicas observe certifications directly
  void replica_observe_cert(uint16_t from, Slot slot, const Value& v) {
    if (!repl_ || repl_->learned.count(slot)) return;
    auto& cell = repl_tally_[slot][v.encode()];
    cell.first = v;
    cell.second.insert(from);
    if (cell.second.size() * 2 > sh_->n) replica_learn(slot, cell.first);
  }

  void check_gap() {
    if (!repl_ || repl_->learned.empty()) return;
    Slot top = repl_->learned.rbegin()->first;
    if (repl_->version > top) return;  // contiguous
    if (gap_armed_) return;
    if (gap_since_ == 0) gap_since_ = sh_->sim->now();
    if (sh_->sim->now() - gap_since_ >= sh_->cfg->eff_retry_timeout()) {
      gap_since_ = 0;
      Message m;
      m.tag = WireTag::SYNC;
      m.phase = 0;
      m.count = repl_->version;
      for (uint16_t c = 0; c < sh_->n; ++c)
        sh_->sim->send(self_repl_pid(), sh_->cert(c), m);
    }
    gap_armed_ = true;
    sh_->sim->set_timer(cert_pid(), sh_->cfg->eff_retry_timeout(), kTimerGap);
  }

  void gap_repair(const Message& m) {
    for (const auto& [slot, val] : decided_) {
      if (slot < m.count) continue;
      Message d;
      d.tag = WireTag::DECIDE;
      d.slot = slot;
      d.val = val;
      sh_->sim->send(cert_pid(), m.from, d);
    }
  }

  Shared* sh_;
  uint16_t idx_;
  RoundId bev_{};
  bool is_seq_{false};
  uint16_t seq_hint_{0};
  std::deque<Command> pending_;
  std::set<std::string> pending_keys_;
  std::map<std::string, Slot> cmd_slot_;
  std::map<Slot, Value> decided_;
  std::optional<ReplicaRole> repl_;
  Tick last_activity_{0};
  bool progress_armed_{false};
  bool gap_armed_{false};
  Tick gap_since_{0};
  uint32_t backoff_attempts_{0};
  std::map<Slot, std::map<std::string, std::pair<Value, std::set<uint16_t>>>> repl_tally_;
};

// ---------------------------------------------------------------------------
// Paxos: active replication, per-slot progress indicators, any certifier may
// take over by querying full snapshots from a majority.

class PaxosNode : public EngineNode {
 public:
  PaxosNode(Shared* sh, uint16_t idx) : EngineNode(sh, idx) {
    if (idx_ == 0) is_seq_ = true;  // round (0,0) starts operational
  }

 protected:
  struct PiEntry {
    RoundId round{};
    Value val{};
  };

  void serve(const Command& cmd) override {
    std::string key = cmd.encode();
    auto known = cmd_slot_.find(key);
    if (known != cmd_slot_.end()) {
      if (decided_.count(known->second)) resend_decided(key);
      return;  // already in flight or settled
    }
    Slot slot = lowest_open_slot();
    Value val = Value::active(cmd);
    {
      TraceEvent ev = sh_->sim->make_event(proposer_pid(), Tr::propose);
      ev.slot = slot;
      ev.val = val;
      sh_->sim->emit(std::move(ev));
    }
    certify_locally(slot, val, true);
    cmd_slot_[key] = slot;
    broadcast_certseq(slot, val);
  }

  void resend_decided(const std::string& key) override {
    auto it = cmd_slot_.find(key);
    if (it == cmd_slot_.end()) return;
    auto d = decided_.find(it->second);
    if (d == decided_.end()) return;
    send_decide(it->second, d->second);
  }

  void handle_protocol(const Message& m) override {
    switch (m.tag) {
      case WireTag::CERTSEQ: on_certseq(m); break;
      case WireTag::CERT: on_cert(m); break;
      case WireTag::DECIDE: on_decide(m); break;
      case WireTag::SUPPORT: on_support(m); break;
      case WireTag::SNAPSHOT: on_snapshot(m); break;
      case WireTag::ACK: on_ack(m); break;
      default: note("ignored:" + to_string(m.tag)); break;
    }
  }

  bool has_undecided_work() const override {
    for (const auto& [slot, e] : prog_)
      if (!decided_.count(slot)) return true;
    return false;
  }

  void start_recovery() override {
    uint32_t counter = std::max(bev_.counter, highest_counter_seen_) + 1;
    RoundId b{counter, idx_};
    support_self(b, idx_);
    recovering_.emplace();
    recovering_->round = b;
    Message snap = own_snapshot(b);
    recovering_->snaps[idx_] = snap;
    Message query = base_msg(WireTag::SUPPORT);
    query.coord = cert_pid();
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), query);
    arm_progress();  // recovery deadline; preemption or silence retries higher
  }

 private:
  PiEntry pi(Slot slot) const {
    auto it = prog_.find(slot);
    if (it != prog_.end()) return it->second;
    return PiEntry{floor_, Value{}};
  }

  bool pi_empty(Slot slot) const { return prog_.find(slot) == prog_.end(); }

  Slot lowest_open_slot() const {
    Slot s = 1;
    while (prog_.count(s) || decided_.count(s) ||
           (repl_ && repl_->learned.count(s)))
      ++s;
    return s;
  }

  void certify_locally(Slot slot, const Value& val, bool as_seq) {
    TraceEvent ev = sh_->sim->make_event(cert_pid(), as_seq ? Tr::certify_seq : Tr::certify);
    ev.slot = slot;
    ev.round = bev_;
    ev.val = val;
    sh_->sim->emit(std::move(ev));
    prog_[slot] = PiEntry{bev_, val};
    if (as_seq) certs_seen_[slot] = {idx_};
    if (sh_->cfg->dissemination == Dissemination::broadcast) notify_replicas(slot, val);
  }

  void broadcast_certseq(Slot slot, const Value& val) {
    Message m = base_msg(WireTag::CERTSEQ);
    m.slot = slot;
    m.val = val;
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), m);
  }

  void notify_replicas(Slot slot, const Value& val) {
    Message m = base_msg(WireTag::CERT);
    m.slot = slot;
    m.val = val;
    for (uint16_t r = 0; r < sh_->m; ++r)
      sh_->sim->send(cert_pid(), sh_->repl(r), m);
  }

  void support_self(RoundId b, uint16_t coord) {
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::support_round);
    ev.round = b;
    ev.peer = sh_->cert(coord);
    sh_->sim->emit(std::move(ev));
    bev_ = b;
    is_seq_ = false;
    seq_hint_ = coord;
    if (recovering_ && recovering_->round < b) recovering_.reset();
  }

  Message own_snapshot(RoundId b) const {
    Message m;
    m.tag = WireTag::SNAPSHOT;
    m.round = b;
    m.floor = floor_;
    for (const auto& [slot, e] : prog_) m.entries.push_back({slot, e.round, e.val});
    return m;
  }

  void on_certseq(const Message& m) {
    if (m.round < bev_) {
      note("stale_round");
      return;
    }
    if (m.round > bev_) support_self(m.round, m.round.owner);
    try_certify(m);
    drain_buffered();
  }

  void try_certify(const Message& m) {
    Slot slot = m.slot;
    const Value& val = *m.val;
    PiEntry cur = pi(slot);
    bool greater = cur.round < m.round || (cur.round == m.round && pi_empty(slot));
    if (!greater) {
      note("pi_not_greater");
      return;
    }
    if (sh_->po && slot > 1) {
      PiEntry prev = pi(slot - 1);
      if (pi_empty(slot - 1) || prev.round != m.round) {
        buffered_[slot] = m;  // certify in order once the gap fills
        return;
      }
    }
    certify_locally(slot, val, false);
    if (sh_->cfg->dissemination == Dissemination::collect) {
      Message reply = base_msg(WireTag::CERT);
      reply.slot = slot;
      sh_->sim->send(cert_pid(), m.from, reply);
    }
  }

  void drain_buffered() {
    bool progress = true;
    while (progress) {
      progress = false;
      for (auto it = buffered_.begin(); it != buffered_.end();) {
        PiEntry cur = pi(it->first);
        if (it->second.round < bev_) {
          it = buffered_.erase(it);
          continue;
        }
        if (sh_->po && it->first > 1 &&
            (pi_empty(it->first - 1) || pi(it->first - 1).round != it->second.round)) {
          ++it;
          continue;
        }
        Message msg = it->second;
        it = buffered_.erase(it);
        try_certify(msg);
        progress = true;
      }
    }
  }

  void on_cert(const Message& m) {
    if (m.to.kind == ProcKind::replica) {
      if (m.val) replica_observe_cert(m.from.index, m.slot, *m.val);
      return;
    }
    if (!is_seq_ || m.round != bev_) {
      note("stray_cert");
      return;
    }
    auto& seen = certs_seen_[m.slot];
    seen.insert(m.from.index);
    if (seen.size() * 2 > sh_->n && !decided_.count(m.slot)) {
      auto it = prog_.find(m.slot);
      if (it == prog_.end()) return;
      decided_[m.slot] = it->second.val;
      send_decide(m.slot, it->second.val);
    }
  }

  void send_decide(Slot slot, const Value& val) {
    Message m;
    m.tag = WireTag::DECIDE;
    m.slot = slot;
    m.val = val;
    for (uint16_t r = 0; r < sh_->m; ++r)
      sh_->sim->send(cert_pid(), sh_->repl(r), m);
  }

  void on_decide(const Message& m) {
    if (!m.val) return;
    decided_[m.slot] = *m.val;
    replica_learn(m.slot, *m.val);
  }

  void on_support(const Message& m) {
    if (m.round > bev_) {
      support_self(m.round, m.coord.index);
      Message reply = own_snapshot(m.round);
      sh_->sim->send(cert_pid(), m.from, reply);
      arm_progress();
    } else {
      Message nack = base_msg(WireTag::ACK);
      nack.ok = false;
      sh_->sim->send(cert_pid(), m.from, nack);
    }
  }

  void on_snapshot(const Message& m) {
    if (!recovering_ || m.round != recovering_->round) {
      note("late_snapshot");
      return;
    }
    recovering_->snaps[m.from.index] = m;
    if (recovering_->snaps.size() * 2 <= sh_->n) return;
    finish_recovery();
  }

  void finish_recovery() {
    RoundId b = recovering_->round;
    std::vector<uint16_t> donors;
    for (const auto& [id, _] : recovering_->snaps) donors.push_back(id);
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::recover);
    ev.round = b;
    ev.donors = donors;
    sh_->sim->emit(std::move(ev));

    // per-slot maximum progress indicator across the collected snapshots
    std::map<Slot, std::pair<RoundId, std::optional<Value>>> best;
    std::set<Slot> slots;
    for (const auto& [id, snap] : recovering_->snaps)
      for (const auto& e : snap.entries) slots.insert(e.slot);
    for (Slot s : slots) {
      RoundId best_round{};
      std::optional<Value> best_val;
      bool first = true;
      for (const auto& [id, snap] : recovering_->snaps) {
        RoundId r = snap.floor;
        std::optional<Value> v;
        for (const auto& e : snap.entries) {
          if (e.slot == s) {
            r = e.round;
            v = e.val;
            break;
          }
        }
        bool greater = first || r > best_round ||
                       (r == best_round && v.has_value() && !best_val.has_value());
        if (greater) {
          best_round = r;
          best_val = v;
        }
        first = false;
      }
      if (best_val) best[s] = {best_round, best_val};
    }
    floor_ = b;
    prog_.clear();
    certs_seen_.clear();
    for (const auto& [s, rv] : best) prog_[s] = PiEntry{b, *rv.second};
    is_seq_ = true;
    seq_hint_ = idx_;
    recovering_.reset();
    backoff_attempts_ = 0;

    for (const auto& [s, e] : prog_) {
      if (decided_.count(s)) {
        send_decide(s, decided_[s]);
        continue;
      }
      certs_seen_[s] = {idx_};
      broadcast_certseq(s, e.val);
      if (sh_->cfg->dissemination == Dissemination::broadcast) notify_replicas(s, e.val);
      cmd_slot_[e.val.cmd.encode()] = s;
    }
    serve_pending();
  }

  void on_ack(const Message& m) {
    if (m.ok) return;
    highest_counter_seen_ = std::max(highest_counter_seen_, m.round.counter);
    if (!recovering_) return;
    recovering_.reset();
    ++backoff_attempts_;
    if (sh_->cfg->backoff == ScenarioConfig::Backoff::immediate) start_recovery();
    else arm_progress();
  }

  RoundId floor_{};
  std::map<Slot, PiEntry> prog_;
  std::map<Slot, std::set<uint16_t>> certs_seen_;
  std::map<Slot, Message> buffered_;
  struct Recovering {
    RoundId round{};
    std::map<uint16_t, Message> snaps;
  };
  std::optional<Recovering> recovering_;
  uint32_t highest_counter_seen_{0};
};

// ---------------------------------------------------------------------------
// Zab: passive replication over plain epochs. The prospective sequencer is
// nominated by the leader oracle, syncs from the certifier with the highest
// round-stamp, and commits a complete view before resuming.

class ZabNode : public EngineNode {
 public:
  ZabNode(Shared* sh, uint16_t idx) : EngineNode(sh, idx) {
    shadow_ = sh->cfg->initial_state();
    if (idx_ == 0) is_seq_ = true;
  }

 protected:
  void serve(const Command& cmd) override {
    std::string key = cmd.encode();
    auto known = cmd_slot_.find(key);
    if (known != cmd_slot_.end()) {
      if (decided_.count(known->second)) resend_decided(key);
      return;
    }
    Value val = Value::passive_from(shadow_, cmd);
    Slot slot = shadow_version_;
    {
      TraceEvent ev = sh_->sim->make_event(proposer_pid(), Tr::propose);
      ev.slot = slot;
      ev.val = val;
      sh_->sim->emit(std::move(ev));
    }
    shadow_ = val.update.new_state;
    shadow_version_ = slot + 1;
    {
      TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::certify_seq);
      ev.slot = slot;
      ev.round = bev_;
      ev.val = val;
      sh_->sim->emit(std::move(ev));
    }
    log_.push_back(val);
    certs_seen_[slot] = {idx_};
    cmd_slot_[key] = slot;
    Message m = base_msg(WireTag::CERTSEQ);
    m.slot = slot;
    m.val = val;
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), m);
    if (sh_->cfg->dissemination == Dissemination::broadcast) notify_replicas(slot, val);
  }

  void resend_decided(const std::string& key) override {
    auto it = cmd_slot_.find(key);
    if (it == cmd_slot_.end()) return;
    auto d = decided_.find(it->second);
    if (d == decided_.end()) return;
    send_decide(it->second, d->second);
  }

  void handle_protocol(const Message& m) override {
    switch (m.tag) {
      case WireTag::CERTSEQ: on_certseq(m); break;
      case WireTag::CERT: on_cert(m); break;
      case WireTag::DECIDE: on_decide(m); break;
      case WireTag::STAMP: on_stamp(m); break;
      case WireTag::SUPPORT: on_support(m); break;
      case WireTag::SYNC: on_sync(m); break;
      case WireTag::NEWVIEW: on_newview(m); break;
      case WireTag::ACK: on_ack(m); break;
      case WireTag::COMMIT: on_commit(m); break;
      default: note("ignored:" + to_string(m.tag)); break;
    }
  }

  bool has_undecided_work() const override { return decided_upto_ < log_.size(); }

  // Oracle-driven: a suspicious certifier reports its round to the nominee;
  // the nominee runs the election once a majority reported.
  void start_recovery() override {
    ProcessId nominee = sh_->sim->omega(sh_->cfg->omega_lag);
    if (nominee != cert_pid()) {
      Message m;
      m.tag = WireTag::STAMP;
      m.phase = 0;
      m.round = bev_;
      sh_->sim->send(cert_pid(), nominee, m);
      arm_progress();
      return;
    }
    if (!cand_) {
      cand_.emplace();
      cand_->round_ids[idx_] = bev_;
      maybe_pick_epoch();
    }
    arm_progress();
  }

 private:
  RoundStamp my_stamp() const {
    return RoundStamp{log_round_, static_cast<uint32_t>(log_.size())};
  }

  uint64_t tail_digest() const {
    return log_.empty() ? sh_->cfg->initial_state().digest()
                        : log_.back().update.new_state.digest();
  }

  void notify_replicas(Slot slot, const Value& val) {
    Message m = base_msg(WireTag::CERT);
    m.slot = slot;
    m.val = val;
    for (uint16_t r = 0; r < sh_->m; ++r)
      sh_->sim->send(cert_pid(), sh_->repl(r), m);
  }

  void send_decide(Slot slot, const Value& val) {
    Message m;
    m.tag = WireTag::DECIDE;
    m.slot = slot;
    m.val = val;
    for (uint16_t r = 0; r < sh_->m; ++r)
      sh_->sim->send(cert_pid(), sh_->repl(r), m);
  }

  void on_certseq(const Message& m) {
    if (m.round < bev_) {
      note("stale_round");
      return;
    }
    if (m.round > bev_) {
      support_to(m.round, m.from.index);
      seq_hint_ = m.from.index;
    }
    try_certify(m);
  }

  void try_certify(const Message& m) {
    Slot slot = m.slot;
    if (m.round != bev_ || log_round_ != bev_ || slot != log_.size() + 1) {
      if (slot > log_.size()) {
        buffered_[slot] = m;
        if (log_round_ != m.round && !view_requested_) {
          view_requested_ = true;
          Message req;
          req.tag = WireTag::SYNC;
          req.phase = 2;  // full view request
          sh_->sim->send(cert_pid(), m.from, req);
        }
      } else {
        note("stale_certseq");
      }
      return;
    }
    const Value& val = *m.val;
    if (val.update.old_digest != tail_digest()) {
      TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::note);
      ev.tag = "prefix_violation";
      ev.slot = slot;
      sh_->sim->emit(std::move(ev));
      return;
    }
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::certify);
    ev.slot = slot;
    ev.round = bev_;
    ev.val = val;
    sh_->sim->emit(std::move(ev));
    log_.push_back(val);
    if (sh_->cfg->dissemination == Dissemination::collect) {
      Message reply = base_msg(WireTag::CERT);
      reply.slot = slot;
      sh_->sim->send(cert_pid(), m.from, reply);
    } else {
      notify_replicas(slot, val);
    }
    drain_buffered();
  }

  void drain_buffered() {
    while (true) {
      auto it = buffered_.find(static_cast<Slot>(log_.size() + 1));
      if (it == buffered_.end()) return;
      Message msg = it->second;
      buffered_.erase(it);
      if (msg.round != bev_) continue;
      try_certify(msg);
      if (log_.size() + 1 == it->first) return;  // no progress; stop
    }
  }

  void on_cert(const Message& m) {
    if (m.to.kind == ProcKind::replica) {
      if (m.val) replica_observe_cert(m.from.index, m.slot, *m.val);
      return;
    }
    if (!is_seq_ || m.round != bev_) {
      note("stray_cert");
      return;
    }
    auto& seen = certs_seen_[m.slot];
    seen.insert(m.from.index);
    if (seen.size() * 2 > sh_->n && !decided_.count(m.slot) && m.slot <= log_.size()) {
      const Value& val = log_[m.slot - 1];
      decided_[m.slot] = val;
      send_decide(m.slot, val);
    }
  }

  void on_decide(const Message& m) {
    if (!m.val) return;
    decided_[m.slot] = *m.val;
    replica_learn(m.slot, *m.val);
  }

  void support_to(RoundId b, uint16_t coord) {
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::support_round);
    ev.round = b;
    ev.peer = sh_->cert(coord);
    sh_->sim->emit(std::move(ev));
    bev_ = b;
    is_seq_ = false;
    if (cand_ && cand_->b < b) cand_.reset();
  }

  void maybe_pick_epoch() {
    if (!cand_ || cand_->stage != 0) return;
    if (cand_->round_ids.size() * 2 <= sh_->n) return;
    uint32_t max_counter = bev_.counter;
    for (const auto& [id, r] : cand_->round_ids) max_counter = std::max(max_counter, r.counter);
    RoundId b{max_counter + 1, 0};
    cand_->stage = 1;
    cand_->b = b;
    support_to(b, idx_);
    cand_->stamps[idx_] = my_stamp();
    Message m;
    m.tag = WireTag::SUPPORT;
    m.round = b;
    m.coord = cert_pid();
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), m);
    maybe_sync();
  }

  void on_stamp(const Message& m) {
    if (m.phase == 0) {
      ProcessId nominee = sh_->sim->omega(sh_->cfg->omega_lag);
      if (nominee != cert_pid()) return;  // not the oracle's pick anymore
      if (!cand_) {
        cand_.emplace();
        cand_->round_ids[idx_] = bev_;
      }
      if (cand_->stage == 0) {
        cand_->round_ids[m.from.index] = m.round;
        maybe_pick_epoch();
      }
      return;
    }
    // phase 2: round-stamp for the proposed epoch
    if (!cand_ || cand_->stage != 1 || m.round != cand_->b) {
      note("late_stamp");
      return;
    }
    cand_->stamps[m.from.index] = m.stamp;
    maybe_sync();
  }

  void maybe_sync() {
    if (!cand_ || cand_->stage != 1) return;
    if (cand_->stamps.size() * 2 <= sh_->n) return;
    cand_->stage = 2;
    uint16_t best = idx_;
    RoundStamp best_stamp = cand_->stamps[idx_];
    for (const auto& [id, st] : cand_->stamps) {
      if (st > best_stamp || (st == best_stamp && id < best)) {
        best = id;
        best_stamp = st;
      }
    }
    if (best != idx_ && my_stamp() < best_stamp) {
      Message m;
      m.tag = WireTag::SYNC;
      m.phase = 1;  // fetch missing commands
      m.stamp = my_stamp();
      sh_->sim->send(cert_pid(), sh_->cert(best), m);
      return;
    }
    finish_view();
  }

  void on_sync(const Message& m) {
    if (m.phase == 1) {
      // prospective sequencer is behind; send the gap or the whole snapshot
      Message reply;
      reply.tag = WireTag::SYNC;
      reply.round = log_round_;
      if (m.stamp.round == log_round_ && log_.size() >= m.stamp.count &&
          log_.size() - m.stamp.count <= sh_->cfg->sync_gap_limit) {
        reply.phase = 3;  // incremental
        for (size_t i = m.stamp.count; i < log_.size(); ++i)
          reply.entries.push_back({static_cast<Slot>(i + 1), log_round_, log_[i]});
      } else {
        note("sync_full");
        reply.phase = 4;  // entire snapshot
        for (size_t i = 0; i < log_.size(); ++i)
          reply.entries.push_back({static_cast<Slot>(i + 1), log_round_, log_[i]});
      }
      sh_->sim->send(cert_pid(), m.from, reply);
      return;
    }
    if (m.phase == 2) {
      // follower missed the view; resend it
      if (is_seq_) {
        Message reply;
        reply.tag = WireTag::NEWVIEW;
        reply.round = bev_;
        for (size_t i = 0; i < log_.size(); ++i)
          reply.entries.push_back({static_cast<Slot>(i + 1), bev_, log_[i]});
        sh_->sim->send(cert_pid(), m.from, reply);
      }
      return;
    }
    if (!cand_ || cand_->stage != 2) {
      note("late_sync");
      return;
    }
    if (m.phase == 4) {
      log_.clear();
      for (const auto& e : m.entries) log_.push_back(e.val);
      log_round_ = m.round;
    } else {
      for (const auto& e : m.entries)
        if (e.slot == log_.size() + 1) log_.push_back(e.val);
    }
    finish_view();
  }

  void finish_view() {
    RoundId b = cand_->b;
    std::vector<uint16_t> donors;
    for (const auto& [id, _] : cand_->stamps) donors.push_back(id);
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::recover);
    ev.round = b;
    ev.donors = donors;
    sh_->sim->emit(std::move(ev));
    log_round_ = b;
    is_seq_ = true;
    seq_hint_ = idx_;
    certs_seen_.clear();
    for (size_t i = 0; i < log_.size(); ++i) certs_seen_[static_cast<Slot>(i + 1)] = {idx_};
    cand_->stage = 3;
    cand_->acks = {idx_};
    Message m;
    m.tag = WireTag::NEWVIEW;
    m.round = b;
    for (size_t i = 0; i < log_.size(); ++i)
      m.entries.push_back({static_cast<Slot>(i + 1), b, log_[i]});
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), m);
    maybe_commit();
  }

  void on_newview(const Message& m) {
    if (m.round < bev_) {
      note("stale_view");
      return;
    }
    if (m.round > bev_) support_to(m.round, m.from.index);
    if (log_round_ == m.round) {
      note("dup_view");
      return;
    }
    seq_hint_ = m.from.index;
    log_.clear();
    for (const auto& e : m.entries) log_.push_back(e.val);
    log_round_ = m.round;
    view_requested_ = false;
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::adopt_state);
    ev.round = m.round;
    ev.count = static_cast<uint32_t>(log_.size());
    ev.digest = tail_digest();
    sh_->sim->emit(std::move(ev));
    Message ack = base_msg(WireTag::ACK);
    ack.ok = true;
    sh_->sim->send(cert_pid(), m.from, ack);
    drain_buffered();
  }

  void on_ack(const Message& m) {
    if (!m.ok) {
      if (cand_) {
        cand_.reset();
        ++backoff_attempts_;
        if (sh_->cfg->backoff == ScenarioConfig::Backoff::immediate) start_recovery();
        else arm_progress();
      }
      return;
    }
    if (!cand_ || cand_->stage != 3 || m.round != cand_->b) return;
    cand_->acks.insert(m.from.index);
    maybe_commit();
  }

  void maybe_commit() {
    if (!cand_ || cand_->stage != 3) return;
    if (cand_->acks.size() * 2 <= sh_->n) return;
    RoundId b = cand_->b;
    uint32_t upto = static_cast<uint32_t>(log_.size());
    Message m;
    m.tag = WireTag::COMMIT;
    m.round = b;
    m.count = upto;
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), m);
    apply_commit(upto);
    cmd_slot_.clear();
    for (size_t i = 0; i < log_.size(); ++i)
      cmd_slot_[log_[i].cmd.encode()] = static_cast<Slot>(i + 1);
    shadow_ = log_.empty() ? sh_->cfg->initial_state() : log_.back().update.new_state;
    shadow_version_ = upto + 1;
    TraceEvent ev = sh_->sim->make_event(proposer_pid(), Tr::reset_shadow);
    ev.version = shadow_version_;
    ev.digest = shadow_.digest();
    sh_->sim->emit(std::move(ev));
    backoff_attempts_ = 0;
    cand_.reset();
    serve_pending();
  }

  void apply_commit(uint32_t upto) {
    decided_upto_ = std::max(decided_upto_, upto);
    for (uint32_t s = 1; s <= upto && s <= log_.size(); ++s) {
      decided_[s] = log_[s - 1];
      replica_learn(s, log_[s - 1]);
    }
  }

  void on_commit(const Message& m) {
    if (m.round != log_round_) {
      note("stale_commit");
      return;
    }
    apply_commit(m.count);
  }

  void on_support(const Message& m) {
    if (m.round > bev_) {
      support_to(m.round, m.coord.index);
      Message reply;
      reply.tag = WireTag::STAMP;
      reply.phase = 2;
      reply.round = m.round;
      reply.stamp = my_stamp();
      sh_->sim->send(cert_pid(), m.from, reply);
      arm_progress();
    } else {
      Message nack = base_msg(WireTag::ACK);
      nack.ok = false;
      sh_->sim->send(cert_pid(), m.from, nack);
    }
  }

  RoundId log_round_{};
  std::vector<Value> log_;
  AppState shadow_;
  uint32_t shadow_version_{1};
  std::map<Slot, std::set<uint16_t>> certs_seen_;
  uint32_t decided_upto_{0};
  std::map<Slot, Message> buffered_;
  bool view_requested_{false};
  struct Candidate {
    int stage{0};
    std::map<uint16_t, RoundId> round_ids;
    RoundId b{};
    std::map<uint16_t, RoundStamp> stamps;
    std::set<uint16_t> acks;
  };
  std::optional<Candidate> cand_;
};

// ---------------------------------------------------------------------------
// VSR: passive replication with a designated majority, certifiers co-located
// with replicas, speculative application at certification, and view changes
// run by a pre-assigned manager that appoints the best-stamped certifier.

class VsrNode : public EngineNode {
 public:
  VsrNode(Shared* sh, uint16_t idx) : EngineNode(sh, idx) {
    state_ = sh->cfg->initial_state();
    if (idx_ == 0) is_seq_ = true;
    for (uint16_t i = 0; i <= sh_->cfg->f && i < sh_->n; ++i) dm_.insert(i);
  }

 protected:
  void serve(const Command& cmd) override {
    std::string key = cmd.encode();
    if (cmd_slot_.count(key)) return;  // in flight; response follows completion
    Slot slot = applied_ + 1;
    Value val = Value::passive_from(state_, cmd);
    {
      TraceEvent ev = sh_->sim->make_event(proposer_pid(), Tr::propose);
      ev.slot = slot;
      ev.val = val;
      sh_->sim->emit(std::move(ev));
    }
    {
      TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::certify_seq);
      ev.slot = slot;
      ev.round = bev_;
      ev.val = val;
      sh_->sim->emit(std::move(ev));
    }
    state_ = val.update.new_state;
    applied_ = slot;
    cmd_slot_[key] = slot;
    inflight_[slot] = InFlight{cmd, val, {idx_}};
    Message m = base_msg(WireTag::CERTSEQ);
    m.slot = slot;
    m.val = val;
    for (uint16_t c : dm_)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), m);
    complete_ready();
  }

  void handle_protocol(const Message& m) override {
    switch (m.tag) {
      case WireTag::CERTSEQ: on_certseq(m); break;
      case WireTag::CERT: on_cert(m); break;
      case WireTag::SUPPORT: on_support(m); break;
      case WireTag::STAMP: on_stamp(m); break;
      case WireTag::NEWVIEW: on_newview(m); break;
      case WireTag::SNAPSHOT: on_state(m); break;
      case WireTag::ACK: on_ack(m); break;
      default: note("ignored:" + to_string(m.tag)); break;
    }
  }

  bool has_undecided_work() const override { return !inflight_.empty() || applied_ > done_; }

  // the next round this certifier manages
  void start_recovery() override {
    RoundId b = idx_ > bev_.owner ? RoundId{bev_.counter, idx_} : RoundId{bev_.counter + 1, idx_};
    mgr_.emplace();
    mgr_->b = b;
    support_to(b, idx_);
    mgr_->stamps[idx_] = RoundStamp{stamp_round_, applied_};
    Message q;
    q.tag = WireTag::SUPPORT;
    q.round = b;
    q.coord = cert_pid();
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), q);
    arm_progress();
  }

 private:
  struct InFlight {
    Command cmd;
    Value val;
    std::set<uint16_t> certs;
  };

  uint32_t majority() const { return sh_->n / 2 + 1; }

  void support_to(RoundId b, uint16_t coord) {
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::support_round);
    ev.round = b;
    ev.peer = sh_->cert(coord);
    sh_->sim->emit(std::move(ev));
    bev_ = b;
    is_seq_ = false;
    inflight_.clear();
    if (mgr_ && mgr_->b < b) mgr_.reset();
  }

  void on_certseq(const Message& m) {
    if (m.round < bev_) {
      note("stale_round");
      return;
    }
    if (m.round > bev_ || m.slot != applied_ + 1 || stamp_round_ != m.round) {
      buffered_[m.slot] = m;  // wait for the view's state transfer
      return;
    }
    const Value& val = *m.val;
    if (val.update.old_digest != state_.digest()) {
      TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::note);
      ev.tag = "prefix_violation";
      ev.slot = m.slot;
      sh_->sim->emit(std::move(ev));
      return;
    }
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::certify);
    ev.slot = m.slot;
    ev.round = bev_;
    ev.val = val;
    sh_->sim->emit(std::move(ev));
    // speculative: the co-located replica state advances at certification
    state_ = val.update.new_state;
    applied_ = m.slot;
    seq_hint_ = m.from.index;
    Message reply = base_msg(WireTag::CERT);
    reply.slot = m.slot;
    sh_->sim->send(cert_pid(), m.from, reply);
    drain_buffered();
  }

  void drain_buffered() {
    while (true) {
      auto it = buffered_.find(applied_ + 1);
      if (it == buffered_.end()) return;
      Message msg = it->second;
      buffered_.erase(it);
      if (msg.round != bev_ || stamp_round_ != msg.round) return;
      on_certseq(msg);
      return;  // on_certseq recurses through the buffer
    }
  }

  void on_cert(const Message& m) {
    if (!is_seq_ || m.round != bev_) {
      note("stray_cert");
      return;
    }
    auto it = inflight_.find(m.slot);
    if (it == inflight_.end()) return;
    it->second.certs.insert(m.from.index);
    complete_ready();
  }

  // responses wait for the full designated majority, in slot order
  void complete_ready() {
    while (!inflight_.empty()) {
      auto it = inflight_.begin();
      bool all = true;
      for (uint16_t c : dm_)
        if (!it->second.certs.count(c)) all = false;
      if (!all) return;
      Slot slot = it->first;
      const Value& val = it->second.val;
      decided_[slot] = val;
      journal(slot, val, val.update.new_state.digest());
      respond(it->second.cmd, val.update.res);
      done_ = std::max(done_, slot);
      inflight_.erase(it);
    }
  }

  // learn/update records for the co-located replica; values may be implied
  // by the decision when only a digest is known
  void journal(Slot slot, std::optional<Value> val, uint64_t digest) {
    if (!repl_ || repl_->version > slot) return;
    {
      TraceEvent ev = sh_->sim->make_event(self_repl_pid(), Tr::learn);
      ev.slot = slot;
      if (val) ev.val = *val;
      sh_->sim->emit(std::move(ev));
    }
    {
      TraceEvent ev = sh_->sim->make_event(self_repl_pid(), Tr::update);
      ev.version = slot;
      if (val) ev.val = *val;
      ev.digest = digest;
      sh_->sim->emit(std::move(ev));
    }
    repl_->version = slot + 1;
    if (val) repl_->state = val->update.new_state;
  }

  void on_support(const Message& m) {
    if (m.round > bev_) {
      support_to(m.round, m.coord.index);
      Message reply;
      reply.tag = WireTag::STAMP;
      reply.round = m.round;
      reply.stamp = RoundStamp{stamp_round_, applied_};
      sh_->sim->send(cert_pid(), m.from, reply);
      arm_progress();
    } else {
      Message nack = base_msg(WireTag::ACK);
      nack.ok = false;
      sh_->sim->send(cert_pid(), m.from, nack);
    }
  }

  void on_stamp(const Message& m) {
    if (!mgr_ || m.round != mgr_->b || mgr_->fixed) {
      note("late_stamp");
      return;
    }
    mgr_->stamps[m.from.index] = m.stamp;
    if (mgr_->stamps.size() < majority()) return;
    // the responders become the designated majority; the best stamp leads it
    mgr_->fixed = true;
    std::set<uint16_t> dm;
    uint16_t best = idx_;
    RoundStamp best_stamp{};
    bool first = true;
    for (const auto& [id, st] : mgr_->stamps) {
      dm.insert(id);
      if (first || st > best_stamp || (st == best_stamp && id < best)) {
        best = id;
        best_stamp = st;
        first = false;
      }
    }
    std::vector<uint16_t> donors(dm.begin(), dm.end());
    if (best == idx_) {
      become_sequencer(mgr_->b, dm, donors);
      mgr_.reset();
      return;
    }
    Message m2;
    m2.tag = WireTag::NEWVIEW;
    m2.round = mgr_->b;
    m2.sequencer = sh_->cert(best);
    for (uint16_t c : dm) m2.members.push_back(c);
    for (uint16_t d : donors) (void)d;
    m2.entries.clear();
    m2.count = 0;
    m2.phase = 0;
    m2.coord = cert_pid();
    for (uint16_t d : donors) m2.entries.push_back({d, RoundId{}, Value{}});
    sh_->sim->send(cert_pid(), sh_->cert(best), m2);
    mgr_.reset();
  }

  void on_newview(const Message& m) {
    if (m.round != bev_ || is_seq_) {
      note("stale_appointment");
      return;
    }
    std::set<uint16_t> dm(m.members.begin(), m.members.end());
    std::vector<uint16_t> donors;
    for (const auto& e : m.entries) donors.push_back(e.slot == 0 ? 0 : static_cast<uint16_t>(e.slot));
    become_sequencer(m.round, dm, donors);
  }

  void become_sequencer(RoundId b, const std::set<uint16_t>& dm,
                        const std::vector<uint16_t>& donors) {
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::recover);
    ev.round = b;
    ev.donors = donors;
    sh_->sim->emit(std::move(ev));
    is_seq_ = true;
    seq_hint_ = idx_;
    dm_ = dm;
    stamp_round_ = b;
    journal_upto_ = applied_;
    journal_digest_ = state_.digest();
    adopt_acks_ = {idx_};
    journaled_ = false;
    // highest round-stamp wins: the new sequencer pushes its own state out
    Message st;
    st.tag = WireTag::SNAPSHOT;
    st.round = b;
    st.app_state = state_;
    st.count = applied_;
    st.sequencer = cert_pid();
    for (uint16_t c : dm_) st.members.push_back(c);
    for (uint16_t c = 0; c < sh_->n; ++c)
      if (c != idx_) sh_->sim->send(cert_pid(), sh_->cert(c), st);
    TraceEvent rs = sh_->sim->make_event(proposer_pid(), Tr::reset_shadow);
    rs.version = applied_ + 1;
    rs.digest = state_.digest();
    sh_->sim->emit(std::move(rs));
    backoff_attempts_ = 0;
    cmd_slot_.clear();
    maybe_journal();
    serve_pending();
  }

  void on_state(const Message& m) {
    if (m.round > bev_) support_to(m.round, m.round.owner);
    if (m.round != bev_ || stamp_round_ >= m.round) {
      note("stale_state");
      return;
    }
    TraceEvent ev = sh_->sim->make_event(cert_pid(), Tr::adopt_state);
    ev.round = m.round;
    ev.count = m.count;
    ev.digest = m.app_state.digest();
    sh_->sim->emit(std::move(ev));
    state_ = m.app_state;
    applied_ = m.count;
    stamp_round_ = m.round;
    dm_.clear();
    for (uint16_t c : m.members) dm_.insert(c);
    seq_hint_ = m.sequencer.index;
    Message ack = base_msg(WireTag::ACK);
    ack.ok = true;
    sh_->sim->send(cert_pid(), m.sequencer, ack);
    drain_buffered();
  }

  void on_ack(const Message& m) {
    if (!m.ok) {
      if (mgr_) {
        mgr_.reset();
        ++backoff_attempts_;
        if (sh_->cfg->backoff == ScenarioConfig::Backoff::immediate) start_recovery();
        else arm_progress();
      }
      return;
    }
    if (journaled_ || m.round != bev_ || !is_seq_) return;
    adopt_acks_.insert(m.from.index);
    maybe_journal();
  }

  // once the designated majority holds the view's state, the adopted prefix
  // is decided and the sequencer's replica catches up
  void maybe_journal() {
    if (journaled_) return;
    for (uint16_t c : dm_)
      if (!adopt_acks_.count(c)) return;
    journaled_ = true;
    if (repl_) {
      for (Slot s = repl_->version; s <= journal_upto_; ++s)
        journal(s, std::nullopt, s == journal_upto_ ? journal_digest_ : 0);
    }
    complete_ready();
  }

  AppState state_;
  uint32_t applied_{0};
  uint32_t done_{0};
  RoundId stamp_round_{};
  std::set<uint16_t> dm_;
  std::map<Slot, InFlight> inflight_;
  std::map<Slot, Message> buffered_;
  struct Mgr {
    RoundId b{};
    std::map<uint16_t, RoundStamp> stamps;
    bool fixed{false};
  };
  std::optional<Mgr> mgr_;
  std::set<uint16_t> adopt_acks_;
  bool journaled_{true};
  uint32_t journal_upto_{0};
  uint64_t journal_digest_{0};
};

// ---------------------------------------------------------------------------
// Online safety monitor: cheap checks that gate the run's exit code. The full
// refinement replay runs out of band.

struct OnlineMonitor {
  uint32_t n{0};
  std::map<Slot, std::string> learned_value;
  std::map<std::pair<Slot, std::string>, std::string> round_value;  // (slot, round) -> value
  std::map<ProcessId, Tick> crash_at;
  uint32_t decided{0};
  bool violation{false};
  std::string reason;

  void on_event(const TraceEvent& ev) {
    if (violation) return;
    switch (ev.tr) {
      case Tr::crash:
        crash_at[ev.proc] = ev.t;
        return;
      case Tr::learn: {
        if (!ev.val) return;
        std::string key = ev.val->encode();
        auto [it, fresh] = learned_value.insert({ev.slot, key});
        if (fresh) ++decided;
        else if (it->second != key) {
          violation = true;
          reason = "agreement: slot " + std::to_string(ev.slot) + " learned two values";
        }
        return;
      }
      case Tr::certify:
      case Tr::certify_seq: {
        if (!ev.val) return;
        std::string key = ev.val->encode();
        auto [it, fresh] =
            round_value.insert({{ev.slot, to_string(ev.round)}, key});
        if (!fresh && it->second != key) {
          violation = true;
          reason = "uniqueness: slot " + std::to_string(ev.slot) + " round " +
                   to_string(ev.round) + " certified two values";
        }
        return;
      }
      case Tr::note:
        if (ev.tag == "prefix_violation") {
          violation = true;
          reason = "prefix order violated at slot " + std::to_string(ev.slot);
        }
        return;
      default: {
        auto it = crash_at.find(ev.proc);
        if (it != crash_at.end() && ev.t > it->second) {
          violation = true;
          reason = "crash-stop: " + to_string(ev.proc) + " acted after crashing";
        }
        return;
      }
    }
  }
};

}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();

  NetConfig net;
  net.base = cfg.delay;
  net.max_defer = cfg.max_defer;
  auto node_id = [&](ProcessId p) -> int {
    switch (p.kind) {
      case ProcKind::certifier:
      case ProcKind::replica: return p.index;
      case ProcKind::client: return 1000 + p.index;
      default: return -1;
    }
  };
  for (const auto& link : cfg.links) {
    net.overrides[{node_id(link.from), node_id(link.to)}] = link.model;
    if (link.both_ways)
      net.overrides[{node_id(link.to), node_id(link.from)}] = link.model;
  }

  TraceSink sink;
  Simulation sim(cfg.seed, net, sink);

  Shared sh;
  sh.sim = &sim;
  sh.cfg = &cfg;
  sh.n = static_cast<uint16_t>(cfg.n);
  sh.m = static_cast<uint16_t>(cfg.replicas);
  sh.po = cfg.po_enabled();

  std::vector<std::unique_ptr<Actor>> actors;
  for (uint16_t i = 0; i < sh.n; ++i) {
    std::unique_ptr<EngineNode> node;
    switch (cfg.protocol) {
      case Protocol::paxos: node = std::make_unique<PaxosNode>(&sh, i); break;
      case Protocol::zab: node = std::make_unique<ZabNode>(&sh, i); break;
      case Protocol::vsr: node = std::make_unique<VsrNode>(&sh, i); break;
    }
    sim.add_actor(ProcessId::certifier(i), node.get(), i);
    if (i < sh.m) sim.add_actor(ProcessId::replica(i), node.get(), i);
    actors.push_back(std::move(node));
  }
  auto workload = build_workload(cfg);
  for (uint16_t c = 0; c < cfg.clients; ++c) {
    auto client = std::make_unique<ClientActor>(&sh, c, workload[c]);
    sim.add_actor(ProcessId::client(c), client.get(), 1000 + c);
    actors.push_back(std::move(client));
  }

  for (const auto& crash : cfg.crashes) {
    if (crash.at) sim.schedule_crash(crash.victim, *crash.at);
    else if (crash.trigger) sim.add_crash_trigger(*crash.trigger);
  }

  OnlineMonitor monitor;
  monitor.n = cfg.n;
  sink.set_observer([&monitor](const TraceEvent& ev) { monitor.on_event(ev); });

  sim.start();
  while (sim.step()) {
    if (sim.now() > cfg.max_ticks) break;
    if (cfg.target_decided && monitor.decided >= cfg.target_decided) break;
  }

  RunResult result;
  result.header["header"] = nlohmann::ordered_json{{"format", 1}, {"config", cfg.to_json()}};
  result.trace = sink.events();
  result.decided = monitor.decided;
  result.violation = monitor.violation;
  result.violation_reason = monitor.reason;
  result.end_time = sim.now();
  return result;
}

}  // namespace replab
