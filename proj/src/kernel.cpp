#include "replab/kernel.hpp"

#include <cassert>
#include <stdexcept>

namespace replab {

namespace {
const char* kWireNames[] = {
    "REQUEST", "RESPONSE", "PROPOSE", "CERTSEQ", "CERT",   "DECIDE", "SUPPORT",
    "SNAPSHOT", "STAMP",   "SYNC",    "ACK",     "COMMIT", "NEWVIEW",
};
}

std::string to_string(WireTag t) { return kWireNames[static_cast<size_t>(t)]; }

PoolTag pool_tag_of(WireTag t) {
  switch (t) {
    case WireTag::REQUEST: return PoolTag::input;
    case WireTag::RESPONSE: return PoolTag::output;
    case WireTag::CERTSEQ:
    case WireTag::CERT: return PoolTag::certified;
    case WireTag::SNAPSHOT:
    case WireTag::NEWVIEW: return PoolTag::snapshot;
    default: return PoolTag::protocol;
  }
}

Simulation::Simulation(uint64_t seed, NetConfig net, TraceSink& sink)
    : rng_(seed), net_(std::move(net)), sink_(sink) {}

void Simulation::add_actor(ProcessId pid, Actor* actor, int node) {
  actors_[pid] = actor;
  nodes_[pid] = node;
}

void Simulation::schedule_crash(ProcessId p, Tick t) {
  QEvent ev;
  ev.t = t;
  ev.kind = QEvent::Kind::crash;
  ev.target = p;
  push(ev);
}

void Simulation::add_crash_trigger(CrashTrigger trig) {
  triggers_.push_back(trig);
  trigger_hits_.push_back(0);
}

void Simulation::start() {
  for (auto& [pid, actor] : actors_) {
    QEvent ev;
    ev.t = 0;
    ev.kind = QEvent::Kind::start;
    ev.target = pid;
    push(ev);
  }
}

bool Simulation::crashed(ProcessId p) const { return crashed_.count(p) > 0; }

std::optional<Tick> Simulation::crash_time(ProcessId p) const {
  auto it = crashed_.find(p);
  if (it == crashed_.end()) return std::nullopt;
  return it->second;
}

int Simulation::node_of(ProcessId p) const {
  auto it = nodes_.find(p);
  return it == nodes_.end() ? -1 : it->second;
}

ProcessId Simulation::omega(Tick lag) const {
  for (uint16_t i = 0;; ++i) {
    ProcessId c = ProcessId::certifier(i);
    if (!actors_.count(c)) break;
    auto ct = crash_time(c);
    if (!ct || now_ < *ct + lag) return c;
  }
  return ProcessId::certifier(0);
}

const LinkModel& Simulation::link(ProcessId from, ProcessId to) const {
  auto it = net_.overrides.find({node_of(from), node_of(to)});
  return it == net_.overrides.end() ? net_.base : it->second;
}

void Simulation::push(QEvent ev) {
  ev.order = order_++;
  queue_.push(ev);
}

TraceEvent Simulation::make_event(ProcessId proc, Tr tr) const {
  TraceEvent ev;
  ev.t = now_;
  ev.proc = proc;
  ev.tr = tr;
  return ev;
}

void Simulation::emit(TraceEvent ev) {
  ev.seq = trace_seq_++;
  ev.t = now_;
  check_triggers(ev);
  sink_.append(std::move(ev));
}

void Simulation::check_triggers(const TraceEvent& ev) {
  for (size_t i = 0; i < triggers_.size(); ++i) {
    auto& trig = triggers_[i];
    if (crashed(trig.victim)) continue;
    if (ev.tr != trig.tr) continue;
    if (trig.slot != 0 && ev.slot != trig.slot) continue;
    if (++trigger_hits_[i] == trig.count) crash_now(trig.victim);
  }
}

void Simulation::crash_now(ProcessId p) {
  if (crashed(p)) return;
  crashed_[p] = now_;
  TraceEvent ev = make_event(p, Tr::crash);
  ev.seq = trace_seq_++;
  sink_.append(std::move(ev));
}

void Simulation::send(ProcessId from, ProcessId to, Message m) {
  m.from = from;
  m.to = to;
  m.pool_id = pool_.size();
  PoolEntry entry;
  entry.tag = pool_tag_of(m.tag);
  bool local = node_of(from) == node_of(to);

  TraceEvent ev = make_event(from, Tr::send);
  ev.tag = to_string(m.tag);
  ev.peer = to;
  ev.slot = m.slot;
  ev.round = m.round;
  ev.local = local;
  emit(std::move(ev));

  QEvent q;
  q.kind = QEvent::Kind::deliver;
  q.target = to;
  q.pool_id = m.pool_id;
  q.t = local ? now_ : now_ + rng_.range(link(from, to).delay_min, link(from, to).delay_max);
  entry.msg = std::move(m);
  pool_.push_back(std::move(entry));
  push(q);
}

void Simulation::set_timer(ProcessId p, Tick delay, uint64_t kind, uint64_t data) {
  if (crashed(p)) return;
  QEvent q;
  q.kind = QEvent::Kind::timer;
  q.target = p;
  q.t = now_ + delay;
  q.timer_kind = kind;
  q.timer_data = data;
  push(q);
}

bool Simulation::step() {
  if (queue_.empty()) return false;
  QEvent ev = queue_.top();
  queue_.pop();
  assert(ev.t >= now_);
  now_ = ev.t;

  switch (ev.kind) {
    case QEvent::Kind::crash:
      crash_now(ev.target);
      break;

    case QEvent::Kind::start: {
      if (crashed(ev.target)) break;
      TraceEvent te = make_event(ev.target, Tr::note);
      te.tag = "start";
      emit(std::move(te));
      actors_.at(ev.target)->on_start();
      break;
    }

    case QEvent::Kind::timer: {
      if (crashed(ev.target)) break;  // internal timers die with the process
      TraceEvent te = make_event(ev.target, Tr::timer);
      te.tag = std::to_string(ev.timer_kind);
      emit(std::move(te));
      actors_.at(ev.target)->on_timer(ev.timer_kind, ev.timer_data);
      break;
    }

    case QEvent::Kind::deliver: {
      PoolEntry& entry = pool_.at(ev.pool_id);
      const Message& m = entry.msg;
      if (crashed(ev.target)) {
        entry.status = PoolEntry::Status::dropped_crash;
        TraceEvent te = make_event(ProcessId::kernel_proc(), Tr::discard);
        te.tag = to_string(m.tag);
        te.peer = ev.target;
        emit(std::move(te));
        break;
      }
      const LinkModel& lm = link(m.from, m.to);
      bool local = node_of(m.from) == node_of(m.to);
      if (!local && lm.loss > 0.0 &&
          (net_.max_defer == 0 || entry.loss_count < net_.max_defer) &&
          rng_.chance(lm.loss)) {
        // Loss is delay: the delivery is rescheduled, never removed.
        entry.loss_count++;
        TraceEvent te = make_event(ProcessId::kernel_proc(), Tr::net_delay);
        te.tag = to_string(m.tag);
        te.peer = ev.target;
        emit(std::move(te));
        QEvent retry = ev;
        retry.t = now_ + rng_.range(lm.delay_min, lm.delay_max);
        retry.attempt = ev.attempt + 1;
        push(retry);
        break;
      }
      entry.status = PoolEntry::Status::delivered;
      TraceEvent te = make_event(ev.target, Tr::deliver);
      te.tag = to_string(m.tag);
      te.peer = m.from;
      te.slot = m.slot;
      te.round = m.round;
      emit(std::move(te));
      actors_.at(ev.target)->on_message(m);
      break;
    }
  }
  return true;
}

}  // namespace replab
