#pragma once

#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "replab/app.hpp"
#include "replab/rng.hpp"
#include "replab/trace.hpp"
#include "replab/types.hpp"

namespace replab {

// Wire tags. Values on the network realize the global sets of the protocol
// state: requests are inputs, responses outputs, certification broadcasts the
// certified set, snapshots/state transfers the snapshots set.
enum class WireTag : uint8_t {
  REQUEST,
  RESPONSE,
  PROPOSE,
  CERTSEQ,
  CERT,
  DECIDE,
  SUPPORT,
  SNAPSHOT,
  STAMP,
  SYNC,
  ACK,
  COMMIT,
  NEWVIEW,
};

std::string to_string(WireTag t);

enum class PoolTag : uint8_t { input, output, certified, snapshot, protocol };
PoolTag pool_tag_of(WireTag t);

struct SlotEntry {
  Slot slot{0};
  RoundId round{};
  Value val{};
};

struct Message {
  WireTag tag{WireTag::REQUEST};
  ProcessId from{};
  ProcessId to{};
  RoundId round{};
  Slot slot{0};
  std::optional<Value> val;
  std::optional<Result> res;
  ProcessId coord{};
  RoundStamp stamp{};
  bool ok{true};
  uint32_t phase{0};
  // recovery payloads
  RoundId floor{};
  std::vector<SlotEntry> entries;   // snapshot / sync batches
  AppState app_state;               // vsr state transfer
  uint32_t count{0};
  std::vector<uint16_t> members;    // designated majority / donor ids
  ProcessId sequencer{};
  uint64_t pool_id{0};
};

struct LinkModel {
  Tick delay_min{1};
  Tick delay_max{1};
  double loss{0.0};
};

struct NetConfig {
  LinkModel base{};
  // keyed by (from node, to node); resolved from process names at setup
  std::map<std::pair<int, int>, LinkModel> overrides;
  // A delivery lost more than max_defer times is forced through; 0 disables
  // forcing entirely.
  uint32_t max_defer{16};
};

// Grow-only record of every message ever sent, with per-recipient delivery
// status. Loss shows up as extra delay, never as removal.
struct PoolEntry {
  Message msg;
  PoolTag tag{PoolTag::protocol};
  enum class Status : uint8_t { pending, delivered, dropped_crash } status{Status::pending};
  uint32_t loss_count{0};
};

class Simulation;

class Actor {
 public:
  virtual ~Actor() = default;
  virtual void on_start() {}
  virtual void on_message(const Message& m) = 0;
  virtual void on_timer(uint64_t kind, uint64_t data) {}
};

struct CrashTrigger {
  ProcessId victim{};
  Tr tr{Tr::certify};
  Slot slot{0};        // 0 = any
  uint32_t count{1};   // fires on the count-th match
};

// Deterministic discrete-event core. Single-threaded; one instance per
// scenario. Events fire in (time, schedule-order) order and each executed
// event appends at least one trace record.
class Simulation {
 public:
  Simulation(uint64_t seed, NetConfig net, TraceSink& sink);

  void add_actor(ProcessId pid, Actor* actor, int node);
  void schedule_crash(ProcessId p, Tick t);
  void add_crash_trigger(CrashTrigger trig);

  void start();                  // schedules on_start for every actor at t=0
  bool step();                   // fires the next event; false when quiescent
  Tick now() const { return now_; }
  Rng& rng() { return rng_; }

  bool crashed(ProcessId p) const;
  std::optional<Tick> crash_time(ProcessId p) const;
  int node_of(ProcessId p) const;

  // Lowest-index certifier believed live: a crash becomes visible only after
  // `lag` ticks.
  ProcessId omega(Tick lag) const;

  void send(ProcessId from, ProcessId to, Message m);
  void set_timer(ProcessId p, Tick delay, uint64_t kind, uint64_t data = 0);

  // Appends a trace record, stamping seq and current time.
  void emit(TraceEvent ev);
  TraceEvent make_event(ProcessId proc, Tr tr) const;

  const std::vector<PoolEntry>& pool() const { return pool_; }
  uint64_t events_emitted() const { return trace_seq_; }

 private:
  struct QEvent {
    Tick t{0};
    uint64_t order{0};
    enum class Kind : uint8_t { start, deliver, timer, crash } kind{Kind::start};
    ProcessId target{};
    uint64_t pool_id{0};
    uint32_t attempt{0};
    uint64_t timer_kind{0};
    uint64_t timer_data{0};
  };
  struct QCmp {
    bool operator()(const QEvent& a, const QEvent& b) const {
      return a.t != b.t ? a.t > b.t : a.order > b.order;
    }
  };

  const LinkModel& link(ProcessId from, ProcessId to) const;
  void push(QEvent ev);
  void check_triggers(const TraceEvent& ev);
  void crash_now(ProcessId p);

  Rng rng_;
  NetConfig net_;
  TraceSink& sink_;
  Tick now_{0};
  uint64_t order_{0};
  uint64_t trace_seq_{0};
  std::priority_queue<QEvent, std::vector<QEvent>, QCmp> queue_;
  std::map<ProcessId, Actor*> actors_;
  std::map<ProcessId, int> nodes_;
  std::map<ProcessId, Tick> crashed_;
  std::vector<PoolEntry> pool_;
  std::vector<CrashTrigger> triggers_;
  std::vector<uint32_t> trigger_hits_;
};

}  // namespace replab
