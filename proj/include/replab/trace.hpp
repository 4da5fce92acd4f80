#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "replab/app.hpp"
#include "replab/types.hpp"

namespace replab {

// Trace record transitions. `send`/`deliver`/`timer`/`crash`/`discard`/
// `net_delay`/`note` are scheduler-level records; the rest are protocol
// transitions consumed by the refinement checker.
enum class Tr : uint8_t {
  invoke,
  propose,
  certify_seq,
  certify,
  learn,
  update,
  reset_shadow,
  adopt_state,
  support_round,
  recover,
  response,
  send,
  deliver,
  timer,
  crash,
  discard,
  net_delay,
  note,
};

std::string to_string(Tr t);
bool parse_tr(std::string_view s, Tr& out);

struct TraceEvent {
  uint64_t seq{0};
  Tick t{0};
  ProcessId proc{};
  Tr tr{Tr::note};

  Slot slot{0};
  RoundId round{};
  ProcessId peer{};                 // coordinator / recipient / responder
  std::optional<Value> val;
  std::optional<Result> res;
  uint64_t digest{0};
  uint32_t version{0};
  uint32_t count{0};                // adopted prefix length, donor count, etc.
  std::vector<uint16_t> donors;     // certifier ids backing a recover
  std::string tag;                  // wire tag for send/deliver, free text for notes
  bool local{false};                // send between co-located roles

  nlohmann::ordered_json to_json() const;
  static TraceEvent from_json(const nlohmann::ordered_json& j);
  std::string line() const { return to_json().dump(); }
};

// In-memory sink; an observer may watch events as they are appended.
class TraceSink {
 public:
  using Observer = std::function<void(const TraceEvent&)>;

  void set_observer(Observer obs) { observer_ = std::move(obs); }
  void append(TraceEvent ev) {
    events_.push_back(std::move(ev));
    if (observer_) observer_(events_.back());
  }
  const std::vector<TraceEvent>& events() const { return events_; }
  void clear() { events_.clear(); }

 private:
  std::vector<TraceEvent> events_;
  Observer observer_;
};

std::string render_trace(const std::vector<TraceEvent>& events,
                         const nlohmann::ordered_json& header);
// Throws std::runtime_error with a line number on malformed input.
std::vector<TraceEvent> parse_trace(const std::string& text,
                                    nlohmann::ordered_json* header_out);

nlohmann::ordered_json value_to_json(const Value& v);
Value value_from_json(const nlohmann::ordered_json& j);

}  // namespace replab
