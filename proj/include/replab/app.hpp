#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "replab/types.hpp"

namespace replab {

enum class AppKind : uint8_t { reg, kv };

// One client operation. (client, seq) is the globally unique operation id;
// an operation can be invoked at most once by its client.
struct Operation {
  enum class Kind : uint8_t { inc, dbl, set, read, put, get } kind{Kind::read};
  int64_t value{0};
  std::string key;

  friend auto operator<=>(const Operation&, const Operation&) = default;
};

std::string to_string(Operation::Kind k);
bool parse_op_kind(std::string_view s, Operation::Kind& out);

struct Command {
  ProcessId client{};
  uint32_t op_seq{0};
  Operation op{};

  friend auto operator<=>(const Command&, const Command&) = default;
  std::string encode() const;  // canonical, used for identity and hashing
};

struct Result {
  bool absent{false};  // kv get on a missing key
  int64_t value{0};

  friend auto operator<=>(const Result&, const Result&) = default;
  std::string encode() const;
};

// Application state plus an update counter. The digest covers both, so two
// states compare equal iff they hold the same value at the same depth of the
// update chain.
struct AppState {
  AppKind kind{AppKind::reg};
  int64_t reg_value{0};
  std::map<std::string, int64_t> kv;
  uint32_t updates{0};

  friend auto operator<=>(const AppState&, const AppState&) = default;
  std::string encode() const;
  uint64_t digest() const { return hash64(encode()); }

  static AppState initial(AppKind kind, int64_t reg_init) {
    AppState s;
    s.kind = kind;
    s.reg_value = reg_init;
    return s;
  }
};

// Pure and deterministic. Malformed operations (wrong application) yield an
// absent result and leave the state untouched except for the update count.
std::pair<Result, AppState> next_state(const AppState& state, const Command& cmd);

// Provenance-carrying state update used by passive replication.
struct StateUpdate {
  uint64_t old_digest{0};
  Result res{};
  AppState new_state;

  friend auto operator<=>(const StateUpdate&, const StateUpdate&) = default;
};

// A consensus value: the command, plus update provenance in passive mode.
struct Value {
  bool passive{false};
  Command cmd{};
  StateUpdate update{};  // meaningful only when passive

  friend auto operator<=>(const Value&, const Value&) = default;
  std::string encode() const;

  static Value active(const Command& c) {
    Value v;
    v.cmd = c;
    return v;
  }
  static Value passive_from(const AppState& base, const Command& c) {
    auto [res, ns] = next_state(base, c);
    Value v;
    v.passive = true;
    v.cmd = c;
    v.update = StateUpdate{base.digest(), res, ns};
    return v;
  }
};

struct ApplyOutcome {
  bool ok{false};  // false: prefix-order violation (digest mismatch)
  AppState state;
  Result res{};
};

// Applies a state update; the caller's state digest must equal the digest the
// update was computed from.
ApplyOutcome apply_update(const AppState& state, const Value& update_value);

}  // namespace replab
