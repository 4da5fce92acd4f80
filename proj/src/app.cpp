#include "replab/app.hpp"

#include <sstream>

namespace replab {

std::string to_string(ProcessId p) {
  switch (p.kind) {
    case ProcKind::client: return "cli" + std::to_string(p.index);
    case ProcKind::replica: return "repl" + std::to_string(p.index);
    case ProcKind::certifier: return "cert" + std::to_string(p.index);
    case ProcKind::oracle: return "omega";
    case ProcKind::kernel: return "kernel";
  }
  return "?";
}

bool parse_process(std::string_view s, ProcessId& out) {
  auto starts = [&](std::string_view pre) { return s.substr(0, pre.size()) == pre; };
  auto num = [&](size_t off, uint16_t& idx) {
    if (off >= s.size()) return false;
    uint32_t v = 0;
    for (size_t i = off; i < s.size(); ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
      v = v * 10 + uint32_t(s[i] - '0');
    }
    idx = static_cast<uint16_t>(v);
    return true;
  };
  uint16_t idx = 0;
  if (starts("cli") && num(3, idx)) { out = ProcessId::client(idx); return true; }
  if (starts("repl") && num(4, idx)) { out = ProcessId::replica(idx); return true; }
  if (starts("cert") && num(4, idx)) { out = ProcessId::certifier(idx); return true; }
  if (s == "omega") { out = {ProcKind::oracle, 0}; return true; }
  if (s == "kernel") { out = ProcessId::kernel_proc(); return true; }
  return false;
}

std::string to_string(RoundId r) {
  return std::to_string(r.counter) + "." + std::to_string(r.owner);
}

std::string to_string(RoundStamp s) {
  return "(" + to_string(s.round) + "," + std::to_string(s.count) + ")";
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string to_string(Operation::Kind k) {
  switch (k) {
    case Operation::Kind::inc: return "inc";
    case Operation::Kind::dbl: return "double";
    case Operation::Kind::set: return "set";
    case Operation::Kind::read: return "read";
    case Operation::Kind::put: return "put";
    case Operation::Kind::get: return "get";
  }
  return "?";
}

bool parse_op_kind(std::string_view s, Operation::Kind& out) {
  if (s == "inc") out = Operation::Kind::inc;
  else if (s == "double" || s == "dbl") out = Operation::Kind::dbl;
  else if (s == "set") out = Operation::Kind::set;
  else if (s == "read") out = Operation::Kind::read;
  else if (s == "put") out = Operation::Kind::put;
  else if (s == "get") out = Operation::Kind::get;
  else return false;
  return true;
}

std::string Command::encode() const {
  std::ostringstream os;
  os << to_string(client) << '#' << op_seq << ':' << to_string(op.kind);
  switch (op.kind) {
    case Operation::Kind::set: os << '(' << op.value << ')'; break;
    case Operation::Kind::put: os << '(' << op.key << '=' << op.value << ')'; break;
    case Operation::Kind::get: os << '(' << op.key << ')'; break;
    default: break;
  }
  return os.str();
}

std::string Result::encode() const {
  return absent ? std::string("absent") : std::to_string(value);
}

std::string AppState::encode() const {
  std::ostringstream os;
  os << (kind == AppKind::reg ? 'R' : 'K') << updates << ':';
  if (kind == AppKind::reg) {
    os << reg_value;
  } else {
    bool first = true;
    for (const auto& [k, v] : kv) {
      if (!first) os << ',';
      first = false;
      os << k << '=' << v;
    }
  }
  return os.str();
}

std::pair<Result, AppState> next_state(const AppState& state, const Command& cmd) {
  AppState ns = state;
  ns.updates += 1;
  Result res;
  const Operation& op = cmd.op;
  if (state.kind == AppKind::reg) {
    switch (op.kind) {
      case Operation::Kind::inc: ns.reg_value = state.reg_value + 1; res.value = ns.reg_value; break;
      case Operation::Kind::dbl: ns.reg_value = state.reg_value * 2; res.value = ns.reg_value; break;
      case Operation::Kind::set: ns.reg_value = op.value; res.value = ns.reg_value; break;
      case Operation::Kind::read: res.value = state.reg_value; break;
      default: res.absent = true; break;  // wrong application: deterministic error result
    }
  } else {
    switch (op.kind) {
      case Operation::Kind::put:
        ns.kv[op.key] = op.value;
        res.value = op.value;
        break;
      case Operation::Kind::get: {
        auto it = state.kv.find(op.key);
        if (it == state.kv.end()) res.absent = true;
        else res.value = it->second;
        break;
      }
      default: res.absent = true; break;
    }
  }
  return {res, ns};
}

std::string Value::encode() const {
  if (!passive) return "C|" + cmd.encode();
  std::ostringstream os;
  os << "U|" << hex64(update.old_digest) << '|' << cmd.encode() << '|'
     << update.res.encode() << '|' << update.new_state.encode();
  return os.str();
}

ApplyOutcome apply_update(const AppState& state, const Value& v) {
  ApplyOutcome out;
  if (!v.passive || state.digest() != v.update.old_digest) {
    out.ok = false;
    out.state = state;
    return out;
  }
  out.ok = true;
  out.state = v.update.new_state;
  out.res = v.update.res;
  return out;
}

}  // namespace replab
