#include "replab/trace.hpp"

#include <sstream>
#include <stdexcept>

namespace replab {

using nlohmann::ordered_json;

namespace {

const char* kTrNames[] = {
    "invoke",      "propose", "certify_seq", "certify",  "learn",
    "update",      "reset_shadow", "adopt_state", "support_round", "recover",
    "response",    "send",    "deliver",     "timer",    "crash",
    "discard",     "net_delay", "note",
};

ordered_json app_state_to_json(const AppState& s) {
  ordered_json j;
  j["kind"] = s.kind == AppKind::reg ? "register" : "kv";
  j["updates"] = s.updates;
  if (s.kind == AppKind::reg) {
    j["value"] = s.reg_value;
  } else {
    ordered_json m = ordered_json::object();
    for (const auto& [k, v] : s.kv) m[k] = v;
    j["map"] = m;
  }
  return j;
}

AppState app_state_from_json(const ordered_json& j) {
  AppState s;
  s.kind = j.at("kind").get<std::string>() == "register" ? AppKind::reg : AppKind::kv;
  s.updates = j.at("updates").get<uint32_t>();
  if (s.kind == AppKind::reg) {
    s.reg_value = j.at("value").get<int64_t>();
  } else {
    for (const auto& [k, v] : j.at("map").items()) s.kv[k] = v.get<int64_t>();
  }
  return s;
}

ordered_json result_to_json(const Result& r) {
  ordered_json j;
  if (r.absent) j["absent"] = true;
  else j["value"] = r.value;
  return j;
}

Result result_from_json(const ordered_json& j) {
  Result r;
  if (j.contains("absent")) r.absent = j.at("absent").get<bool>();
  if (j.contains("value")) r.value = j.at("value").get<int64_t>();
  return r;
}

}  // namespace

std::string to_string(Tr t) { return kTrNames[static_cast<size_t>(t)]; }

bool parse_tr(std::string_view s, Tr& out) {
  for (size_t i = 0; i < sizeof(kTrNames) / sizeof(kTrNames[0]); ++i) {
    if (s == kTrNames[i]) {
      out = static_cast<Tr>(i);
      return true;
    }
  }
  return false;
}

ordered_json value_to_json(const Value& v) {
  ordered_json j;
  j["client"] = to_string(v.cmd.client);
  j["op_seq"] = v.cmd.op_seq;
  j["op"] = to_string(v.cmd.op.kind);
  switch (v.cmd.op.kind) {
    case Operation::Kind::set: j["arg"] = v.cmd.op.value; break;
    case Operation::Kind::put: j["key"] = v.cmd.op.key; j["arg"] = v.cmd.op.value; break;
    case Operation::Kind::get: j["key"] = v.cmd.op.key; break;
    default: break;
  }
  if (v.passive) {
    j["old"] = hex64(v.update.old_digest);
    j["res"] = result_to_json(v.update.res);
    j["new"] = app_state_to_json(v.update.new_state);
  }
  return j;
}

Value value_from_json(const ordered_json& j) {
  Value v;
  ProcessId client;
  if (!parse_process(j.at("client").get<std::string>(), client))
    throw std::runtime_error("bad client id in value");
  v.cmd.client = client;
  v.cmd.op_seq = j.at("op_seq").get<uint32_t>();
  if (!parse_op_kind(j.at("op").get<std::string>(), v.cmd.op.kind))
    throw std::runtime_error("bad op kind in value");
  if (j.contains("arg")) v.cmd.op.value = j.at("arg").get<int64_t>();
  if (j.contains("key")) v.cmd.op.key = j.at("key").get<std::string>();
  if (j.contains("old")) {
    v.passive = true;
    v.update.old_digest = std::stoull(j.at("old").get<std::string>(), nullptr, 16);
    v.update.res = result_from_json(j.at("res"));
    v.update.new_state = app_state_from_json(j.at("new"));
  }
  return v;
}

ordered_json TraceEvent::to_json() const {
  ordered_json j;
  j["seq"] = seq;
  j["t"] = t;
  j["proc"] = to_string(proc);
  j["tr"] = to_string(tr);
  if (slot != 0) j["slot"] = slot;
  if (round != RoundId{} || tr == Tr::certify || tr == Tr::certify_seq ||
      tr == Tr::support_round || tr == Tr::recover || tr == Tr::adopt_state)
    j["round"] = to_string(round);
  if (peer != ProcessId{}) j["peer"] = to_string(peer);
  if (val) j["val"] = value_to_json(*val);
  if (res) j["res"] = result_to_json(*res);
  if (digest != 0) j["digest"] = hex64(digest);
  if (version != 0) j["version"] = version;
  if (count != 0) j["count"] = count;
  if (!donors.empty()) j["donors"] = donors;
  if (!tag.empty()) j["tag"] = tag;
  if (local) j["local"] = true;
  return j;
}

TraceEvent TraceEvent::from_json(const ordered_json& j) {
  TraceEvent ev;
  ev.seq = j.at("seq").get<uint64_t>();
  ev.t = j.at("t").get<Tick>();
  if (!parse_process(j.at("proc").get<std::string>(), ev.proc))
    throw std::runtime_error("bad proc field");
  if (!parse_tr(j.at("tr").get<std::string>(), ev.tr))
    throw std::runtime_error("unknown transition tag: " + j.at("tr").get<std::string>());
  if (j.contains("slot")) ev.slot = j.at("slot").get<Slot>();
  if (j.contains("round")) {
    std::string r = j.at("round").get<std::string>();
    auto dot = r.find('.');
    if (dot == std::string::npos) throw std::runtime_error("bad round field");
    ev.round.counter = static_cast<uint32_t>(std::stoul(r.substr(0, dot)));
    ev.round.owner = static_cast<uint32_t>(std::stoul(r.substr(dot + 1)));
  }
  if (j.contains("peer")) {
    if (!parse_process(j.at("peer").get<std::string>(), ev.peer))
      throw std::runtime_error("bad peer field");
  }
  if (j.contains("val")) ev.val = value_from_json(j.at("val"));
  if (j.contains("res")) ev.res = result_from_json(j.at("res"));
  if (j.contains("digest")) ev.digest = std::stoull(j.at("digest").get<std::string>(), nullptr, 16);
  if (j.contains("version")) ev.version = j.at("version").get<uint32_t>();
  if (j.contains("count")) ev.count = j.at("count").get<uint32_t>();
  if (j.contains("donors")) ev.donors = j.at("donors").get<std::vector<uint16_t>>();
  if (j.contains("tag")) ev.tag = j.at("tag").get<std::string>();
  if (j.contains("local")) ev.local = j.at("local").get<bool>();
  return ev;
}

std::string render_trace(const std::vector<TraceEvent>& events,
                         const ordered_json& header) {
  std::ostringstream os;
  os << header.dump() << '\n';
  for (const auto& ev : events) os << ev.line() << '\n';
  return os.str();
}

std::vector<TraceEvent> parse_trace(const std::string& text, ordered_json* header_out) {
  std::vector<TraceEvent> out;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) +
                               ": parse error: " + e.what());
    }
    if (lineno == 1 && j.contains("header")) {
      if (header_out) *header_out = j;
      continue;
    }
    try {
      out.push_back(TraceEvent::from_json(j));
    } catch (const std::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace replab
