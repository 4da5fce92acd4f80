#include "replab/config.hpp"

#include <algorithm>
#include <sstream>

#include "replab/rng.hpp"

namespace replab {

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::paxos: return "paxos";
    case Protocol::vsr: return "vsr";
    case Protocol::zab: return "zab";
  }
  return "?";
}

bool parse_protocol(std::string_view s, Protocol& out) {
  if (s == "paxos") out = Protocol::paxos;
  else if (s == "vsr") out = Protocol::vsr;
  else if (s == "zab") out = Protocol::zab;
  else return false;
  return true;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

double parse_prob(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size() || out < 0.0 || out > 1.0) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError(key + ": expected a probability in [0,1], got '" + v + "'");
  }
}

// "3" or "1..5"
void parse_delay_range(const std::string& key, const std::string& v, Tick& lo, Tick& hi) {
  auto dots = v.find("..");
  if (dots == std::string::npos) {
    lo = hi = parse_u64(key, v);
  } else {
    lo = parse_u64(key, v.substr(0, dots));
    hi = parse_u64(key, v.substr(dots + 2));
  }
  if (lo > hi) throw ConfigError(key + ": empty delay range '" + v + "'");
}

ProcessId parse_proc_or_throw(const std::string& key, const std::string& v) {
  ProcessId p;
  if (!parse_process(v, p)) throw ConfigError(key + ": unknown process '" + v + "'");
  return p;
}

// cert0->cert1 delay=50..60 loss=0.5   (or <-> for both directions)
LinkSpec parse_link(const std::string& key, const std::string& v, const LinkModel& base) {
  LinkSpec spec;
  spec.model = base;
  std::istringstream is(v);
  std::string endpoints;
  is >> endpoints;
  auto arrow = endpoints.find("<->");
  size_t alen = 3;
  if (arrow != std::string::npos) {
    spec.both_ways = true;
  } else {
    arrow = endpoints.find("->");
    alen = 2;
    if (arrow == std::string::npos)
      throw ConfigError(key + ": expected 'a->b' or 'a<->b' in '" + v + "'");
  }
  spec.from = parse_proc_or_throw(key, endpoints.substr(0, arrow));
  spec.to = parse_proc_or_throw(key, endpoints.substr(arrow + alen));
  std::string opt;
  while (is >> opt) {
    auto eq = opt.find('=');
    if (eq == std::string::npos) throw ConfigError(key + ": bad link option '" + opt + "'");
    std::string name = opt.substr(0, eq), val = opt.substr(eq + 1);
    if (name == "delay") parse_delay_range(key, val, spec.model.delay_min, spec.model.delay_max);
    else if (name == "loss") spec.model.loss = parse_prob(key, val);
    else throw ConfigError(key + ": unknown link option '" + name + "'");
  }
  return spec;
}

// cert0@120  or  cert0@certify:slot=2:count=1
CrashSpec parse_crash(const std::string& key, const std::string& v) {
  CrashSpec spec;
  auto at = v.find('@');
  if (at == std::string::npos) throw ConfigError(key + ": expected 'proc@time' in '" + v + "'");
  spec.victim = parse_proc_or_throw(key, v.substr(0, at));
  std::string rest = v.substr(at + 1);
  if (!rest.empty() && rest[0] >= '0' && rest[0] <= '9') {
    spec.at = parse_u64(key, rest);
    return spec;
  }
  CrashTrigger trig;
  trig.victim = spec.victim;
  std::istringstream is(rest);
  std::string part;
  bool first = true;
  while (std::getline(is, part, ':')) {
    if (first) {
      if (!parse_tr(part, trig.tr)) throw ConfigError(key + ": unknown transition '" + part + "'");
      first = false;
      continue;
    }
    auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError(key + ": bad trigger option '" + part + "'");
    std::string name = part.substr(0, eq), val = part.substr(eq + 1);
    if (name == "slot") trig.slot = static_cast<Slot>(parse_u64(key, val));
    else if (name == "count") trig.count = static_cast<uint32_t>(parse_u64(key, val));
    else throw ConfigError(key + ": unknown trigger option '" + name + "'");
  }
  if (first) throw ConfigError(key + ": empty crash trigger in '" + v + "'");
  spec.trigger = trig;
  return spec;
}

std::vector<Operation::Kind> parse_mix(const std::string& key, const std::string& v) {
  std::vector<Operation::Kind> out;
  std::istringstream is(v);
  std::string part;
  while (std::getline(is, part, ',')) {
    Operation::Kind k;
    if (!parse_op_kind(trim(part), k)) throw ConfigError(key + ": unknown op kind '" + part + "'");
    out.push_back(k);
  }
  if (out.empty()) throw ConfigError(key + ": empty op mix");
  return out;
}

// inc,double,set(7),read,put(k=1),get(k)
std::vector<Operation> parse_script(const std::string& key, const std::string& v) {
  std::vector<Operation> out;
  std::istringstream is(v);
  std::string part;
  while (std::getline(is, part, ',')) {
    part = trim(part);
    Operation op;
    auto paren = part.find('(');
    std::string kind = paren == std::string::npos ? part : part.substr(0, paren);
    if (!parse_op_kind(kind, op.kind)) throw ConfigError(key + ": unknown op '" + part + "'");
    if (paren != std::string::npos) {
      auto close = part.rfind(')');
      if (close == std::string::npos || close < paren)
        throw ConfigError(key + ": unbalanced parens in '" + part + "'");
      std::string arg = part.substr(paren + 1, close - paren - 1);
      if (op.kind == Operation::Kind::set) op.value = parse_i64(key, arg);
      else if (op.kind == Operation::Kind::get) op.key = arg;
      else if (op.kind == Operation::Kind::put) {
        auto eq = arg.find('=');
        if (eq == std::string::npos) throw ConfigError(key + ": put expects k=v in '" + part + "'");
        op.key = arg.substr(0, eq);
        op.value = parse_i64(key, arg.substr(eq + 1));
      } else {
        throw ConfigError(key + ": op '" + kind + "' takes no argument");
      }
    }
    out.push_back(op);
  }
  return out;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (n < 1 || n > 16) throw ConfigError("n: must be between 1 and 16");
  if (n < 2 * f + 1)
    throw ConfigError("n: need n >= 2f+1 certifiers to tolerate f crashes (n=" +
                      std::to_string(n) + ", f=" + std::to_string(f) + ")");
  if (replicas < 1 || replicas > n)
    throw ConfigError("replicas: must be between 1 and n (replicas are co-located with the "
                      "first m certifiers)");
  if (protocol == Protocol::vsr && replicas != n)
    throw ConfigError("replicas: vsr co-locates a replica with every certifier; set replicas=n");
  if (protocol != Protocol::paxos && po == PoMode::off)
    throw ConfigError("po: " + to_string(protocol) + " certifies in prefix order by construction; "
                      "po=off applies to paxos only");
  if (protocol == Protocol::vsr && dissemination == Dissemination::broadcast)
    throw ConfigError("dissemination: vsr responds from the sequencer and supports collect only");
  if (clients < 1) throw ConfigError("clients: need at least one client");
  if (delay.delay_min < 1) throw ConfigError("delay: minimum network delay is 1 tick");
  if (respect_threshold) {
    uint32_t cert_crashes = 0;
    for (const auto& c : crashes)
      if (c.victim.kind == ProcKind::certifier) ++cert_crashes;
    if (cert_crashes > f)
      throw ConfigError("crash: schedule kills " + std::to_string(cert_crashes) +
                        " certifiers but the failure threshold is f=" + std::to_string(f));
  }
  for (const auto& c : crashes) {
    if (c.victim.kind == ProcKind::certifier && c.victim.index >= n)
      throw ConfigError("crash: no such certifier cert" + std::to_string(c.victim.index));
    if (c.victim.kind == ProcKind::client && c.victim.index >= clients)
      throw ConfigError("crash: no such client cli" + std::to_string(c.victim.index));
  }
  for (const auto& [cli, ops] : scripts)
    if (cli >= clients)
      throw ConfigError("script: no such client cli" + std::to_string(cli));
}

nlohmann::ordered_json ScenarioConfig::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = to_string(protocol);
  j["n"] = n;
  j["f"] = f;
  j["replicas"] = replicas;
  j["seed"] = seed;
  j["clients"] = clients;
  j["ops_per_client"] = ops_per_client;
  j["app"] = app == AppKind::reg ? "register" : "kv";
  j["register_init"] = register_init;
  j["delay"] = std::to_string(delay.delay_min) + ".." + std::to_string(delay.delay_max);
  char loss_buf[32];
  snprintf(loss_buf, sizeof loss_buf, "%.6g", delay.loss);
  j["loss"] = loss_buf;
  j["max_defer"] = max_defer;
  j["dissemination"] = dissemination == Dissemination::collect ? "collect" : "broadcast";
  j["po"] = po == PoMode::automatic ? "auto" : (po == PoMode::on ? "on" : "off");
  j["po_effective"] = po_enabled();
  j["progress_timeout"] = eff_progress_timeout();
  j["retry_timeout"] = eff_retry_timeout();
  j["sync_gap_limit"] = sync_gap_limit;
  j["omega_lag"] = omega_lag;
  j["backoff"] = backoff == Backoff::immediate ? "immediate" : "backoff";
  j["max_ticks"] = max_ticks;
  j["target_decided"] = target_decided;
  return j;
}

ScenarioConfig parse_scenario(const std::string& text) {
  ScenarioConfig cfg;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  bool replicas_set = false;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));

    if (key == "protocol") {
      if (!parse_protocol(val, cfg.protocol))
        throw ConfigError("protocol: unknown protocol '" + val + "'");
    } else if (key == "n") cfg.n = static_cast<uint32_t>(parse_u64(key, val));
    else if (key == "f") cfg.f = static_cast<uint32_t>(parse_u64(key, val));
    else if (key == "replicas") { cfg.replicas = static_cast<uint32_t>(parse_u64(key, val)); replicas_set = true; }
    else if (key == "seed") cfg.seed = parse_u64(key, val);
    else if (key == "clients") cfg.clients = static_cast<uint32_t>(parse_u64(key, val));
    else if (key == "ops_per_client") cfg.ops_per_client = static_cast<uint32_t>(parse_u64(key, val));
    else if (key == "app") {
      if (val == "register") cfg.app = AppKind::reg;
      else if (val == "kv") cfg.app = AppKind::kv;
      else throw ConfigError("app: expected 'register' or 'kv'");
    }
    else if (key == "register_init") cfg.register_init = parse_i64(key, val);
    else if (key == "op_mix") cfg.op_mix = parse_mix(key, val);
    else if (key.rfind("script.", 0) == 0) {
      ProcessId p = parse_proc_or_throw(key, key.substr(7));
      if (p.kind != ProcKind::client) throw ConfigError(key + ": scripts attach to clients");
      cfg.scripts[p.index] = parse_script(key, val);
    }
    else if (key == "delay") parse_delay_range(key, val, cfg.delay.delay_min, cfg.delay.delay_max);
    else if (key == "loss") cfg.delay.loss = parse_prob(key, val);
    else if (key == "max_defer") cfg.max_defer = static_cast<uint32_t>(parse_u64(key, val));
    else if (key == "link") cfg.links.push_back(parse_link(key, val, cfg.delay));
    else if (key == "crash") cfg.crashes.push_back(parse_crash(key, val));
    else if (key == "respect_threshold") cfg.respect_threshold = val == "true" || val == "1";
    else if (key == "dissemination") {
      if (val == "collect") cfg.dissemination = Dissemination::collect;
      else if (val == "broadcast") cfg.dissemination = Dissemination::broadcast;
      else throw ConfigError("dissemination: expected 'collect' or 'broadcast'");
    }
    else if (key == "po") {
      if (val == "auto") cfg.po = ScenarioConfig::PoMode::automatic;
      else if (val == "on") cfg.po = ScenarioConfig::PoMode::on;
      else if (val == "off") cfg.po = ScenarioConfig::PoMode::off;
      else throw ConfigError("po: expected auto/on/off");
    }
    else if (key == "progress_timeout") cfg.progress_timeout = parse_u64(key, val);
    else if (key == "retry_timeout") cfg.retry_timeout = parse_u64(key, val);
    else if (key == "sync_gap_limit") cfg.sync_gap_limit = static_cast<uint32_t>(parse_u64(key, val));
    else if (key == "omega_lag") cfg.omega_lag = parse_u64(key, val);
    else if (key == "backoff") {
      if (val == "immediate") cfg.backoff = ScenarioConfig::Backoff::immediate;
      else if (val == "backoff") cfg.backoff = ScenarioConfig::Backoff::backoff;
      else throw ConfigError("backoff: expected 'immediate' or 'backoff'");
    }
    else if (key == "max_ticks") cfg.max_ticks = parse_u64(key, val);
    else if (key == "target_decided") cfg.target_decided = static_cast<uint32_t>(parse_u64(key, val));
    else throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  if (cfg.protocol == Protocol::vsr && !replicas_set) cfg.replicas = cfg.n;
  cfg.validate();
  return cfg;
}

ScenarioConfig apply_overrides(ScenarioConfig base, const std::vector<std::string>& kvs) {
  // serialize the scalar fields, append the overrides, re-parse
  std::ostringstream merged;
  merged << "protocol = " << to_string(base.protocol) << '\n'
         << "n = " << base.n << '\n'
         << "f = " << base.f << '\n'
         << "replicas = " << base.replicas << '\n'
         << "seed = " << base.seed << '\n'
         << "clients = " << base.clients << '\n'
         << "ops_per_client = " << base.ops_per_client << '\n'
         << "app = " << (base.app == AppKind::reg ? "register" : "kv") << '\n'
         << "register_init = " << base.register_init << '\n'
         << "delay = " << base.delay.delay_min << ".." << base.delay.delay_max << '\n'
         << "max_defer = " << base.max_defer << '\n'
         << "sync_gap_limit = " << base.sync_gap_limit << '\n'
         << "omega_lag = " << base.omega_lag << '\n'
         << "max_ticks = " << base.max_ticks << '\n'
         << "target_decided = " << base.target_decided << '\n';
  char loss_buf[32];
  snprintf(loss_buf, sizeof loss_buf, "%.6g", base.delay.loss);
  merged << "loss = " << loss_buf << '\n';
  if (base.progress_timeout) merged << "progress_timeout = " << base.progress_timeout << '\n';
  if (base.retry_timeout) merged << "retry_timeout = " << base.retry_timeout << '\n';
  merged << "dissemination = "
         << (base.dissemination == Dissemination::collect ? "collect" : "broadcast") << '\n';
  merged << "po = "
         << (base.po == ScenarioConfig::PoMode::automatic
                 ? "auto"
                 : (base.po == ScenarioConfig::PoMode::on ? "on" : "off"))
         << '\n';
  for (const auto& kv : kvs) merged << kv << '\n';
  ScenarioConfig out = parse_scenario(merged.str());
  out.links = base.links;
  out.crashes = base.crashes;
  out.scripts = base.scripts;
  out.op_mix = base.op_mix;
  // overrides may add links/crashes/scripts of their own
  for (const auto& kv : kvs) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    std::string key = trim(kv.substr(0, eq));
    std::string val = trim(kv.substr(eq + 1));
    if (key == "link") out.links.push_back(parse_link(key, val, out.delay));
    else if (key == "crash") out.crashes.push_back(parse_crash(key, val));
    else if (key == "op_mix") out.op_mix = parse_mix(key, val);
    else if (key.rfind("script.", 0) == 0) {
      ProcessId p = parse_proc_or_throw(key, key.substr(7));
      out.scripts[p.index] = parse_script(key, val);
    }
  }
  out.validate();
  return out;
}

std::vector<std::vector<Operation>> build_workload(const ScenarioConfig& cfg) {
  std::vector<std::vector<Operation>> out(cfg.clients);
  for (uint16_t c = 0; c < cfg.clients; ++c) {
    auto it = cfg.scripts.find(c);
    if (it != cfg.scripts.end()) {
      out[c] = it->second;
      continue;
    }
    Rng rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * (c + 1)));
    for (uint32_t i = 0; i < cfg.ops_per_client; ++i) {
      Operation op;
      op.kind = cfg.op_mix[rng.below(cfg.op_mix.size())];
      switch (op.kind) {
        case Operation::Kind::set: op.value = int64_t(rng.below(100)); break;
        case Operation::Kind::put:
          op.key = std::string(1, char('a' + rng.below(4)));
          op.value = int64_t(rng.below(100));
          break;
        case Operation::Kind::get: op.key = std::string(1, char('a' + rng.below(4))); break;
        default: break;
      }
      out[c].push_back(op);
    }
  }
  return out;
}

}  // namespace replab
