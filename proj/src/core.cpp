#include "cbandit/core.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

namespace cbandit {

using nlohmann::json;

const ArmFeatures* TrialContext::find(std::string_view id) const {
  for (const auto& arm : arms) {
    if (arm.id == id) return &arm;
  }
  return nullptr;
}

const ArmFeatures& TrialContext::at(std::string_view id) const {
  const ArmFeatures* arm = find(id);
  if (arm == nullptr) throw Error("arm not in context: " + std::string(id));
  return *arm;
}

bool all_finite(std::span<const double> v) {
  for (double e : v) {
    if (!std::isfinite(e)) return false;
  }
  return true;
}

const TrialContext& validate_trial(const TrialContext& ctx) {
  if (ctx.arms.empty()) throw Error("empty arm set");
  const std::size_t d = ctx.arms.front().x.size();
  const bool has_z = ctx.arms.front().z.has_value();
  const std::size_t k = has_z ? ctx.arms.front().z->size() : 0;
  if (d == 0) throw Error("empty x feature vector");
  if (has_z && k == 0) throw Error("empty z feature vector");

  std::set<std::string_view> seen;
  for (const auto& arm : ctx.arms) {
    if (!seen.insert(arm.id).second) throw Error("duplicate arm id: " + arm.id);
    if (arm.x.size() != d) throw Error("inconsistent x dimension");
    if (arm.z.has_value() != has_z) throw Error("partial shared-feature coverage");
    if (has_z && arm.z->size() != k) throw Error("inconsistent z dimension");
    if (!all_finite(arm.x) || (has_z && !all_finite(*arm.z))) {
      throw Error("non-finite feature value");
    }
  }
  return ctx;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

FeatureVector parse_vector(const json& j, const char* what) {
  if (!j.is_array()) throw Error(std::string("malformed record: ") + what + " must be an array");
  FeatureVector v;
  v.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_number()) throw Error(std::string("malformed record: non-numeric entry in ") + what);
    v.push_back(e.get<double>());
  }
  return v;
}

double parse_number(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw Error(std::string("malformed record: missing or non-numeric '") + key + "'");
  }
  return it->get<double>();
}

void append_vector(std::string& out, std::span<const double> v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_real(v[i]);
  }
  out += ']';
}

}  // namespace

LoggedEvent parse_event_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw Error("malformed record: not an object");

  LoggedEvent ev;
  const auto arms = j.find("arms");
  if (arms == j.end() || !arms->is_array()) throw Error("malformed record: missing 'arms'");
  for (const auto& a : *arms) {
    if (!a.is_object() || !a.contains("id") || !a["id"].is_string() || !a.contains("x")) {
      throw Error("malformed record: arm needs 'id' and 'x'");
    }
    ArmFeatures arm{a["id"].get<std::string>(), parse_vector(a["x"], "x"), std::nullopt};
    if (a.contains("z")) arm.z = parse_vector(a["z"], "z");
    ev.context.arms.push_back(std::move(arm));
  }
  validate_trial(ev.context);

  const auto chosen = j.find("chosen");
  if (chosen == j.end() || !chosen->is_string()) throw Error("malformed record: missing 'chosen'");
  ev.chosen = chosen->get<std::string>();
  if (ev.context.find(ev.chosen) == nullptr) throw Error("chosen arm not in context");

  ev.reward = parse_number(j, "reward");
  if (!(ev.reward >= 0.0 && ev.reward <= 1.0)) throw Error("reward outside [0,1]");

  if (j.contains("propensity")) {
    ev.propensity = parse_number(j, "propensity");
    if (!(ev.propensity > 0.0 && ev.propensity <= 1.0)) throw Error("propensity outside (0,1]");
  } else {
    ev.propensity = 1.0 / static_cast<double>(ev.context.size());
  }

  if (j.contains("hidden")) {
    const json& h = j["hidden"];
    if (!h.is_object()) throw Error("malformed record: 'hidden' must be an object");
    std::map<ArmId, double> hidden;
    for (const auto& [id, val] : h.items()) {
      if (!val.is_number()) throw Error("malformed record: non-numeric hidden reward");
      if (ev.context.find(id) == nullptr) throw Error("hidden reward for arm not in context: " + id);
      hidden[id] = val.get<double>();
    }
    if (hidden.size() != ev.context.size()) throw Error("hidden rewards do not cover every arm");
    ev.hidden = std::move(hidden);
  }
  return ev;
}

std::string serialize_event(const LoggedEvent& event) {
  std::string out = "{\"arms\":[";
  for (std::size_t i = 0; i < event.context.arms.size(); ++i) {
    const auto& arm = event.context.arms[i];
    if (i) out += ',';
    out += "{\"id\":" + json(arm.id).dump() + ",\"x\":";
    append_vector(out, arm.x);
    if (arm.z) {
      out += ",\"z\":";
      append_vector(out, *arm.z);
    }
    out += '}';
  }
  out += "],\"chosen\":" + json(event.chosen).dump();
  out += ",\"reward\":" + format_real(event.reward);
  out += ",\"propensity\":" + format_real(event.propensity);
  if (event.hidden) {
    // Arm order of the context, not map order.
    out += ",\"hidden\":{";
    bool first = true;
    for (const auto& arm : event.context.arms) {
      const auto it = event.hidden->find(arm.id);
      if (it == event.hidden->end()) continue;
      if (!first) out += ',';
      first = false;
      out += json(arm.id).dump() + ":" + format_real(it->second);
    }
    out += '}';
  }
  out += '}';
  return out;
}

std::vector<LoggedEvent> read_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open event log: " + path);
  std::vector<LoggedEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      events.push_back(parse_event_line(line));
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return events;
}

struct FileEventSource::Impl {
  std::string path;
  std::ifstream in;
  std::size_t lineno = 0;
  LoggedEvent current;
};

FileEventSource::FileEventSource(const std::string& path) : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  impl_->in.open(path);
  if (!impl_->in) throw Error("cannot open event log: " + path);
}

FileEventSource::~FileEventSource() = default;

const LoggedEvent* FileEventSource::next() {
  std::string line;
  while (std::getline(impl_->in, line)) {
    ++impl_->lineno;
    if (line.empty()) continue;
    try {
      impl_->current = parse_event_line(line);
    } catch (const Error& e) {
      throw Error(impl_->path + ":" + std::to_string(impl_->lineno) + ": " + e.what());
    }
    return &impl_->current;
  }
  return nullptr;
}

void write_events(const std::string& path, std::span<const LoggedEvent> events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write event log: " + path);
  for (const auto& ev : events) out << serialize_event(ev) << '\n';
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  engine_.seed(splitmix64(s));
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw Error("Rng::below(0)");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

double Rng::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_normal_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

Rng Rng::fork(std::uint64_t tag) const {
  std::uint64_t s = seed_ ^ (0xd1b54a32d192ed03ULL * (tag + 1));
  return Rng(splitmix64(s));
}

}  // namespace cbandit
