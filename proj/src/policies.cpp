#include "cbandit/policies.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace cbandit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const ArmId& uniform_arm(const TrialContext& ctx, Rng& rng) {
  if (ctx.arms.empty()) throw Error("empty arm set");
  return ctx.arms[rng.below(ctx.size())].id;
}

void require_arms(const TrialContext& ctx) {
  if (ctx.arms.empty()) throw Error("empty arm set");
}

void check_dim(std::span<const double> v, std::size_t dim, const char* what) {
  if (v.size() != dim) {
    throw Error(std::string("dimension mismatch: ") + what + " has " + std::to_string(v.size()) +
                " entries, expected " + std::to_string(dim));
  }
}

}  // namespace

ArmId argmax_arm(const std::map<ArmId, double>& scores) {
  if (scores.empty()) throw Error("empty arm set");
  // std::map iterates in lexicographic order, so strict > keeps the lowest id.
  auto best = scores.begin();
  for (auto it = std::next(scores.begin()); it != scores.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

double alpha_from_delta(double delta) {
  if (!(delta > 0.0 && delta <= 2.0)) throw Error("delta must lie in (0, 2]");
  return 1.0 + std::sqrt(std::log(2.0 / delta) / 2.0);
}

double entropy_reduction(const DenseMatrix& a_inv, std::span<const double> x) {
  return 0.5 * std::log1p(quadratic_form(a_inv, x));
}

// ---------------------------------------------------------------------------

void ContextFreeArmStats::record(const ArmId& arm, double reward) {
  auto& c = counts_[arm];
  c.clicks += reward;
  ++c.views;
}

double ContextFreeArmStats::mean(const ArmId& arm) const {
  const auto it = counts_.find(arm);
  if (it == counts_.end() || it->second.views == 0) return 0.0;
  return it->second.clicks / static_cast<double>(it->second.views);
}

std::size_t ContextFreeArmStats::views(const ArmId& arm) const {
  const auto it = counts_.find(arm);
  return it == counts_.end() ? 0 : it->second.views;
}

double ContextFreeArmStats::clicks(const ArmId& arm) const {
  const auto it = counts_.find(arm);
  return it == counts_.end() ? 0.0 : it->second.clicks;
}

std::string feature_hash(std::span<const double> features) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (i) mix(",");
    mix(format_real(features[i]));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void WarmStartOffsets::set_segment(std::size_t segment, const ArmId& arm, double offset) {
  if (segment < 1 || segment > kSegments) throw Error("segment must lie in 1..5");
  by_segment_[{segment, arm}] = offset;
}

void WarmStartOffsets::set_feature_hash(const std::string& hash, const ArmId& arm, double offset) {
  by_hash_[{hash, arm}] = offset;
}

double WarmStartOffsets::offset(std::span<const double> user_features, const ArmId& arm) const {
  if (!by_hash_.empty()) {
    const auto it = by_hash_.find({feature_hash(user_features), arm});
    if (it != by_hash_.end()) return it->second;
  }
  if (!by_segment_.empty() && user_features.size() >= kSegments) {
    const auto it = by_segment_.find({segment_assign(user_features), arm});
    if (it != by_segment_.end()) return it->second;
  }
  return 0.0;
}

WarmStartOffsets WarmStartOffsets::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open warm-start offsets: " + path);
  WarmStartOffsets out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const ArmId arm = j.at("arm").get<std::string>();
      const double off = j.at("offset").get<double>();
      if (j.contains("segment")) {
        out.set_segment(j["segment"].get<std::size_t>(), arm, off);
      } else if (j.contains("feature_hash")) {
        out.set_feature_hash(j["feature_hash"].get<std::string>(), arm, off);
      } else {
        throw Error("record needs 'segment' or 'feature_hash'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed offset record: " + e.what());
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void WarmStartOffsets::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write warm-start offsets: " + path);
  for (const auto& [key, off] : by_segment_) {
    out << "{\"segment\":" << key.first << ",\"arm\":" << nlohmann::json(key.second).dump()
        << ",\"offset\":" << format_real(off) << "}\n";
  }
  for (const auto& [key, off] : by_hash_) {
    out << "{\"feature_hash\":" << nlohmann::json(key.first).dump()
        << ",\"arm\":" << nlohmann::json(key.second).dump() << ",\"offset\":" << format_real(off)
        << "}\n";
  }
}

double warm_start_score(double base_ctr_estimate, double offset) { return base_ctr_estimate + offset; }

namespace {

double arm_estimate(const ContextFreeArmStats& stats, const ArmFeatures& arm,
                    const WarmStartOffsets* offsets) {
  const double base = stats.mean(arm.id);
  return offsets ? warm_start_score(base, offsets->offset(arm.x, arm.id)) : base;
}

ArmId greedy_select(const ContextFreeArmStats& stats, const TrialContext& ctx,
                    const WarmStartOffsets* offsets) {
  require_arms(ctx);
  std::map<ArmId, double> scores;
  for (const auto& arm : ctx.arms) scores[arm.id] = arm_estimate(stats, arm, offsets);
  return argmax_arm(scores);
}

}  // namespace

ArmId eps_greedy_select(const ContextFreeArmStats& stats, const TrialContext& ctx, double epsilon,
                        Rng& rng, const WarmStartOffsets* offsets) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error("epsilon must lie in [0, 1]");
  require_arms(ctx);
  if (rng.uniform() < epsilon) return uniform_arm(ctx, rng);
  return greedy_select(stats, ctx, offsets);
}

ArmId ucb1_select(const ContextFreeArmStats& stats, const TrialContext& ctx, double alpha,
                  const WarmStartOffsets* offsets) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be finite and >= 0");
  require_arms(ctx);
  std::map<ArmId, double> scores;
  for (const auto& arm : ctx.arms) {
    const std::size_t n = stats.views(arm.id);
    // α = 0 is pure greedy, unseen arms included.
    double bonus = 0.0;
    if (alpha > 0.0) bonus = n == 0 ? kInf : alpha / std::sqrt(static_cast<double>(n));
    scores[arm.id] = arm_estimate(stats, arm, offsets) + bonus;
  }
  return argmax_arm(scores);
}

ContextFreeArmStats omniscient_fit(std::span<const LoggedEvent> events) {
  if (events.empty()) throw Error("omniscient_fit: no events");
  ContextFreeArmStats stats;
  for (const auto& ev : events) stats.record(ev.chosen, ev.reward);
  return stats;
}

ContextFreeArmStats omniscient_fit(EventSource& events) {
  ContextFreeArmStats stats;
  std::size_t n = 0;
  while (const LoggedEvent* ev = events.next()) {
    stats.record(ev->chosen, ev->reward);
    ++n;
  }
  if (n == 0) throw Error("omniscient_fit: no events");
  return stats;
}

std::size_t segment_assign(std::span<const double> user_membership) {
  if (user_membership.size() < kSegments) throw Error("malformed membership vector: fewer than 5 entries");
  double sum = 0.0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < kSegments; ++i) {
    const double m = user_membership[i];
    if (!(m >= 0.0) || !std::isfinite(m)) throw Error("malformed membership vector: negative entry");
    sum += m;
    if (m > user_membership[best]) best = i;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("malformed membership vector: entries do not sum to 1");
  return best + 1;
}

// ---------------------------------------------------------------------------

ArmId RandomPolicy::select(const TrialContext& ctx, Rng& rng) const { return uniform_arm(ctx, rng); }

EpsilonGreedyPolicy::EpsilonGreedyPolicy(double epsilon, std::shared_ptr<const WarmStartOffsets> warm)
    : epsilon_(epsilon), warm_(std::move(warm)) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error("epsilon must lie in [0, 1]");
}

ArmId EpsilonGreedyPolicy::select(const TrialContext& ctx, Rng& rng) const {
  return eps_greedy_select(stats_, ctx, epsilon_, rng, warm_.get());
}

ArmId EpsilonGreedyPolicy::exploit_select(const TrialContext& ctx, Rng&) const {
  return greedy_select(stats_, ctx, warm_.get());
}

void EpsilonGreedyPolicy::update(const TrialContext&, const ArmId& chosen, double reward) {
  stats_.record(chosen, reward);
}

Ucb1Policy::Ucb1Policy(double alpha, std::shared_ptr<const WarmStartOffsets> warm)
    : alpha_(alpha), warm_(std::move(warm)) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be finite and >= 0");
}

ArmId Ucb1Policy::select(const TrialContext& ctx, Rng&) const {
  return ucb1_select(stats_, ctx, alpha_, warm_.get());
}

ArmId Ucb1Policy::exploit_select(const TrialContext& ctx, Rng&) const {
  return ucb1_select(stats_, ctx, 0.0, warm_.get());
}

void Ucb1Policy::update(const TrialContext&, const ArmId& chosen, double reward) {
  stats_.record(chosen, reward);
}

ArmId OmniscientPolicy::select(const TrialContext& ctx, Rng&) const {
  return greedy_select(stats_, ctx, nullptr);
}

SegmentedPolicy::SegmentedPolicy(Rule rule, double parameter)
    : rule_(rule), parameter_(parameter), stats_(kSegments) {
  if (rule == Rule::epsilon_greedy && !(parameter >= 0.0 && parameter <= 1.0)) {
    throw Error("epsilon must lie in [0, 1]");
  }
  if (rule == Rule::ucb && (!(parameter >= 0.0) || !std::isfinite(parameter))) {
    throw Error("alpha must be finite and >= 0");
  }
}

std::size_t SegmentedPolicy::segment_of(const TrialContext& ctx) const {
  require_arms(ctx);
  return segment_assign(ctx.arms.front().x);
}

ArmId SegmentedPolicy::select(const TrialContext& ctx, Rng& rng) const {
  const auto& stats = stats_[segment_of(ctx) - 1];
  return rule_ == Rule::ucb ? ucb1_select(stats, ctx, parameter_) : eps_greedy_select(stats, ctx, parameter_, rng);
}

ArmId SegmentedPolicy::exploit_select(const TrialContext& ctx, Rng&) const {
  return greedy_select(stats_[segment_of(ctx) - 1], ctx, nullptr);
}

void SegmentedPolicy::update(const TrialContext& ctx, const ArmId& chosen, double reward) {
  stats_[segment_of(ctx) - 1].record(chosen, reward);
}

// ---------------------------------------------------------------------------

std::map<ArmId, double> linucb_disjoint_score(const DisjointModelState& state, const TrialContext& ctx,
                                              double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be finite and >= 0");
  require_arms(ctx);
  const RidgeState fresh(state.dim, state.refresh_period);
  std::map<ArmId, double> scores;
  for (const auto& arm : ctx.arms) {
    check_dim(arm.x, state.dim, "x");
    const auto it = state.arms.find(arm.id);
    const RidgeState& ridge = it == state.arms.end() ? fresh : it->second;
    const FeatureVector theta = ridge.point_estimate();
    const double width = std::sqrt(quadratic_form(ridge.a_inv(), arm.x));
    scores[arm.id] = dot(theta, arm.x) + alpha * width;
  }
  return scores;
}

void linucb_disjoint_update(DisjointModelState& state, const ArmId& chosen, std::span<const double> x,
                            double r) {
  check_dim(x, state.dim, "x");
  auto [it, inserted] = state.arms.try_emplace(chosen, state.dim, state.refresh_period);
  it->second.rank1_update(x, r);
}

std::map<ArmId, double> linucb_hybrid_score(const HybridState& state, const TrialContext& ctx,
                                            double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be finite and >= 0");
  require_arms(ctx);
  const DenseMatrix& a0_inv = state.a0_inv();
  const FeatureVector beta = state.shared_estimate();
  std::map<ArmId, double> scores;
  for (const auto& arm : ctx.arms) {
    check_dim(arm.x, state.d(), "x");
    if (!arm.z) throw Error("hybrid scoring needs shared features z");
    const auto& z = *arm.z;
    check_dim(z, state.k(), "z");
    const auto& blk = state.blocks(arm.id);

    FeatureVector resid = blk.b_vec;
    const FeatureVector b_beta = blk.b_mat.multiply(beta);
    for (std::size_t i = 0; i < resid.size(); ++i) resid[i] -= b_beta[i];
    const FeatureVector theta = blk.a_inv.multiply(resid);

    double s = 0.0;
    if (alpha > 0.0) {
      // With w = B_aᵀA_a⁻¹x and A₀⁻¹ symmetric, the first, second and fourth
      // terms combine into (z − w)ᵀA₀⁻¹(z − w).
      const FeatureVector ainv_x = blk.a_inv.multiply(arm.x);
      FeatureVector diff = blk.b_mat.multiply_transposed(ainv_x);
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = z[i] - diff[i];
      s = quadratic_form(a0_inv, diff) + dot(arm.x, ainv_x);
      if (s < 0.0) {
        if (s < -kVarianceClampTolerance) throw Error("negative confidence variance in hybrid score");
        s = 0.0;
      }
    }
    scores[arm.id] = dot(z, beta) + dot(arm.x, theta) + alpha * std::sqrt(s);
  }
  return scores;
}

void linucb_hybrid_update(HybridState& state, const ArmId& chosen, std::span<const double> z,
                          std::span<const double> x, double r) {
  check_dim(x, state.d(), "x");
  check_dim(z, state.k(), "z");
  state.update(chosen, z, x, r);
}

namespace {

std::string linear_name(const Exploration& e, const char* model) {
  return std::string(e.kind == Exploration::Kind::ucb ? "linucb_" : "egreedy_") + model;
}

void check_exploration(const Exploration& e) {
  if (e.kind == Exploration::Kind::epsilon && !(e.value >= 0.0 && e.value <= 1.0)) {
    throw Error("epsilon must lie in [0, 1]");
  }
  if (e.kind == Exploration::Kind::ucb && (!(e.value >= 0.0) || !std::isfinite(e.value))) {
    throw Error("alpha must be finite and >= 0");
  }
}

template <class Erase>
void note_seen_and_evict(std::map<ArmId, std::size_t>& last_seen, std::size_t now, std::size_t evict_after,
                         const TrialContext& ctx, Erase erase) {
  if (evict_after == 0) return;
  for (const auto& arm : ctx.arms) last_seen[arm.id] = now;
  for (auto it = last_seen.begin(); it != last_seen.end();) {
    if (now - it->second >= evict_after) {
      erase(it->first);
      it = last_seen.erase(it);
    } else {
      ++it;
    }
  }
}

}  // namespace

DisjointLinearPolicy::DisjointLinearPolicy(std::size_t d, Exploration exploration, std::size_t refresh_period,
                                           std::size_t evict_after)
    : state_{d, refresh_period, {}}, exploration_(exploration), evict_after_(evict_after) {
  if (d == 0) throw Error("x dimension must be positive");
  check_exploration(exploration);
}

std::string DisjointLinearPolicy::name() const { return linear_name(exploration_, "disjoint"); }

ArmId DisjointLinearPolicy::select(const TrialContext& ctx, Rng& rng) const {
  if (exploration_.kind == Exploration::Kind::ucb) {
    return argmax_arm(linucb_disjoint_score(state_, ctx, exploration_.value));
  }
  require_arms(ctx);
  if (rng.uniform() < exploration_.value) return uniform_arm(ctx, rng);
  return argmax_arm(linucb_disjoint_score(state_, ctx, 0.0));
}

ArmId DisjointLinearPolicy::exploit_select(const TrialContext& ctx, Rng&) const {
  return argmax_arm(linucb_disjoint_score(state_, ctx, 0.0));
}

void DisjointLinearPolicy::update(const TrialContext& ctx, const ArmId& chosen, double reward) {
  linucb_disjoint_update(state_, chosen, ctx.at(chosen).x, reward);
  note_seen_and_evict(last_seen_, ++updates_, evict_after_, ctx,
                      [this](const ArmId& id) { state_.arms.erase(id); });
}

HybridLinearPolicy::HybridLinearPolicy(std::size_t d, std::size_t k, Exploration exploration,
                                       std::size_t refresh_period, std::size_t evict_after)
    : state_(d, k, refresh_period), exploration_(exploration), evict_after_(evict_after) {
  check_exploration(exploration);
}

std::string HybridLinearPolicy::name() const { return linear_name(exploration_, "hybrid"); }

ArmId HybridLinearPolicy::select(const TrialContext& ctx, Rng& rng) const {
  if (exploration_.kind == Exploration::Kind::ucb) {
    return argmax_arm(linucb_hybrid_score(state_, ctx, exploration_.value));
  }
  require_arms(ctx);
  if (rng.uniform() < exploration_.value) return uniform_arm(ctx, rng);
  return argmax_arm(linucb_hybrid_score(state_, ctx, 0.0));
}

ArmId HybridLinearPolicy::exploit_select(const TrialContext& ctx, Rng&) const {
  return argmax_arm(linucb_hybrid_score(state_, ctx, 0.0));
}

void HybridLinearPolicy::update(const TrialContext& ctx, const ArmId& chosen, double reward) {
  const ArmFeatures& arm = ctx.at(chosen);
  if (!arm.z) throw Error("hybrid update needs shared features z");
  linucb_hybrid_update(state_, chosen, *arm.z, arm.x, reward);
  note_seen_and_evict(last_seen_, ++updates_, evict_after_, ctx,
                      [this](const ArmId& id) { state_.erase(id); });
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& known_algorithms() {
  static const std::vector<std::string> names = {
      "random",      "omniscient",  "egreedy",          "ucb",
      "egreedy_warm", "ucb_warm",   "egreedy_seg",      "ucb_seg",
      "egreedy_disjoint", "linucb_disjoint", "egreedy_hybrid", "linucb_hybrid"};
  return names;
}

bool algorithm_has_parameter(const std::string& algorithm) {
  return algorithm != "random" && algorithm != "omniscient";
}

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, const PolicyResources& res) {
  const std::string& a = spec.algorithm;
  const double p = spec.parameter;
  if (a == "random") return std::make_unique<RandomPolicy>();
  if (a == "omniscient") {
    if (!res.omniscient) throw Error("invalid policy spec: omniscient needs the logged-event fit");
    return std::make_unique<OmniscientPolicy>(*res.omniscient);
  }
  if (a == "egreedy") return std::make_unique<EpsilonGreedyPolicy>(p);
  if (a == "ucb") return std::make_unique<Ucb1Policy>(p);
  if (a == "egreedy_warm" || a == "ucb_warm") {
    if (!res.warm) throw Error("invalid policy spec: " + a + " needs warm-start offsets");
    if (a == "egreedy_warm") return std::make_unique<EpsilonGreedyPolicy>(p, res.warm);
    return std::make_unique<Ucb1Policy>(p, res.warm);
  }
  if (a == "egreedy_seg") return std::make_unique<SegmentedPolicy>(SegmentedPolicy::Rule::epsilon_greedy, p);
  if (a == "ucb_seg") return std::make_unique<SegmentedPolicy>(SegmentedPolicy::Rule::ucb, p);
  if (a == "egreedy_disjoint" || a == "linucb_disjoint") {
    if (res.d == 0) throw Error("invalid policy spec: " + a + " needs the x dimension");
    const auto e = a == "linucb_disjoint" ? Exploration::ucb(p) : Exploration::epsilon(p);
    return std::make_unique<DisjointLinearPolicy>(res.d, e, res.refresh_period, res.evict_after);
  }
  if (a == "egreedy_hybrid" || a == "linucb_hybrid") {
    if (res.d == 0 || res.k == 0) throw Error("invalid policy spec: " + a + " needs x and z dimensions");
    const auto e = a == "linucb_hybrid" ? Exploration::ucb(p) : Exploration::epsilon(p);
    return std::make_unique<HybridLinearPolicy>(res.d, res.k, e, res.refresh_period, res.evict_after);
  }
  throw Error("invalid policy spec: unknown algorithm '" + a + "'");
}

}  // namespace cbandit
