#include "cbandit/evaluator.hpp"

#include <algorithm>
#include <cmath>

namespace cbandit {

namespace {

constexpr std::uint64_t kGateStream = 101;
constexpr std::uint64_t kRejectionStream = 102;
constexpr std::uint64_t kRoutingStream = 103;
constexpr std::uint64_t kDeploymentStream = 104;

void check_options(const ReplayOptions& opt) {
  if (!(opt.update_fraction >= 0.0 && opt.update_fraction <= 1.0)) {
    throw Error("update fraction must lie in [0,1]");
  }
  if (opt.rejection) {
    if (!opt.min_propensity || !(*opt.min_propensity > 0.0 && *opt.min_propensity <= 1.0)) {
      throw Error("rejection mode needs a minimum propensity in (0,1]");
    }
  }
}

void check_uniform(const LoggedEvent& ev) {
  const double expected = 1.0 / static_cast<double>(ev.context.size());
  if (std::abs(ev.propensity - expected) > 1e-9) {
    throw Error("non-uniform logging propensity; enable rejection mode");
  }
}

// Filters for rejection mode or checks uniform logging. True if the event
// enters replay.
bool admit(const LoggedEvent& ev, const ReplayOptions& opt, Rng& rng) {
  if (opt.rejection) return rejection_accept(ev, *opt.min_propensity, rng);
  check_uniform(ev);
  return true;
}

void retain(ReplayResult& res, const LoggedEvent& ev, const ReplayOptions& opt) {
  ++res.retained;
  res.total_payoff += ev.reward;
  res.total_payoff_sq += ev.reward * ev.reward;
  if (opt.record_trials) res.per_trial_payoffs.push_back(ev.reward);
}

void finish(ReplayResult& res) {
  res.ctr = res.retained > 0 ? res.total_payoff / static_cast<double>(res.retained) : 0.0;
}

}  // namespace

double ReplayResult::std_error() const {
  if (retained < 2) return 0.0;
  const double n = static_cast<double>(retained);
  const double var = std::max(0.0, total_payoff_sq / n - ctr * ctr);
  return std::sqrt(var / (n - 1.0));
}

bool rejection_accept(const LoggedEvent& event, double min_propensity, Rng& rng) {
  if (!(event.propensity > 0.0)) throw Error("propensity must be positive");
  const double p = min_propensity / event.propensity;
  if (p >= 1.0) return true;
  return rng.uniform() < p;
}

bool subsample_gate(double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("update fraction must lie in [0,1]");
  return rng.uniform() < fraction;
}

ReplayResult replay_evaluate(Policy& policy, EventSource& stream, std::size_t T, Rng& rng,
                             const ReplayOptions& opt, History* history) {
  if (T == 0 && !opt.until_exhausted) throw Error("T must be positive");
  check_options(opt);
  Rng gate = rng.fork(kGateStream);
  Rng reject = rng.fork(kRejectionStream);

  ReplayResult res;
  while (opt.until_exhausted || res.retained < T) {
    const LoggedEvent* ev = stream.next();
    if (ev == nullptr) {
      res.exhausted = !opt.until_exhausted;
      break;
    }
    ++res.consumed;
    if (!admit(*ev, opt, reject)) continue;
    if (policy.select(ev->context, rng) != ev->chosen) continue;
    retain(res, *ev, opt);
    if (history) history->append({ev->context, ev->chosen, ev->reward});
    if (subsample_gate(opt.update_fraction, gate)) {
      policy.update(ev->context, ev->chosen, ev->reward);
      ++res.updates;
    }
  }
  finish(res);
  return res;
}

ReplayResult replay_evaluate(Policy& policy, std::span<const LoggedEvent> stream, std::size_t T, Rng& rng,
                             const ReplayOptions& opt, History* history) {
  SpanEventSource src(stream);
  return replay_evaluate(policy, src, T, rng, opt, history);
}

BucketReport bucketed_replay(Policy& policy, EventSource& stream, std::size_t T, double learning_fraction,
                             Rng& rng, const ReplayOptions& opt) {
  if (!(learning_fraction > 0.0 && learning_fraction <= 1.0)) {
    throw Error("learning fraction must lie in (0,1]");
  }
  if (T == 0 && !opt.until_exhausted) throw Error("T must be positive");
  check_options(opt);
  Rng gate = rng.fork(kGateStream);
  Rng reject = rng.fork(kRejectionStream);
  Rng route = rng.fork(kRoutingStream);
  Rng deploy = rng.fork(kDeploymentStream);

  BucketReport rep;
  rep.learning_fraction = learning_fraction;
  ReplayResult& learn = rep.learning;
  ReplayResult& dep = rep.deployment;
  while (opt.until_exhausted || learn.retained < T) {
    const LoggedEvent* ev = stream.next();
    if (ev == nullptr) {
      learn.exhausted = dep.exhausted = !opt.until_exhausted;
      break;
    }
    const bool to_learning = learning_fraction >= 1.0 || route.uniform() < learning_fraction;
    ReplayResult& bucket = to_learning ? learn : dep;
    ++bucket.consumed;
    if (!admit(*ev, opt, reject)) continue;
    if (to_learning) {
      if (policy.select(ev->context, rng) != ev->chosen) continue;
      retain(learn, *ev, opt);
      if (subsample_gate(opt.update_fraction, gate)) {
        policy.update(ev->context, ev->chosen, ev->reward);
        ++learn.updates;
      }
    } else {
      if (policy.exploit_select(ev->context, deploy) != ev->chosen) continue;
      retain(dep, *ev, opt);
    }
  }
  finish(learn);
  finish(dep);
  return rep;
}

BucketReport bucketed_replay(Policy& policy, std::span<const LoggedEvent> stream, std::size_t T,
                             double learning_fraction, Rng& rng, const ReplayOptions& opt) {
  SpanEventSource src(stream);
  return bucketed_replay(policy, src, T, learning_fraction, rng, opt);
}

double RegretCurve::at(std::size_t t) const {
  for (const auto& [when, value] : points) {
    if (when == t) return value;
  }
  throw Error("no regret checkpoint at t = " + std::to_string(t));
}

namespace {

struct TrialOutcome {
  double best_mean;
  double chosen_mean;
  double reward;
};

TrialOutcome play_trial(Policy& policy, const SyntheticWorld& world, std::size_t t, Rng& ctx_rng,
                        Rng& reward_rng, Rng& policy_rng, bool learn) {
  const TrialContext ctx = world.sample_context(t, ctx_rng);
  double best = -INFINITY;
  std::map<ArmId, double> means;
  for (const auto& arm : ctx.arms) {
    const double mu = world.true_expected_payoff(
        arm.id, arm.x, arm.z ? std::span<const double>(*arm.z) : std::span<const double>());
    means[arm.id] = mu;
    best = std::max(best, mu);
  }
  const ArmId chosen = policy.select(ctx, policy_rng);
  const auto it = means.find(chosen);
  if (it == means.end()) throw Error("policy chose an arm outside the context: " + chosen);
  const double reward = reward_rng.uniform() < it->second ? 1.0 : 0.0;
  if (learn) policy.update(ctx, chosen, reward);
  return {best, it->second, reward};
}

}  // namespace

RegretCurve regret_curve(Policy& policy, const SyntheticWorld& world, std::size_t T,
                         std::span<const std::size_t> checkpoints, Rng& rng) {
  std::vector<std::size_t> marks(checkpoints.begin(), checkpoints.end());
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  if (!marks.empty() && (marks.front() == 0 || marks.back() > T)) {
    throw Error("regret checkpoints must lie in 1..T");
  }
  Rng ctx_rng = rng.fork(1), reward_rng = rng.fork(2), policy_rng = rng.fork(3);
  RegretCurve curve;
  double regret = 0.0;
  auto next = marks.begin();
  for (std::size_t t = 0; t < T; ++t) {
    const auto o = play_trial(policy, world, t, ctx_rng, reward_rng, policy_rng, true);
    regret += o.best_mean - o.chosen_mean;
    if (next != marks.end() && *next == t + 1) {
      curve.points.emplace_back(t + 1, regret);
      ++next;
    }
  }
  return curve;
}

OnlineResult online_evaluate(Policy& policy, const SyntheticWorld& world, std::size_t n, Rng& rng, bool learn) {
  if (n == 0) throw Error("online_evaluate: n must be positive");
  Rng ctx_rng = rng.fork(1), reward_rng = rng.fork(2), policy_rng = rng.fork(3);
  double sum = 0.0, sum_sq = 0.0, expected = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto o = play_trial(policy, world, t, ctx_rng, reward_rng, policy_rng, learn);
    sum += o.reward;
    sum_sq += o.reward * o.reward;
    expected += o.chosen_mean;
  }
  const double nn = static_cast<double>(n);
  OnlineResult r;
  r.trials = n;
  r.mean_payoff = sum / nn;
  r.mean_expected = expected / nn;
  r.std_error = n > 1 ? std::sqrt(std::max(0.0, sum_sq / nn - r.mean_payoff * r.mean_payoff) / (nn - 1.0)) : 0.0;
  return r;
}

}  // namespace cbandit
