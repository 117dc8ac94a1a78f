#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cbandit/core.hpp"
#include "cbandit/policies.hpp"
#include "cbandit/synthworld.hpp"

namespace cbandit {

struct ReplayResult {
  std::size_t retained = 0;
  std::size_t consumed = 0;
  std::size_t updates = 0;
  double total_payoff = 0.0;
  double total_payoff_sq = 0.0;
  double ctr = 0.0;
  bool exhausted = false;  // stream ran out before T events were retained
  std::vector<double> per_trial_payoffs;

  /// Standard error of ctr from the retained payoffs.
  double std_error() const;
};

struct BucketReport {
  ReplayResult learning;
  ReplayResult deployment;
  double learning_fraction = 1.0;
};

struct ReplayOptions {
  double update_fraction = 1.0;  // subsample gate on learning updates
  bool rejection = false;
  std::optional<double> min_propensity;  // p_min, required with rejection
  bool record_trials = false;
  bool until_exhausted = false;  // ignore T, read the whole stream
};

/// Accept with probability min(1, p_min / propensity).
bool rejection_accept(const LoggedEvent& event, double min_propensity, Rng& rng);

bool subsample_gate(double fraction, Rng& rng);

/// Replay estimator: step through the stream, keep an event only when the
/// policy picks the logged arm, and update the policy on kept events.
/// Skipped events leave the policy untouched.
ReplayResult replay_evaluate(Policy& policy, EventSource& stream, std::size_t T, Rng& rng,
                             const ReplayOptions& options = {}, History* history = nullptr);
ReplayResult replay_evaluate(Policy& policy, std::span<const LoggedEvent> stream, std::size_t T, Rng& rng,
                             const ReplayOptions& options = {}, History* history = nullptr);

/// Routes each event to the learning bucket (probability learning_fraction)
/// or the deployment bucket. Learning events replay as usual; deployment
/// events are matched against exploit_select and never update. Stops once
/// the learning bucket has retained T events.
BucketReport bucketed_replay(Policy& policy, EventSource& stream, std::size_t T, double learning_fraction,
                             Rng& rng, const ReplayOptions& options = {});
BucketReport bucketed_replay(Policy& policy, std::span<const LoggedEvent> stream, std::size_t T,
                             double learning_fraction, Rng& rng, const ReplayOptions& options = {});

struct RegretCurve {
  std::vector<std::pair<std::size_t, double>> points;  // (t, cumulative regret)
  double at(std::size_t t) const;
};

/// Runs the policy directly in the world for T trials and accumulates
/// μ*_t − μ_chosen,t from true means. The policy learns from Bernoulli
/// rewards drawn with one shared uniform per trial, so different policies
/// run with the same seed see common random numbers.
RegretCurve regret_curve(Policy& policy, const SyntheticWorld& world, std::size_t T,
                         std::span<const std::size_t> checkpoints, Rng& rng);

struct OnlineResult {
  std::size_t trials = 0;
  double mean_payoff = 0.0;    // sampled rewards
  double std_error = 0.0;
  double mean_expected = 0.0;  // true means of the chosen arms
};

/// Direct Monte Carlo payoff of a policy interacting with the world.
OnlineResult online_evaluate(Policy& policy, const SyntheticWorld& world, std::size_t n, Rng& rng,
                             bool learn = false);

}  // namespace cbandit
