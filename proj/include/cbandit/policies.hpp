#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbandit/core.hpp"
#include "cbandit/linalg.hpp"

namespace cbandit {

/// A (possibly randomized) arm-selection rule driven by the history of
/// retained trials.
///
/// select and exploit_select only read state; update is the only mutator and
/// is called only with the arm select returned for that context.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string name() const = 0;
  virtual ArmId select(const TrialContext& ctx, Rng& rng) const = 0;
  /// Selection with exploration disabled (ε = 0, α = 0) on current estimates.
  virtual ArmId exploit_select(const TrialContext& ctx, Rng& rng) const = 0;
  virtual void update(const TrialContext& ctx, const ArmId& chosen, double reward) = 0;
};

/// Highest score; exact ties go to the lexicographically lowest ArmId.
ArmId argmax_arm(const std::map<ArmId, double>& scores);

double alpha_from_delta(double delta);

/// ½ ln(1 + xᵀA⁻¹x): entropy reduction of the Gaussian posterior when x is
/// added. Diagnostic only.
double entropy_reduction(const DenseMatrix& a_inv, std::span<const double> x);

// ---------------------------------------------------------------------------
// Context-free estimates

class ContextFreeArmStats {
 public:
  struct Counts {
    double clicks = 0.0;
    std::size_t views = 0;
    bool operator==(const Counts&) const = default;
  };

  void record(const ArmId& arm, double reward);
  /// μ̂ = clicks / views, 0 for an unseen arm.
  double mean(const ArmId& arm) const;
  std::size_t views(const ArmId& arm) const;
  double clicks(const ArmId& arm) const;
  const std::map<ArmId, Counts>& counts() const { return counts_; }

 private:
  std::map<ArmId, Counts> counts_;
};

/// Per-(user key, arm) additive CTR corrections for the warm-start variants.
/// Records are keyed by user segment (1..5) or by a hash of the user feature
/// vector; a feature-hash entry takes precedence over a segment entry.
class WarmStartOffsets {
 public:
  void set_segment(std::size_t segment, const ArmId& arm, double offset);
  void set_feature_hash(const std::string& hash, const ArmId& arm, double offset);
  double offset(std::span<const double> user_features, const ArmId& arm) const;
  bool empty() const { return by_segment_.empty() && by_hash_.empty(); }

  /// One JSON object per line:
  ///   {"segment":3,"arm":"a1","offset":0.02}
  ///   {"feature_hash":"9f0c...","arm":"a1","offset":-0.01}
  static WarmStartOffsets load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::map<std::pair<std::size_t, ArmId>, double> by_segment_;
  std::map<std::pair<std::string, ArmId>, double> by_hash_;
};

/// Stable hex hash (FNV-1a over the canonical text) of a user feature vector.
std::string feature_hash(std::span<const double> features);

double warm_start_score(double base_ctr_estimate, double offset);

/// Greedy pick with probability 1−ε, otherwise a uniform arm. Offsets, when
/// given, are added to μ̂ before ranking.
ArmId eps_greedy_select(const ContextFreeArmStats& stats, const TrialContext& ctx, double epsilon,
                        Rng& rng, const WarmStartOffsets* offsets = nullptr);

/// argmax μ̂ + α/√n; arms with n = 0 score +∞.
ArmId ucb1_select(const ContextFreeArmStats& stats, const TrialContext& ctx, double alpha,
                  const WarmStartOffsets* offsets = nullptr);

/// Per-arm empirical CTR over all logged events.
ContextFreeArmStats omniscient_fit(std::span<const LoggedEvent> events);
ContextFreeArmStats omniscient_fit(EventSource& events);

inline constexpr std::size_t kSegments = 5;

/// Index (1-based) of the dominant cluster membership among the first five
/// entries of a user membership vector.
std::size_t segment_assign(std::span<const double> user_membership);

class RandomPolicy final : public Policy {
 public:
  std::string name() const override { return "random"; }
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override { return select(ctx, rng); }
  void update(const TrialContext&, const ArmId&, double) override {}
};

class EpsilonGreedyPolicy final : public Policy {
 public:
  explicit EpsilonGreedyPolicy(double epsilon, std::shared_ptr<const WarmStartOffsets> warm = nullptr);
  std::string name() const override { return warm_ ? "egreedy_warm" : "egreedy"; }
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override;
  void update(const TrialContext& ctx, const ArmId& chosen, double reward) override;
  const ContextFreeArmStats& stats() const { return stats_; }

 private:
  double epsilon_;
  std::shared_ptr<const WarmStartOffsets> warm_;
  ContextFreeArmStats stats_;
};

class Ucb1Policy final : public Policy {
 public:
  explicit Ucb1Policy(double alpha, std::shared_ptr<const WarmStartOffsets> warm = nullptr);
  std::string name() const override { return warm_ ? "ucb_warm" : "ucb"; }
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override;
  void update(const TrialContext& ctx, const ArmId& chosen, double reward) override;
  const ContextFreeArmStats& stats() const { return stats_; }

 private:
  double alpha_;
  std::shared_ptr<const WarmStartOffsets> warm_;
  ContextFreeArmStats stats_;
};

/// Best context-free CTR in hindsight: fitted on the logged events, always
/// greedy, never learns.
class OmniscientPolicy final : public Policy {
 public:
  explicit OmniscientPolicy(ContextFreeArmStats fitted) : stats_(std::move(fitted)) {}
  std::string name() const override { return "omniscient"; }
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override { return select(ctx, rng); }
  void update(const TrialContext&, const ArmId&, double) override {}

 private:
  ContextFreeArmStats stats_;
};

/// One independent context-free learner per user segment. The segment is
/// read from the first arm's x (the user membership vector).
class SegmentedPolicy final : public Policy {
 public:
  enum class Rule { epsilon_greedy, ucb };
  SegmentedPolicy(Rule rule, double parameter);
  std::string name() const override { return rule_ == Rule::ucb ? "ucb_seg" : "egreedy_seg"; }
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override;
  void update(const TrialContext& ctx, const ArmId& chosen, double reward) override;
  const ContextFreeArmStats& segment_stats(std::size_t segment) const { return stats_.at(segment - 1); }

 private:
  std::size_t segment_of(const TrialContext& ctx) const;

  Rule rule_;
  double parameter_;
  std::vector<ContextFreeArmStats> stats_;
};

// ---------------------------------------------------------------------------
// Linear models

/// Per-arm ridge states; an arm gets its state on its first update and is
/// scored with the identity prior until then.
struct DisjointModelState {
  std::size_t dim;
  std::size_t refresh_period = kDefaultRefreshPeriod;
  std::map<ArmId, RidgeState> arms;
};

/// p = θ̂ᵀx + α√(xᵀA⁻¹x) for every arm in ctx.
std::map<ArmId, double> linucb_disjoint_score(const DisjointModelState& state, const TrialContext& ctx,
                                              double alpha);
void linucb_disjoint_update(DisjointModelState& state, const ArmId& chosen, std::span<const double> x,
                            double r);

/// p = zᵀβ̂ + xᵀθ̂_a + α√s with θ̂_a = A_a⁻¹(b_a − B_a β̂) and
/// s = zᵀA₀⁻¹z − 2zᵀA₀⁻¹B_aᵀA_a⁻¹x + xᵀA_a⁻¹x + xᵀA_a⁻¹B_aA₀⁻¹B_aᵀA_a⁻¹x.
/// s is evaluated as (z − w)ᵀA₀⁻¹(z − w) + xᵀA_a⁻¹x with w = B_aᵀA_a⁻¹x, and
/// not at all when α = 0. Rounding-level negative s (≥ −1e−9) is clamped to
/// 0; below that throws.
std::map<ArmId, double> linucb_hybrid_score(const HybridState& state, const TrialContext& ctx,
                                            double alpha);
void linucb_hybrid_update(HybridState& state, const ArmId& chosen, std::span<const double> z,
                          std::span<const double> x, double r);

inline constexpr double kVarianceClampTolerance = 1e-9;

/// How a linear policy explores: an upper confidence bound of width α, or
/// ε-uniform exploration around the ridge point estimate.
struct Exploration {
  enum class Kind { ucb, epsilon };
  Kind kind = Kind::ucb;
  double value = 0.0;

  static Exploration ucb(double alpha) { return {Kind::ucb, alpha}; }
  static Exploration epsilon(double eps) { return {Kind::epsilon, eps}; }
};

class DisjointLinearPolicy final : public Policy {
 public:
  /// evict_after > 0 drops an arm's state once it has been absent from
  /// that many consecutive updated contexts.
  DisjointLinearPolicy(std::size_t d, Exploration exploration,
                       std::size_t refresh_period = kDefaultRefreshPeriod, std::size_t evict_after = 0);
  std::string name() const override;
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override;
  void update(const TrialContext& ctx, const ArmId& chosen, double reward) override;
  const DisjointModelState& state() const { return state_; }

 private:
  DisjointModelState state_;
  Exploration exploration_;
  std::size_t evict_after_;
  std::size_t updates_ = 0;
  std::map<ArmId, std::size_t> last_seen_;
};

class HybridLinearPolicy final : public Policy {
 public:
  HybridLinearPolicy(std::size_t d, std::size_t k, Exploration exploration,
                     std::size_t refresh_period = kDefaultRefreshPeriod, std::size_t evict_after = 0);
  std::string name() const override;
  ArmId select(const TrialContext& ctx, Rng& rng) const override;
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override;
  void update(const TrialContext& ctx, const ArmId& chosen, double reward) override;
  const HybridState& state() const { return state_; }

 private:
  HybridState state_;
  Exploration exploration_;
  std::size_t evict_after_;
  std::size_t updates_ = 0;
  std::map<ArmId, std::size_t> last_seen_;
};

/// Wraps a policy and ignores every update: a learned policy frozen in place.
class FrozenPolicy final : public Policy {
 public:
  explicit FrozenPolicy(std::shared_ptr<const Policy> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name() + "_frozen"; }
  ArmId select(const TrialContext& ctx, Rng& rng) const override { return inner_->select(ctx, rng); }
  ArmId exploit_select(const TrialContext& ctx, Rng& rng) const override {
    return inner_->exploit_select(ctx, rng);
  }
  void update(const TrialContext&, const ArmId&, double) override {}

 private:
  std::shared_ptr<const Policy> inner_;
};

// ---------------------------------------------------------------------------
// Construction by name

/// Names accepted by make_policy: random, omniscient, egreedy, ucb,
/// egreedy_warm, ucb_warm, egreedy_seg, ucb_seg, egreedy_disjoint,
/// linucb_disjoint, egreedy_hybrid, linucb_hybrid.
struct PolicySpec {
  std::string algorithm;
  double parameter = 0.0;  // ε or α; ignored by random/omniscient
};

struct PolicyResources {
  std::size_t d = 0;  // x dimension
  std::size_t k = 0;  // z dimension (hybrid)
  std::shared_ptr<const ContextFreeArmStats> omniscient;  // hindsight fit for "omniscient"
  std::shared_ptr<const WarmStartOffsets> warm;
  std::size_t refresh_period = kDefaultRefreshPeriod;
  std::size_t evict_after = 0;
};

bool algorithm_has_parameter(const std::string& algorithm);
const std::vector<std::string>& known_algorithms();
std::unique_ptr<Policy> make_policy(const PolicySpec& spec, const PolicyResources& resources);

}  // namespace cbandit
