#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbandit/core.hpp"
#include "cbandit/linalg.hpp"
#include "json.hpp"

namespace cbandit {

enum class WorldMode { disjoint, hybrid };

/// How user/arm feature vectors are drawn each trial.
///  - simplex: one user vector per trial, shared by every arm:
///    (w₁..w_{d−1}, 1) with w uniform on the probability simplex, which
///    mimics cluster-membership features.
///  - gaussian: an independent vector per arm: (g₁..g_{d−1}, 1) with
///    g ~ N(0, I/(d−1)).
///  - fixed_pool: a user drawn uniformly from a pool of simplex users fixed
///    at world construction.
enum class ContextSampler { simplex, gaussian, fixed_pool };

struct PoolChange {
  std::size_t trial = 0;  // takes effect from this trial index on
  std::vector<ArmId> added;
  std::vector<ArmId> removed;
};

struct WorldConfig {
  WorldMode mode = WorldMode::disjoint;
  std::size_t d = 6;
  std::size_t n_arms = 10;
  std::size_t article_dim = 6;  // hybrid only; k = d · article_dim
  ContextSampler sampler = ContextSampler::simplex;
  std::size_t fixed_pool_size = 100;
  double arm_scale = 0.5;     // per-arm coefficient range
  double shared_scale = 0.5;  // hybrid interaction coefficient range
  double base_ctr = 0.05;     // constant-term range
  double article_focus = 0.8; // hybrid: weight of an article's dominant category
  double category_affinity = 0.0;  // hybrid: pull of user group i towards article category i, in [0,1]
  std::uint64_t theta_seed = 1;
  std::size_t initial_pool = 0;  // 0: every arm active from the start
  std::vector<PoolChange> schedule;

  /// Keys: mode, d, K, article_dim, sampler, fixed_pool_size, arm_scale,
  /// shared_scale, base_ctr, article_focus, category_affinity, theta_seed, initial_pool,
  /// schedule ([{trial, add:[ids], remove:[ids]}]) and rotation
  /// ({pool_size, every, horizon}, expanded into a schedule).
  static WorldConfig from_json(const nlohmann::json& j);
};

std::string arm_name(std::size_t index, std::size_t n_arms);

/// Pool of size pool_size that retires its oldest arm and admits the next
/// unused one every `every` trials, until the arms run out or `horizon`.
std::vector<PoolChange> rotating_schedule(std::span<const ArmId> arms, std::size_t pool_size,
                                          std::size_t every, std::size_t horizon);

/// Ground truth for synthetic experiments: E[r | x, z] = zᵀβ* + xᵀθ*_a,
/// clamped to [0, 1].
struct SyntheticWorld {
  WorldMode mode = WorldMode::disjoint;
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<ArmId> arm_ids;                       // full arm universe
  std::map<ArmId, FeatureVector> theta_star;        // d each
  FeatureVector beta_star;                          // k (hybrid)
  std::map<ArmId, FeatureVector> article_features;  // hybrid: z = x ⊗ article
  ContextSampler sampler = ContextSampler::simplex;
  std::vector<FeatureVector> user_pool;             // fixed_pool sampler
  std::size_t initial_pool = 0;
  std::vector<PoolChange> schedule;
  std::vector<std::pair<std::size_t, std::vector<ArmId>>> pool_epochs;  // (first trial, pool)

  static SyntheticWorld generate(const WorldConfig& config);

  /// Fills pool_epochs from initial_pool and schedule so that active_arms
  /// is a lookup. generate() calls it; call again after editing the schedule.
  void index_pool();

  std::vector<ArmId> active_arms(std::size_t trial) const;
  TrialContext sample_context(std::size_t trial, Rng& rng) const;
  /// Context over the given arms, ignoring the pool schedule.
  TrialContext sample_context(std::span<const ArmId> arms, Rng& rng) const;
  double true_expected_payoff(const ArmId& arm, std::span<const double> x,
                              std::span<const double> z = {}) const;
  /// Unclamped linear mean, for checking how often clamping engages.
  double linear_payoff(const ArmId& arm, std::span<const double> x, std::span<const double> z = {}) const;

  nlohmann::json to_json() const;
};

/// One uniformly logged event at the given trial index: hidden Bernoulli
/// rewards for every arm, a uniform logged arm, propensity 1/K.
LoggedEvent draw_event(const SyntheticWorld& world, std::size_t trial, Rng& rng);

std::vector<LoggedEvent> gen_stream(const SyntheticWorld& world, std::size_t n_events, Rng& rng);

/// Lazily generated uniform-logging stream; limit 0 means unbounded.
class WorldEventSource final : public EventSource {
 public:
  WorldEventSource(const SyntheticWorld& world, Rng rng, std::size_t limit = 0)
      : world_(world), rng_(std::move(rng)), limit_(limit) {}
  const LoggedEvent* next() override;
  std::size_t produced() const { return trial_; }

 private:
  const SyntheticWorld& world_;
  Rng rng_;
  std::size_t limit_;
  std::size_t trial_ = 0;
  LoggedEvent current_;
};

// ---------------------------------------------------------------------------
// Feature construction: support filtering, bilinear logistic projection,
// k-means user groups, kernel memberships and outer-product interactions.

/// Column indices whose support (fraction of rows with a nonzero entry) is at
/// least min_support.
std::vector<std::size_t> select_by_support(std::span<const FeatureVector> rows, double min_support = 0.1);

/// Keeps the selected columns, scales to unit length (all-zero rows stay
/// zero) and appends the constant feature 1.
FeatureVector normalize_profile(std::span<const double> raw, std::span<const std::size_t> kept);

struct RawProfiles {
  std::vector<FeatureVector> users;     // normalized, constant-augmented
  std::vector<FeatureVector> articles;  // same
};

struct ClickExample {
  FeatureVector user;
  FeatureVector article;
  int label = 0;  // 0 or 1
};

struct BilinearFitOptions {
  double l2 = 1e-4;
  double gradient_tolerance = 1e-5;
  std::size_t max_iterations = 10000;
};

struct BilinearFit {
  DenseMatrix weights;  // dim(user) × dim(article)
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

/// Logistic regression of click ~ σ(φ_uᵀ W φ_a) by gradient descent on the
/// mean log-loss plus (l2/2)‖W‖².
BilinearFit fit_bilinear_lr(std::span<const ClickExample> clicks, const BilinearFitOptions& options = {});

/// ψ_u = φ_uᵀ W
FeatureVector project_users(const DenseMatrix& weights, std::span<const double> user);

struct KMeansOptions {
  std::size_t n_clusters = 5;
  std::optional<double> bandwidth;  // default: median pairwise centroid distance / √2
  double shift_tolerance = 1e-8;
  std::size_t max_iterations = 300;
};

struct KMeansMembership {
  std::vector<FeatureVector> centroids;
  double bandwidth = 0.0;
  std::size_t iterations = 0;
  std::vector<FeatureVector> memberships;  // n_clusters entries + constant 1
};

/// Normalized Gaussian-kernel memberships exp(−‖ψ−c_j‖²/2σ²) with the
/// constant 1 appended.
FeatureVector gaussian_membership(std::span<const double> point, std::span<const FeatureVector> centroids,
                                  double bandwidth);

/// k-means++ seeding, Lloyd iterations, then kernel memberships per point.
KMeansMembership kmeans_membership(std::span<const FeatureVector> points, Rng& rng,
                                   const KMeansOptions& options = {});

/// Row-major vec(u ⊗ v).
FeatureVector outer_features(std::span<const double> user, std::span<const double> article);

/// 36 user–article interaction features from two six-vectors.
FeatureVector interaction_features(std::span<const double> user6, std::span<const double> article6);

struct ReducedFeatures {
  std::map<std::string, FeatureVector> users;     // six-vectors
  std::map<std::string, FeatureVector> articles;  // six-vectors
  DenseMatrix weights;
  double user_bandwidth = 0.0;
  double article_bandwidth = 0.0;
};

/// Input for the end-to-end reduction: raw binary profiles keyed by id plus
/// labelled user/article pairs.
struct RawProfileSet {
  std::vector<std::pair<std::string, FeatureVector>> users;
  std::vector<std::pair<std::string, FeatureVector>> articles;
  struct Click {
    std::string user;
    std::string article;
    int label = 0;
  };
  std::vector<Click> clicks;
  double min_support = 0.1;

  /// {"users":[{"id":..,"raw":[..]}], "articles":[..],
  ///  "clicks":[{"user":..,"article":..,"label":0|1}], "min_support":0.1}
  static RawProfileSet from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

ReducedFeatures reduce_features(const RawProfileSet& raw, Rng& rng, const BilinearFitOptions& lr = {},
                                const KMeansOptions& km = {});

nlohmann::json to_json(const ReducedFeatures& reduced);

/// Synthetic raw profiles with a planted bilinear click model, for demos and
/// tests of the reduction pipeline.
RawProfileSet synthetic_raw_profiles(std::size_t n_users, std::size_t n_articles, std::size_t user_bits,
                                     std::size_t article_bits, std::size_t n_clicks, Rng& rng);

}  // namespace cbandit
