// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "cbandit/evaluator.hpp"
#include "cbandit/harness.hpp"
#include "cbandit/linalg.hpp"
#include "cbandit/policies.hpp"
#include "cbandit/synthworld.hpp"

using namespace cbandit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string strf(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e;
  return s / static_cast<double>(v.size());
}

SyntheticWorld make_world(WorldConfig c) { return SyntheticWorld::generate(c); }

// 1. Replay of a frozen LinUCB policy agrees with direct interaction.
Outcome unbiasedness() {
  WorldConfig c;
  c.d = 6;
  c.n_arms = 5;
  c.theta_seed = 2024;
  const auto world = make_world(c);

  auto trained = std::make_shared<DisjointLinearPolicy>(6, Exploration::ucb(1.0));
  Rng train(1);
  online_evaluate(*trained, world, 2000, train, true);
  FrozenPolicy frozen(trained);

  WorldEventSource stream(world, Rng(2));
  Rng replay_rng(3);
  const auto replay = replay_evaluate(frozen, stream, 10000, replay_rng);
  Rng mc_rng(4);
  const auto direct = online_evaluate(frozen, world, 100000, mc_rng);

  const double se = std::hypot(replay.std_error(), direct.std_error);
  const double gap = std::abs(replay.ctr - direct.mean_payoff);
  return {replay.retained == 10000 && gap <= 3.0 * se,
          strf("replay %.4f (T=%zu) vs direct %.4f, |diff| %.4f <= 3se %.4f", replay.ctr, replay.retained,
               direct.mean_payoff, gap, 3.0 * se)};
}

// 2. Events consumed per retained event average K.
Outcome sample_cost() {
  WorldConfig c;
  c.d = 6;
  c.n_arms = 5;
  c.theta_seed = 7;
  const auto world = make_world(c);
  std::vector<double> ratios;
  for (std::uint64_t s = 0; s < 30; ++s) {
    DisjointLinearPolicy p(6, Exploration::ucb(1.0));
    WorldEventSource stream(world, Rng(1000 + s));
    Rng rng(s);
    const auto r = replay_evaluate(p, stream, 10000, rng);
    ratios.push_back(static_cast<double>(r.consumed) / static_cast<double>(r.retained));
  }
  const double m = mean_of(ratios);
  return {std::abs(m - 5.0) <= 0.15, strf("mean consumed/retained over 30 seeds %.4f (target 5 +- 0.15)", m)};
}

// 3. Incremental ridge statistics match batch solves.
Outcome ridge_equivalence() {
  const std::size_t d = 10, n = 10000;
  Rng rng(11);
  RidgeState periodic(d);
  RidgeState pure(d, 0);  // Sherman–Morrison only
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  FeatureVector x(d);
  for (std::size_t t = 0; t < n; ++t) {
    for (auto& e : x) e = rng.normal();
    const double r = rng.uniform();
    periodic.rank1_update(x, r);
    pure.rank1_update(x, r);
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), d);
    A += xv * xv.transpose();
    b += r * xv;
  }
  const Eigen::MatrixXd inv = A.inverse();
  const Eigen::VectorXd theta = A.ldlt().solve(b);

  double worst_theta = 0.0, worst_inv = 0.0;
  for (const RidgeState* s : {&periodic, &pure}) {
    const auto th = s->point_estimate();
    for (std::size_t i = 0; i < d; ++i) worst_theta = std::max(worst_theta, std::abs(th[i] - theta[i]));
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> ai(
        s->a_inv().data().data(), d, d);
    worst_inv = std::max(worst_inv, (ai - inv).norm() / inv.norm());
  }
  return {worst_theta <= 1e-8 && worst_inv <= 1e-8,
          strf("max |theta diff| %.2e, rel Frobenius A^-1 diff %.2e (bound 1e-8)", worst_theta, worst_inv)};
}

// 4. With z = 0 the hybrid model chooses exactly like the disjoint one.
Outcome hybrid_reduction() {
  WorldConfig c;
  c.d = 6;
  c.n_arms = 8;
  c.theta_seed = 5;
  const auto world = make_world(c);
  const std::size_t k = 4;
  DisjointLinearPolicy disjoint(6, Exploration::ucb(1.0));
  HybridLinearPolicy hybrid(6, k, Exploration::ucb(1.0));
  Rng ctx_rng(1), reward_rng(2), pol(3);
  std::size_t same = 0, n = 10000;
  for (std::size_t t = 0; t < n; ++t) {
    TrialContext ctx = world.sample_context(t, ctx_rng);
    for (auto& a : ctx.arms) a.z = FeatureVector(k, 0.0);
    const ArmId a = disjoint.select(ctx, pol);
    const ArmId h = hybrid.select(ctx, pol);
    if (a == h) ++same;
    const auto& arm = *std::find_if(ctx.arms.begin(), ctx.arms.end(), [&](const auto& e) { return e.id == a; });
    const double r = reward_rng.uniform() < world.true_expected_payoff(a, arm.x) ? 1.0 : 0.0;
    disjoint.update(ctx, a, r);
    hybrid.update(ctx, a, r);  // both learn from the same trajectory
  }
  return {same == n, strf("%zu of %zu trials chose the same arm", same, n)};
}

// 5. One hand-executed hybrid update with k = d = 1.
Outcome hybrid_trace() {
  HybridState s(1, 1);
  const FeatureVector one{1.0};
  s.update("a", one, one, 1.0);
  const auto& blk = s.blocks("a");
  const double beta = s.shared_estimate()[0];
  TrialContext ctx{{{"a", one, one}}};
  const double p = linucb_hybrid_score(s, ctx, 1.0).at("a");
  const double expected_p = 1.0 / 3.0 + 1.0 / 3.0 + std::sqrt(2.0 / 3.0);
  double err = 0.0;
  for (auto [got, want] : {std::pair{s.a0()(0, 0), 1.5}, {s.b0()[0], 0.5}, {blk.a_mat(0, 0), 2.0},
                           {blk.b_mat(0, 0), 1.0}, {blk.b_vec[0], 1.0}, {beta, 1.0 / 3.0},
                           {s.a0_inv()(0, 0), 2.0 / 3.0}, {p, expected_p}}) {
    err = std::max(err, std::abs(got - want));
  }
  return {err <= 1e-12, strf("A0=%.15g b0=%.15g beta=%.15g p=%.15g, max error %.1e", s.a0()(0, 0), s.b0()[0],
                             beta, p, err)};
}

// 6. Cumulative regret: linucb < ucb1 < random, and linucb is sublinear.
Outcome regret_ordering() {
  const std::size_t T = 10000;
  const std::vector<std::size_t> marks{1000, T};
  std::vector<double> lin, ucb, rnd, lin_early;
  for (std::uint64_t s = 0; s < 10; ++s) {
    WorldConfig c;
    c.d = 5;
    c.n_arms = 10;
    c.arm_scale = 0.9;
    c.theta_seed = 300 + s;
    const auto world = make_world(c);
    auto run = [&](std::unique_ptr<Policy> p) {
      Rng rng(s);
      return regret_curve(*p, world, T, marks, rng);
    };
    const auto l = run(std::make_unique<DisjointLinearPolicy>(5, Exploration::ucb(0.5)));
    lin.push_back(l.at(T));
    lin_early.push_back(l.at(1000));
    ucb.push_back(run(std::make_unique<Ucb1Policy>(0.5)).at(T));
    rnd.push_back(run(std::make_unique<RandomPolicy>()).at(T));
  }
  const double L = mean_of(lin), U = mean_of(ucb), R = mean_of(rnd), L1 = mean_of(lin_early);
  const bool order = L < U && U < R;
  const bool sublinear = L / T < 0.5 * L1 / 1000.0;
  return {order && sublinear, strf("mean regret(1e4): linucb %.1f, ucb1 %.1f, random %.1f; linucb rate "
                                   "%.4f at 1e4 vs %.4f at 1e3",
                                   L, U, R, L / T, L1 / 1000.0)};
}

// 7. With 1% of the data used for learning, sharing pays off. Arms rotate
// through a pool of 10, so every arm is seen only briefly. Each model's α is
// tuned on a held-out world before the ten evaluation worlds.
Outcome sparsity_advantage() {
  const std::size_t K = 60, pool = 10, every = 6000, n_events = 300000;
  auto world_for = [&](std::uint64_t seed) {
    WorldConfig c;
    c.mode = WorldMode::hybrid;
    c.d = 4;
    c.article_dim = 4;
    c.n_arms = K;
    c.arm_scale = 0.05;
    c.shared_scale = 0.6;
    c.category_affinity = 0.8;
    c.theta_seed = seed;
    std::vector<ArmId> ids;
    for (std::size_t i = 0; i < K; ++i) ids.push_back(arm_name(i, K));
    c.initial_pool = pool;
    c.schedule = rotating_schedule(ids, pool, every, 0);
    return make_world(c);
  };
  auto deploy_ctr = [&](const SyntheticWorld& world, std::uint64_t seed, bool hybrid, double alpha) {
    std::unique_ptr<Policy> p;
    if (hybrid) p = std::make_unique<HybridLinearPolicy>(4, 16, Exploration::ucb(alpha));
    else p = std::make_unique<DisjointLinearPolicy>(4, Exploration::ucb(alpha));
    ReplayOptions opt;
    opt.update_fraction = 0.01;
    opt.until_exhausted = true;
    WorldEventSource stream(world, Rng(seed + 100), n_events);
    Rng rng(seed);
    return bucketed_replay(*p, stream, 0, 0.5, rng, opt).deployment.ctr;
  };

  const auto tuning_world = world_for(499);
  double best_alpha[2] = {0.0, 0.0};
  for (int h = 0; h < 2; ++h) {
    double best = -1.0;
    for (double alpha : {0.2, 0.5, 1.0}) {
      const double ctr = deploy_ctr(tuning_world, 499, h == 1, alpha);
      if (ctr > best) {
        best = ctr;
        best_alpha[h] = alpha;
      }
    }
  }

  int wins = 0;
  std::string per_seed;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto world = world_for(500 + s);
    const double h = deploy_ctr(world, 500 + s, true, best_alpha[1]);
    const double d = deploy_ctr(world, 500 + s, false, best_alpha[0]);
    if (h >= d) ++wins;
    per_seed += strf(" %.3f/%.3f", h, d);
  }
  return {wins >= 8, strf("tuned alpha hybrid %g, disjoint %g; hybrid >= disjoint deploy ctr in %d of 10 seeds "
                          "(hybrid/disjoint:%s)",
                          best_alpha[1], best_alpha[0], wins, per_seed.c_str())};
}

// 8. Coverage of the confidence width.
Outcome confidence_coverage() {
  const std::size_t d = 5, n_train = 200, probes = 10000;
  const double alpha = alpha_from_delta(0.05);
  WorldConfig c;
  c.d = d;
  c.n_arms = 1;
  c.theta_seed = 8;
  const auto world = make_world(c);
  const ArmId arm = world.arm_ids[0];
  Rng rng(9);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < probes; ++i) {
    RidgeState st(d);
    for (std::size_t t = 0; t < n_train; ++t) {
      const auto ctx = world.sample_context(t, rng);
      const auto& x = ctx.arms[0].x;
      st.rank1_update(x, rng.bernoulli(world.true_expected_payoff(arm, x)) ? 1.0 : 0.0);
    }
    const auto probe = world.sample_context(0, rng).arms[0].x;
    const auto th = st.point_estimate();
    double est = 0.0;
    for (std::size_t j = 0; j < d; ++j) est += th[j] * probe[j];
    const double width = alpha * std::sqrt(quadratic_form(st.a_inv(), probe));
    if (std::abs(est - world.true_expected_payoff(arm, probe)) <= width) ++covered;
  }
  const double freq = static_cast<double>(covered) / probes;
  const double floor = 0.95 - 3.0 * std::sqrt(0.95 * 0.05 / probes);
  return {freq >= floor, strf("alpha %.4f, coverage %.4f over %zu independent fits (floor %.4f)", alpha, freq,
                              probes, floor)};
}

// 9. Learning-bucket ctr over an ε grid peaks in the interior.
Outcome tuning_curve() {
  WorldConfig c;
  c.d = 6;
  c.n_arms = 10;
  c.theta_seed = 900;
  const auto world = make_world(c);
  Rng g(901);
  const auto events = gen_stream(world, 100000, g);
  SweepSpec spec;
  spec.algorithms = {{"egreedy", default_grid("egreedy")}};
  spec.data_fractions = {1.0};
  spec.seeds = {1, 2, 3, 4, 5};
  spec.T = 0;
  const auto rows = run_sweep(spec, [&] { return std::make_unique<SpanEventSource>(events); });
  std::map<double, std::vector<double>> by_eps;
  for (const auto& r : rows)
    if (r.bucket == "learn") by_eps[r.parameter].push_back(r.raw_ctr);
  std::vector<double> curve;
  std::string text;
  for (const auto& [eps, v] : by_eps) {
    curve.push_back(mean_of(v));
    text += strf(" %g:%.4f", eps, curve.back());
  }
  const double interior = *std::max_element(curve.begin() + 1, curve.end() - 1);
  return {interior > curve.front() && interior > curve.back(), "learn ctr by eps:" + text};
}

// 10. Feature pipeline contracts.
Outcome feature_contracts() {
  Rng data(12);
  const auto raw = synthetic_raw_profiles(200, 60, 12, 10, 4000, data);
  Rng r1(13), r2(13);
  const auto a = reduce_features(raw, r1);
  const auto b = reduce_features(raw, r2);
  bool members = true;
  auto check_membership = [&](const FeatureVector& m) {
    if (m.size() != 6 || m[5] != 1.0) members = false;
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      if (m[i] < 0.0) members = false;
      s += m[i];
    }
    if (std::abs(s - 1.0) > 1e-12) members = false;
  };
  for (const auto& [id, m] : a.users) check_membership(m);
  for (const auto& [id, m] : a.articles) check_membership(m);

  double worst = 0.0;
  bool dims = true;
  for (const auto& [uid, u] : a.users) {
    for (const auto& [aid, art] : a.articles) {
      const auto z = interaction_features(u, art);
      dims = dims && z.size() == 36;
      const double want = std::sqrt(dot(u, u)) * std::sqrt(dot(art, art));
      worst = std::max(worst, std::abs(std::sqrt(dot(z, z)) - want) / want);
    }
  }
  const bool deterministic = a.users == b.users && a.articles == b.articles &&
                             a.user_bandwidth == b.user_bandwidth && a.article_bandwidth == b.article_bandwidth;
  return {members && dims && worst <= 1e-12 && deterministic,
          strf("memberships ok: %s, z 36-dim: %s, max rel |‖z‖ - ‖u‖‖a‖| %.1e, deterministic: %s",
               members ? "yes" : "no", dims ? "yes" : "no", worst, deterministic ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "replay unbiasedness", 60, unbiasedness},
      {2, "sample cost K per retained event", 60, sample_cost},
      {3, "incremental ridge equals batch", 5, ridge_equivalence},
      {4, "hybrid with zero z reduces to disjoint", 10, hybrid_reduction},
      {5, "single-trial hybrid trace", 1, hybrid_trace},
      {6, "regret ordering and sublinearity", 120, regret_ordering},
      {7, "sparsity advantage of the hybrid model", 180, sparsity_advantage},
      {8, "confidence width coverage", 30, confidence_coverage},
      {9, "interior maximum of the epsilon tuning curve", 120, tuning_curve},
      {10, "feature pipeline contracts", 10, feature_contracts},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = o.pass && secs < c.budget_s;
    if (!ok) ++failures;
    std::printf("AC%-2d %s  %s: %s [%.2f s, budget %.0f s]\n", c.id, ok ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                secs, c.budget_s);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
