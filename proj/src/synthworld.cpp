#include "cbandit/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cbandit {

using nlohmann::json;

namespace {

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Uniform point on the (n−1)-simplex via normalized exponentials.
FeatureVector simplex_point(std::size_t n, Rng& rng) {
  FeatureVector w(n);
  double total = 0.0;
  for (auto& e : w) {
    e = -std::log1p(-rng.uniform());
    total += e;
  }
  for (auto& e : w) e /= total;
  return w;
}

FeatureVector simplex_user(std::size_t d, Rng& rng) {
  FeatureVector x = d > 1 ? simplex_point(d - 1, rng) : FeatureVector{};
  x.push_back(1.0);
  return x;
}

FeatureVector gaussian_user(std::size_t d, Rng& rng) {
  FeatureVector x;
  x.reserve(d);
  const double scale = d > 1 ? 1.0 / std::sqrt(static_cast<double>(d - 1)) : 0.0;
  for (std::size_t i = 0; i + 1 < d; ++i) x.push_back(scale * rng.normal());
  x.push_back(1.0);
  return x;
}

WorldMode parse_mode(const std::string& s) {
  if (s == "disjoint") return WorldMode::disjoint;
  if (s == "hybrid") return WorldMode::hybrid;
  throw Error("unknown world mode: " + s);
}

ContextSampler parse_sampler(const std::string& s) {
  if (s == "simplex") return ContextSampler::simplex;
  if (s == "gaussian") return ContextSampler::gaussian;
  if (s == "fixed_pool") return ContextSampler::fixed_pool;
  throw Error("unknown context sampler: " + s);
}

const char* sampler_name(ContextSampler s) {
  switch (s) {
    case ContextSampler::simplex: return "simplex";
    case ContextSampler::gaussian: return "gaussian";
    case ContextSampler::fixed_pool: return "fixed_pool";
  }
  return "?";
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

WorldConfig WorldConfig::from_json(const json& j) {
  WorldConfig c;
  if (!j.is_object()) throw Error("world config must be an object");
  try {
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    c.d = j.value("d", c.d);
    c.n_arms = j.value("K", c.n_arms);
    c.article_dim = j.value("article_dim", c.article_dim);
    if (j.contains("sampler")) c.sampler = parse_sampler(j["sampler"].get<std::string>());
    c.fixed_pool_size = j.value("fixed_pool_size", c.fixed_pool_size);
    c.arm_scale = j.value("arm_scale", c.arm_scale);
    c.shared_scale = j.value("shared_scale", c.shared_scale);
    c.base_ctr = j.value("base_ctr", c.base_ctr);
    c.article_focus = j.value("article_focus", c.article_focus);
    c.category_affinity = j.value("category_affinity", c.category_affinity);
    c.theta_seed = j.value("theta_seed", c.theta_seed);
    c.initial_pool = j.value("initial_pool", c.initial_pool);
    if (j.contains("schedule")) {
      for (const auto& e : j["schedule"]) {
        PoolChange pc;
        pc.trial = e.at("trial").get<std::size_t>();
        if (e.contains("add")) pc.added = e["add"].get<std::vector<std::string>>();
        if (e.contains("remove")) pc.removed = e["remove"].get<std::vector<std::string>>();
        c.schedule.push_back(std::move(pc));
      }
    }
    if (j.contains("rotation")) {
      if (!c.schedule.empty()) throw Error("world config: give either 'schedule' or 'rotation'");
      const auto& r = j["rotation"];
      const std::size_t pool = r.at("pool_size").get<std::size_t>();
      std::vector<ArmId> ids;
      for (std::size_t i = 0; i < c.n_arms; ++i) ids.push_back(arm_name(i, c.n_arms));
      c.initial_pool = pool;
      c.schedule = rotating_schedule(ids, pool, r.at("every").get<std::size_t>(),
                                     r.value("horizon", std::size_t{0}));
    }
    if (j.contains("k") && c.mode == WorldMode::hybrid &&
        j["k"].get<std::size_t>() != c.d * c.article_dim) {
      throw Error("world config: k must equal d * article_dim");
    }
  } catch (const json::exception& e) {
    throw Error(std::string("world config: ") + e.what());
  }
  return c;
}

std::string arm_name(std::size_t index, std::size_t n_arms) {
  std::size_t width = 2;
  for (std::size_t v = n_arms > 0 ? n_arms - 1 : 0; v >= 100; v /= 10) ++width;
  std::string digits = std::to_string(index);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "a" + digits;
}

std::vector<PoolChange> rotating_schedule(std::span<const ArmId> arms, std::size_t pool_size,
                                          std::size_t every, std::size_t horizon) {
  if (pool_size == 0 || pool_size > arms.size()) throw Error("rotation: pool_size must lie in 1..K");
  if (every == 0) throw Error("rotation: 'every' must be positive");
  std::vector<PoolChange> out;
  std::size_t oldest = 0;
  for (std::size_t next = pool_size; next < arms.size(); ++next, ++oldest) {
    const std::size_t trial = every * (next - pool_size + 1);
    if (horizon > 0 && trial >= horizon) break;
    out.push_back({trial, {arms[next]}, {arms[oldest]}});
  }
  return out;
}

SyntheticWorld SyntheticWorld::generate(const WorldConfig& cfg) {
  if (cfg.d == 0) throw Error("world config: d must be positive");
  if (cfg.n_arms == 0) throw Error("world config: K must be positive");
  if (cfg.mode == WorldMode::hybrid) {
    if (cfg.sampler == ContextSampler::gaussian) throw Error("hybrid worlds need membership-like users");
    if (cfg.article_dim < 2) throw Error("world config: article_dim must be at least 2");
    if (!(cfg.category_affinity >= 0.0 && cfg.category_affinity <= 1.0)) {
      throw Error("world config: category_affinity must lie in [0,1]");
    }
  }

  Rng rng(cfg.theta_seed);
  SyntheticWorld w;
  w.mode = cfg.mode;
  w.d = cfg.d;
  w.k = cfg.mode == WorldMode::hybrid ? cfg.d * cfg.article_dim : 0;
  w.sampler = cfg.sampler;
  for (std::size_t i = 0; i < cfg.n_arms; ++i) w.arm_ids.push_back(arm_name(i, cfg.n_arms));

  const std::size_t last = cfg.d - 1;
  for (const auto& id : w.arm_ids) {
    FeatureVector theta(cfg.d, 0.0);
    if (cfg.sampler == ContextSampler::gaussian) {
      for (std::size_t i = 0; i < last; ++i) theta[i] = uniform_in(rng, -cfg.arm_scale, cfg.arm_scale);
      theta[last] = uniform_in(rng, 0.5 - cfg.base_ctr, 0.5 + cfg.base_ctr);
    } else {
      for (std::size_t i = 0; i < last; ++i) theta[i] = uniform_in(rng, 0.0, cfg.arm_scale);
      theta[last] = cfg.mode == WorldMode::hybrid ? 0.0 : uniform_in(rng, 0.0, cfg.base_ctr);
    }
    w.theta_star[id] = std::move(theta);
  }

  if (cfg.mode == WorldMode::hybrid) {
    const std::size_t ad = cfg.article_dim;
    for (const auto& id : w.arm_ids) {
      const std::size_t focus = rng.below(ad - 1);
      FeatureVector m = simplex_point(ad - 1, rng);
      for (auto& e : m) e *= 1.0 - cfg.article_focus;
      m[focus] += cfg.article_focus;
      m.push_back(1.0);
      w.article_features[id] = std::move(m);
    }
    // β* laid out as a d × article_dim matrix, row-major like outer_features.
    w.beta_star.assign(w.k, 0.0);
    for (std::size_t i = 0; i < cfg.d; ++i) {
      for (std::size_t j = 0; j < ad; ++j) {
        const bool user_const = i == last;
        const bool art_const = j == ad - 1;
        double v;
        if (user_const && art_const) v = uniform_in(rng, 0.0, cfg.base_ctr);
        else if (user_const || art_const) v = uniform_in(rng, 0.0, 0.1 * cfg.shared_scale);
        else {
          v = (1.0 - cfg.category_affinity) * uniform_in(rng, 0.0, cfg.shared_scale);
          if (i == j) v += cfg.category_affinity * cfg.shared_scale;
        }
        w.beta_star[i * ad + j] = v;
      }
    }
  }

  if (cfg.sampler == ContextSampler::fixed_pool) {
    if (cfg.fixed_pool_size == 0) throw Error("world config: fixed_pool_size must be positive");
    for (std::size_t i = 0; i < cfg.fixed_pool_size; ++i) w.user_pool.push_back(simplex_user(cfg.d, rng));
  }

  std::set<ArmId> known(w.arm_ids.begin(), w.arm_ids.end());
  for (const auto& pc : cfg.schedule) {
    for (const auto& id : pc.added)
      if (!known.count(id)) throw Error("schedule references unknown arm " + id);
    for (const auto& id : pc.removed)
      if (!known.count(id)) throw Error("schedule references unknown arm " + id);
  }
  if (cfg.initial_pool > cfg.n_arms) throw Error("world config: initial_pool exceeds K");
  w.initial_pool = cfg.initial_pool;
  w.schedule = cfg.schedule;
  w.index_pool();

  // Keep the linear model honest: clamping must stay rare, over every arm
  // the schedule will ever show.
  Rng probe(0x5eed);
  std::size_t clamped = 0, total = 0;
  for (std::size_t t = 0; t < 2000; ++t) {
    const TrialContext ctx = w.sample_context(std::span<const ArmId>(w.arm_ids), probe);
    for (const auto& arm : ctx.arms) {
      const double mu = w.linear_payoff(arm.id, arm.x, arm.z ? std::span<const double>(*arm.z)
                                                              : std::span<const double>());
      clamped += (mu < 0.0 || mu > 1.0) ? 1 : 0;
      ++total;
    }
  }
  if (static_cast<double>(clamped) > 0.01 * static_cast<double>(total)) {
    throw Error("world config clamps more than 1% of payoff means; reduce the coefficient scales");
  }
  return w;
}

namespace {

std::vector<ArmId> pool_at(const SyntheticWorld& w, std::size_t trial) {
  const auto& arm_ids = w.arm_ids;
  const std::size_t initial_pool = w.initial_pool;
  std::vector<ArmId> pool;
  const std::size_t n0 = initial_pool == 0 ? arm_ids.size() : initial_pool;
  pool.assign(arm_ids.begin(), arm_ids.begin() + static_cast<std::ptrdiff_t>(n0));
  for (const auto& pc : w.schedule) {
    if (pc.trial > trial) continue;
    for (const auto& id : pc.removed) std::erase(pool, id);
    for (const auto& id : pc.added)
      if (std::find(pool.begin(), pool.end(), id) == pool.end()) pool.push_back(id);
  }
  return pool;
}

}  // namespace

void SyntheticWorld::index_pool() {
  std::set<std::size_t> starts{0};
  for (const auto& pc : schedule) starts.insert(pc.trial);
  pool_epochs.clear();
  for (std::size_t t : starts) pool_epochs.emplace_back(t, pool_at(*this, t));
}

std::vector<ArmId> SyntheticWorld::active_arms(std::size_t trial) const {
  if (pool_epochs.empty()) return pool_at(*this, trial);
  auto it = std::upper_bound(pool_epochs.begin(), pool_epochs.end(), trial,
                             [](std::size_t t, const auto& e) { return t < e.first; });
  return std::prev(it)->second;
}

TrialContext SyntheticWorld::sample_context(std::size_t trial, Rng& rng) const {
  std::vector<ArmId> computed;
  const std::vector<ArmId>* pool = &computed;
  if (pool_epochs.empty()) {
    computed = pool_at(*this, trial);
  } else {
    auto it = std::upper_bound(pool_epochs.begin(), pool_epochs.end(), trial,
                               [](std::size_t t, const auto& e) { return t < e.first; });
    pool = &std::prev(it)->second;
  }
  if (pool->empty()) throw Error("arm pool is empty at trial " + std::to_string(trial));
  return sample_context(std::span<const ArmId>(*pool), rng);
}

namespace {

// Fills ctx in place, reusing the storage of a previous context.
void fill_context(const SyntheticWorld& w, std::span<const ArmId> active, Rng& rng, TrialContext& ctx) {
  if (active.empty()) throw Error("arm pool is empty");
  FeatureVector user;
  if (w.sampler == ContextSampler::simplex) user = simplex_user(w.d, rng);
  else if (w.sampler == ContextSampler::fixed_pool) user = w.user_pool[rng.below(w.user_pool.size())];

  ctx.arms.resize(active.size());
  for (std::size_t i = 0; i < active.size(); ++i) {
    ArmFeatures& arm = ctx.arms[i];
    arm.id = active[i];
    if (w.sampler == ContextSampler::gaussian) arm.x = gaussian_user(w.d, rng);
    else arm.x.assign(user.begin(), user.end());
    if (w.mode == WorldMode::hybrid) {
      const FeatureVector& art = w.article_features.at(arm.id);
      if (!arm.z) arm.z.emplace();
      arm.z->resize(arm.x.size() * art.size());
      std::size_t q = 0;
      for (double u : arm.x)
        for (double v : art) (*arm.z)[q++] = u * v;
    } else {
      arm.z.reset();
    }
  }
}

void fill_event(const SyntheticWorld& w, std::size_t trial, Rng& rng, LoggedEvent& ev) {
  std::vector<ArmId> computed;
  const std::vector<ArmId>* pool = &computed;
  if (w.pool_epochs.empty()) {
    computed = w.active_arms(trial);
  } else {
    auto it = std::upper_bound(w.pool_epochs.begin(), w.pool_epochs.end(), trial,
                               [](std::size_t t, const auto& e) { return t < e.first; });
    pool = &std::prev(it)->second;
  }
  if (pool->empty()) throw Error("arm pool is empty at trial " + std::to_string(trial));
  fill_context(w, *pool, rng, ev.context);

  const std::size_t n = ev.context.size();
  std::vector<double> draws(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& arm = ev.context.arms[i];
    const double mu =
        w.true_expected_payoff(arm.id, arm.x, arm.z ? std::span<const double>(*arm.z) : std::span<const double>());
    draws[i] = rng.bernoulli(mu) ? 1.0 : 0.0;
  }
  const std::size_t chosen = rng.below(n);
  ev.chosen = ev.context.arms[chosen].id;
  ev.reward = draws[chosen];
  ev.propensity = 1.0 / static_cast<double>(n);

  bool reuse = ev.hidden && ev.hidden->size() == n;
  for (std::size_t i = 0; reuse && i < n; ++i) {
    auto it = ev.hidden->find(ev.context.arms[i].id);
    if (it == ev.hidden->end()) reuse = false;
    else it->second = draws[i];
  }
  if (!reuse) {
    ev.hidden.emplace();
    for (std::size_t i = 0; i < n; ++i) (*ev.hidden)[ev.context.arms[i].id] = draws[i];
  }
}

}  // namespace

TrialContext SyntheticWorld::sample_context(std::span<const ArmId> active, Rng& rng) const {
  TrialContext ctx;
  fill_context(*this, active, rng, ctx);
  return ctx;
}

double SyntheticWorld::linear_payoff(const ArmId& arm, std::span<const double> x,
                                     std::span<const double> z) const {
  const auto it = theta_star.find(arm);
  if (it == theta_star.end()) throw Error("unknown arm: " + arm);
  if (x.size() != d) throw Error("dimension mismatch: x");
  double mu = dot(x, it->second);
  if (mode == WorldMode::hybrid) {
    if (z.size() != k) throw Error("dimension mismatch: z");
    mu += dot(z, beta_star);
  }
  return mu;
}

double SyntheticWorld::true_expected_payoff(const ArmId& arm, std::span<const double> x,
                                            std::span<const double> z) const {
  return std::clamp(linear_payoff(arm, x, z), 0.0, 1.0);
}

json SyntheticWorld::to_json() const {
  json j;
  j["mode"] = mode == WorldMode::hybrid ? "hybrid" : "disjoint";
  j["d"] = d;
  j["k"] = k;
  j["sampler"] = sampler_name(sampler);
  j["arms"] = arm_ids;
  j["theta_star"] = theta_star;
  if (mode == WorldMode::hybrid) {
    j["beta_star"] = beta_star;
    j["article_features"] = article_features;
  }
  j["initial_pool"] = initial_pool;
  json sched = json::array();
  for (const auto& pc : schedule) sched.push_back({{"trial", pc.trial}, {"add", pc.added}, {"remove", pc.removed}});
  j["schedule"] = sched;
  return j;
}

LoggedEvent draw_event(const SyntheticWorld& world, std::size_t trial, Rng& rng) {
  LoggedEvent ev;
  fill_event(world, trial, rng, ev);
  return ev;
}

std::vector<LoggedEvent> gen_stream(const SyntheticWorld& world, std::size_t n_events, Rng& rng) {
  if (n_events == 0) throw Error("gen_stream: n_events must be positive");
  std::vector<LoggedEvent> out;
  out.reserve(n_events);
  for (std::size_t t = 0; t < n_events; ++t) out.push_back(draw_event(world, t, rng));
  return out;
}

const LoggedEvent* WorldEventSource::next() {
  if (limit_ > 0 && trial_ >= limit_) return nullptr;
  fill_event(world_, trial_++, rng_, current_);
  return &current_;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> select_by_support(std::span<const FeatureVector> rows, double min_support) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  std::vector<std::size_t> nonzero(cols, 0);
  for (const auto& r : rows) {
    if (r.size() != cols) throw Error("raw profiles have inconsistent lengths");
    for (std::size_t c = 0; c < cols; ++c) nonzero[c] += r[c] != 0.0 ? 1 : 0;
  }
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < cols; ++c) {
    if (static_cast<double>(nonzero[c]) >= min_support * static_cast<double>(rows.size())) kept.push_back(c);
  }
  return kept;
}

FeatureVector normalize_profile(std::span<const double> raw, std::span<const std::size_t> kept) {
  FeatureVector v;
  v.reserve(kept.size() + 1);
  double norm2 = 0.0;
  for (std::size_t c : kept) {
    if (c >= raw.size()) throw Error("support column out of range");
    v.push_back(raw[c]);
    norm2 += raw[c] * raw[c];
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& e : v) e *= inv;
  }
  v.push_back(1.0);
  return v;
}

BilinearFit fit_bilinear_lr(std::span<const ClickExample> clicks, const BilinearFitOptions& opt) {
  if (clicks.empty()) throw Error("fit_bilinear_lr: no examples");
  const std::size_t du = clicks.front().user.size();
  const std::size_t da = clicks.front().article.size();
  if (du == 0 || da == 0) throw Error("fit_bilinear_lr: empty feature vectors");
  bool pos = false, neg = false;
  double max_scale = 0.0;
  for (const auto& c : clicks) {
    if (c.user.size() != du || c.article.size() != da) throw Error("dimension mismatch");
    if (c.label != 0 && c.label != 1) throw Error("labels must be 0 or 1");
    (c.label ? pos : neg) = true;
    max_scale = std::max(max_scale, dot(c.user, c.user) * dot(c.article, c.article));
  }
  if (!pos || !neg) throw Error("degenerate all-same-label data");

  // 1/L step, L bounding the Hessian of the mean log-loss plus penalty.
  // Nesterov momentum with gradient-based restart on top of the plain step.
  const double step = 1.0 / (0.25 * max_scale + opt.l2);
  const double inv_n = 1.0 / static_cast<double>(clicks.size());
  const std::size_t p = du * da;
  std::vector<double> w(p, 0.0), w_prev(p, 0.0), y(p, 0.0), g(p), yu(da);
  double momentum = 1.0;

  auto gradient_at = [&](const std::vector<double>& at) {
    for (std::size_t q = 0; q < p; ++q) g[q] = opt.l2 * at[q];
    for (const auto& c : clicks) {
      double s = 0.0;
      for (std::size_t i = 0; i < du; ++i) {
        if (c.user[i] == 0.0) continue;
        const double* row = at.data() + i * da;
        double r = 0.0;
        for (std::size_t j = 0; j < da; ++j) r += row[j] * c.article[j];
        s += c.user[i] * r;
      }
      const double resid = (1.0 / (1.0 + std::exp(-s)) - c.label) * inv_n;
      for (std::size_t i = 0; i < du; ++i) {
        const double ui = resid * c.user[i];
        if (ui == 0.0) continue;
        double* grow = g.data() + i * da;
        for (std::size_t j = 0; j < da; ++j) grow[j] += ui * c.article[j];
      }
    }
    double n2 = 0.0;
    for (double e : g) n2 += e * e;
    return std::sqrt(n2);
  };

  BilinearFit fit{DenseMatrix(du, da), 0, 0.0};
  for (;;) {
    fit.gradient_norm = gradient_at(y);
    if (fit.gradient_norm <= opt.gradient_tolerance || fit.iterations >= opt.max_iterations) {
      w = y;
      break;
    }
    double uphill = 0.0;
    for (std::size_t q = 0; q < p; ++q) uphill += g[q] * (w[q] - w_prev[q]);
    if (uphill > 0.0) momentum = 1.0;  // restart
    w_prev = w;
    for (std::size_t q = 0; q < p; ++q) w[q] = y[q] - step * g[q];
    const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    const double beta = (momentum - 1.0) / next;
    momentum = next;
    for (std::size_t q = 0; q < p; ++q) y[q] = w[q] + beta * (w[q] - w_prev[q]);
    ++fit.iterations;
  }
  fit.weights = DenseMatrix(du, da, std::move(w));
  return fit;
}

FeatureVector project_users(const DenseMatrix& weights, std::span<const double> user) {
  if (user.size() != weights.rows()) throw Error("dimension mismatch: user features vs weight rows");
  return weights.multiply_transposed(user);
}

FeatureVector gaussian_membership(std::span<const double> point, std::span<const FeatureVector> centroids,
                                  double bandwidth) {
  if (centroids.empty()) throw Error("no centroids");
  if (!(bandwidth > 0.0)) throw Error("bandwidth must be positive");
  std::vector<double> d2(centroids.size());
  double min_d2 = INFINITY;
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    if (centroids[j].size() != point.size()) throw Error("dimension mismatch");
    d2[j] = squared_distance(point, centroids[j]);
    min_d2 = std::min(min_d2, d2[j]);
  }
  // Shifting by the smallest distance cancels in the normalization and keeps
  // the nearest weight at exactly 1 (no underflow).
  FeatureVector m(centroids.size());
  double total = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    m[j] = std::exp(-(d2[j] - min_d2) / (2.0 * bandwidth * bandwidth));
    total += m[j];
  }
  for (auto& e : m) e /= total;
  m.push_back(1.0);
  return m;
}

KMeansMembership kmeans_membership(std::span<const FeatureVector> points, Rng& rng, const KMeansOptions& opt) {
  const std::size_t n_clusters = opt.n_clusters;
  if (n_clusters == 0) throw Error("n_clusters must be positive");
  if (points.empty()) throw Error("fewer distinct points than clusters");
  const std::size_t dim = points.front().size();
  std::set<FeatureVector> distinct;
  for (const auto& p : points) {
    if (p.size() != dim) throw Error("dimension mismatch");
    distinct.insert(p);
  }
  if (distinct.size() < n_clusters) throw Error("fewer distinct points than clusters");

  // k-means++ seeding.
  KMeansMembership out;
  out.centroids.push_back(points[rng.below(points.size())]);
  std::vector<double> d2(points.size());
  while (out.centroids.size() < n_clusters) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = INFINITY;
      for (const auto& c : out.centroids) best = std::min(best, squared_distance(points[i], c));
      d2[i] = best;
      total += best;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    while (d2[pick] == 0.0 && pick > 0) --pick;  // never duplicate a centroid
    out.centroids.push_back(points[pick]);
  }

  // Lloyd iterations.
  std::vector<std::size_t> assign(points.size(), 0);
  for (out.iterations = 0; out.iterations < opt.max_iterations;) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = INFINITY;
      for (std::size_t j = 0; j < n_clusters; ++j) {
        const double dist = squared_distance(points[i], out.centroids[j]);
        if (dist < best) {
          best = dist;
          assign[i] = j;
        }
      }
    }
    std::vector<FeatureVector> sums(n_clusters, FeatureVector(dim, 0.0));
    std::vector<std::size_t> counts(n_clusters, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++counts[assign[i]];
      for (std::size_t c = 0; c < dim; ++c) sums[assign[i]][c] += points[i][c];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < n_clusters; ++j) {
      if (counts[j] == 0) continue;  // empty cluster keeps its centroid
      for (auto& e : sums[j]) e /= static_cast<double>(counts[j]);
      shift = std::max(shift, std::sqrt(squared_distance(sums[j], out.centroids[j])));
      out.centroids[j] = std::move(sums[j]);
    }
    ++out.iterations;
    if (shift <= opt.shift_tolerance) break;
  }

  if (opt.bandwidth) {
    out.bandwidth = *opt.bandwidth;
  } else {
    std::vector<double> dists;
    for (std::size_t a = 0; a < n_clusters; ++a)
      for (std::size_t b = a + 1; b < n_clusters; ++b)
        dists.push_back(std::sqrt(squared_distance(out.centroids[a], out.centroids[b])));
    double median = 1.0;
    if (!dists.empty()) {
      std::sort(dists.begin(), dists.end());
      const std::size_t m = dists.size();
      median = m % 2 ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    }
    out.bandwidth = median / std::sqrt(2.0);
    if (!(out.bandwidth > 0.0)) out.bandwidth = 1.0;
  }

  out.memberships.reserve(points.size());
  for (const auto& p : points) out.memberships.push_back(gaussian_membership(p, out.centroids, out.bandwidth));
  return out;
}

FeatureVector outer_features(std::span<const double> user, std::span<const double> article) {
  FeatureVector z;
  z.reserve(user.size() * article.size());
  for (double u : user)
    for (double a : article) z.push_back(u * a);
  return z;
}

FeatureVector interaction_features(std::span<const double> user6, std::span<const double> article6) {
  if (user6.size() != 6 || article6.size() != 6) throw Error("interaction features need two six-vectors");
  return outer_features(user6, article6);
}

RawProfileSet RawProfileSet::from_json(const json& j) {
  RawProfileSet out;
  try {
    for (const auto& u : j.at("users")) out.users.emplace_back(u.at("id").get<std::string>(), u.at("raw").get<FeatureVector>());
    for (const auto& a : j.at("articles"))
      out.articles.emplace_back(a.at("id").get<std::string>(), a.at("raw").get<FeatureVector>());
    for (const auto& c : j.at("clicks"))
      out.clicks.push_back({c.at("user").get<std::string>(), c.at("article").get<std::string>(), c.at("label").get<int>()});
    out.min_support = j.value("min_support", out.min_support);
  } catch (const json::exception& e) {
    throw Error(std::string("raw profile file: ") + e.what());
  }
  return out;
}

json RawProfileSet::to_json() const {
  json j;
  j["users"] = json::array();
  for (const auto& [id, raw] : users) j["users"].push_back({{"id", id}, {"raw", raw}});
  j["articles"] = json::array();
  for (const auto& [id, raw] : articles) j["articles"].push_back({{"id", id}, {"raw", raw}});
  j["clicks"] = json::array();
  for (const auto& c : clicks) j["clicks"].push_back({{"user", c.user}, {"article", c.article}, {"label", c.label}});
  j["min_support"] = min_support;
  return j;
}

ReducedFeatures reduce_features(const RawProfileSet& raw, Rng& rng, const BilinearFitOptions& lr,
                                const KMeansOptions& km) {
  auto normalize_all = [&](const auto& entries) {
    std::vector<FeatureVector> rows;
    for (const auto& e : entries) rows.push_back(e.second);
    const auto kept = select_by_support(rows, raw.min_support);
    std::map<std::string, FeatureVector> out;
    for (const auto& e : entries) out[e.first] = normalize_profile(e.second, kept);
    return out;
  };
  const auto users = normalize_all(raw.users);
  const auto articles = normalize_all(raw.articles);

  std::vector<ClickExample> examples;
  for (const auto& c : raw.clicks) {
    const auto u = users.find(c.user);
    const auto a = articles.find(c.article);
    if (u == users.end() || a == articles.end()) throw Error("click references unknown user/article");
    examples.push_back({u->second, a->second, c.label});
  }
  ReducedFeatures out;
  out.weights = fit_bilinear_lr(examples, lr).weights;

  std::vector<std::string> user_ids, article_ids;
  std::vector<FeatureVector> psi_u, psi_a;
  for (const auto& [id, phi] : users) {
    user_ids.push_back(id);
    psi_u.push_back(project_users(out.weights, phi));
  }
  for (const auto& [id, phi] : articles) {
    article_ids.push_back(id);
    psi_a.push_back(out.weights.multiply(phi));  // W φ_a: article onto user categories
  }
  Rng user_rng = rng.fork(1), article_rng = rng.fork(2);
  const auto ku = kmeans_membership(psi_u, user_rng, km);
  const auto ka = kmeans_membership(psi_a, article_rng, km);
  for (std::size_t i = 0; i < user_ids.size(); ++i) out.users[user_ids[i]] = ku.memberships[i];
  for (std::size_t i = 0; i < article_ids.size(); ++i) out.articles[article_ids[i]] = ka.memberships[i];
  out.user_bandwidth = ku.bandwidth;
  out.article_bandwidth = ka.bandwidth;
  return out;
}

json to_json(const ReducedFeatures& r) {
  json j;
  j["users"] = r.users;
  j["articles"] = r.articles;
  json w = json::array();
  for (std::size_t i = 0; i < r.weights.rows(); ++i) {
    const auto row = r.weights.row(i);
    w.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["weights"] = w;
  j["user_bandwidth"] = r.user_bandwidth;
  j["article_bandwidth"] = r.article_bandwidth;
  return j;
}

RawProfileSet synthetic_raw_profiles(std::size_t n_users, std::size_t n_articles, std::size_t user_bits,
                                     std::size_t article_bits, std::size_t n_clicks, Rng& rng) {
  if (n_users == 0 || n_articles == 0 || user_bits < 2 || article_bits < 2) {
    throw Error("synthetic_raw_profiles: sizes too small");
  }
  // The last bit of every profile is rare and falls below the support filter.
  auto make = [&rng](std::size_t bits) {
    FeatureVector v(bits, 0.0);
    for (std::size_t b = 0; b + 1 < bits; ++b) v[b] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    v[bits - 1] = rng.bernoulli(0.02) ? 1.0 : 0.0;
    return v;
  };
  RawProfileSet out;
  for (std::size_t i = 0; i < n_users; ++i) out.users.emplace_back("u" + std::to_string(i), make(user_bits));
  for (std::size_t i = 0; i < n_articles; ++i) out.articles.emplace_back("p" + std::to_string(i), make(article_bits));

  DenseMatrix planted(user_bits, article_bits);
  for (std::size_t i = 0; i < user_bits; ++i)
    for (std::size_t j = 0; j < article_bits; ++j) planted(i, j) = 2.0 * rng.normal();
  for (std::size_t c = 0; c < n_clicks; ++c) {
    const std::size_t u = rng.below(n_users), a = rng.below(n_articles);
    const auto& fu = out.users[u].second;
    const auto& fa = out.articles[a].second;
    const double s = dot(fu, planted.multiply(fa)) / std::max(1.0, std::sqrt(dot(fu, fu) * dot(fa, fa))) - 1.0;
    out.clicks.push_back({out.users[u].first, out.articles[a].first, rng.bernoulli(1.0 / (1.0 + std::exp(-s))) ? 1 : 0});
  }
  return out;
}

}  // namespace cbandit
