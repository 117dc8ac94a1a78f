#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cbandit/harness.hpp"

using namespace cbandit;
using nlohmann::json;

namespace {

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<LoggedEvent> world_stream(std::size_t K, std::size_t n, std::uint64_t seed, double arm_scale = 0.5) {
  WorldConfig c;
  c.n_arms = K;
  c.arm_scale = arm_scale;
  c.theta_seed = seed;
  const auto w = SyntheticWorld::generate(c);
  Rng rng(seed + 1000);
  return gen_stream(w, n, rng);
}

StreamFactory factory_of(const std::vector<LoggedEvent>& events) {
  return [&events] { return std::make_unique<SpanEventSource>(events); };
}

std::string csv_of(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  write_report_csv(os, rows);
  return os.str();
}

SweepSpec small_spec() {
  SweepSpec s;
  s.algorithms = {{"egreedy", {0.05, 0.2}}, {"linucb_disjoint", {0.5, 1.0}}, {"random", {0.0}}};
  s.data_fractions = {1.0, 0.1};
  s.seeds = {1, 2};
  s.learning_fraction = 0.3;
  s.T = 300;
  return s;
}

}  // namespace

TEST_CASE("default grids") {
  CHECK(default_grid("egreedy") == std::vector<double>{0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1});
  CHECK(default_grid("linucb_hybrid") == std::vector<double>{0, 0.1, 0.2, 0.5, 1, 2, 2.36, 5});
  CHECK(default_grid("ucb_seg") == default_grid("linucb_disjoint"));
  CHECK(default_grid("egreedy_disjoint") == default_grid("egreedy"));
  CHECK(default_grid("random") == std::vector<double>{0});
  CHECK(default_grid("omniscient") == std::vector<double>{0});
}

TEST_CASE("one algorithm with three values at one fraction and seed gives six rows") {
  const auto events = world_stream(5, 20000, 1);
  SweepSpec s;
  s.algorithms = {{"linucb_disjoint", {0.1, 1.0, 2.0}}};
  s.data_fractions = {1.0};
  s.seeds = {7};
  s.T = 500;
  const auto rows = run_sweep(s, factory_of(events));
  REQUIRE(rows.size() == 6);
  const char* buckets[] = {"learn", "deploy"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].algorithm == "linucb_disjoint");
    CHECK(rows[i].parameter == s.algorithms[0].parameters[i / 2]);
    CHECK(rows[i].bucket == buckets[i % 2]);
    CHECK(rows[i].seed == 7);
    CHECK(rows[i].ctr.has_value());
    CHECK(*rows[i].ctr >= 0.0);
    CHECK(rows[i].consumed >= rows[i].retained);
    CHECK_FALSE(rows[i].lift_vs_baseline.has_value());  // no ε-greedy row to compare with
  }
  CHECK(rows[0].retained == 500);
}

TEST_CASE("random rows have relative ctr 1 and every grid point appears once") {
  const auto events = world_stream(5, 30000, 2);
  const auto spec = small_spec();
  const auto rows = run_sweep(spec, factory_of(events));
  // (2 + 2 + 1) points × 2 fractions × 2 seeds × 2 buckets
  CHECK(rows.size() == 40);
  std::set<std::tuple<std::string, double, double, std::uint64_t, std::string>> seen;
  for (const auto& r : rows) {
    CHECK(seen.insert({r.algorithm, r.parameter, r.data_fraction, r.seed, r.bucket}).second);
    if (r.algorithm == "random") {
      REQUIRE(r.ctr.has_value());
      CHECK(*r.ctr == 1.0);
    }
    if (r.algorithm == "egreedy") REQUIRE(r.lift_vs_baseline.has_value());
  }
  CHECK(seen.size() == rows.size());

  // Baseline rows: the best ε-greedy row per (fraction, seed, bucket) has lift 0.
  std::map<std::tuple<double, std::uint64_t, std::string>, double> best;
  for (const auto& r : rows) {
    if (r.algorithm != "egreedy") continue;
    auto key = std::make_tuple(r.data_fraction, r.seed, r.bucket);
    best[key] = std::max(best.count(key) ? best[key] : 0.0, r.raw_ctr);
  }
  for (const auto& r : rows) {
    if (r.algorithm != "egreedy") continue;
    const double b = best[{r.data_fraction, r.seed, r.bucket}];
    if (r.raw_ctr == b) CHECK(*r.lift_vs_baseline == 0.0);
    else CHECK(*r.lift_vs_baseline < 0.0);
  }
}

TEST_CASE("sweeps are byte-identical on rerun and across thread counts") {
  const auto events = world_stream(5, 30000, 3);
  auto spec = small_spec();
  const std::string a = csv_of(run_sweep(spec, factory_of(events)));
  const std::string b = csv_of(run_sweep(spec, factory_of(events)));
  spec.threads = 4;
  const std::string c = csv_of(run_sweep(spec, factory_of(events)));
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("report csv round trip") {
  const auto events = world_stream(5, 30000, 4);
  const auto rows = run_sweep(small_spec(), factory_of(events));
  const std::string text = csv_of(rows);
  std::istringstream in(text);
  const auto back = read_report_csv(in);
  REQUIRE(back.size() == rows.size());
  CHECK(csv_of(back) == text);
  CHECK(back[0].algorithm == rows[0].algorithm);
  CHECK(back[0].retained == rows[0].retained);

  std::istringstream bad("algorithm,parameter\nx,1\n");
  CHECK_THROWS_AS(read_report_csv(bad), Error);
}

TEST_CASE("the whole stream is read when T is 0") {
  const auto events = world_stream(5, 5000, 5);
  SweepSpec s;
  s.algorithms = {{"egreedy", {0.1}}};
  s.data_fractions = {1.0};
  s.T = 0;
  s.learning_fraction = 0.5;
  const auto rows = run_sweep(s, factory_of(events));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].consumed + rows[1].consumed == events.size());
  CHECK_FALSE(rows[0].exhausted);
}

TEST_CASE("stream exhaustion flags rows instead of dropping them") {
  const auto events = world_stream(5, 1000, 6);
  SweepSpec s;
  s.algorithms = {{"egreedy", {0.1}}};
  s.data_fractions = {1.0};
  s.T = 5000;
  const auto rows = run_sweep(s, factory_of(events));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].exhausted);
}

TEST_CASE("linucb beats the best epsilon-greedy on a contextual ten-arm world") {
  const auto events = world_stream(10, 60000, 7, 1.0);
  SweepSpec s;
  s.algorithms = {{"egreedy", {0.01, 0.05, 0.1, 0.2}}, {"linucb_disjoint", {0.2, 0.5, 1.0}}};
  s.data_fractions = {1.0};
  s.seeds = {1, 2, 3};
  s.T = 0;
  const auto summary = summarize(run_sweep(s, factory_of(events)));
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].algorithm == "egreedy");
  CHECK(*summary[0].deploy_lift == 0.0);
  CHECK(summary[1].algorithm == "linucb_disjoint");
  REQUIRE(summary[1].deploy_lift.has_value());
  CHECK(*summary[1].deploy_lift > 0.0);
  CHECK(summary[1].deploy_ctr - summary[0].deploy_ctr > 2.0 * std::hypot(summary[1].deploy_se, summary[0].deploy_se));
}

TEST_CASE("summary picks the best parameter by deployment ctr") {
  auto row = [](std::string algo, double p, std::string bucket, double ctr, std::uint64_t seed) {
    ReportRow r;
    r.algorithm = std::move(algo);
    r.parameter = p;
    r.bucket = std::move(bucket);
    r.ctr = ctr;
    r.raw_ctr = ctr / 10.0;
    r.retained = 100;
    r.seed = seed;
    return r;
  };
  const std::vector<ReportRow> rows{
      row("egreedy", 0.1, "learn", 1.2, 1), row("egreedy", 0.1, "deploy", 1.4, 1),
      row("egreedy", 0.1, "learn", 1.0, 2), row("egreedy", 0.1, "deploy", 1.2, 2),
      row("egreedy", 0.5, "learn", 1.5, 1), row("egreedy", 0.5, "deploy", 1.0, 1),
      row("egreedy", 0.5, "learn", 1.5, 2), row("egreedy", 0.5, "deploy", 1.0, 2),
      row("ucb", 1.0, "learn", 1.1, 1),     row("ucb", 1.0, "deploy", 1.6, 1),
      row("ucb", 1.0, "learn", 1.1, 2),     row("ucb", 1.0, "deploy", 1.6, 2),
  };
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  CHECK(s[0].best_parameter == 0.1);  // higher deploy ctr despite the lower learn ctr
  CHECK(s[0].deploy_ctr == doctest::Approx(1.3));
  CHECK(s[0].learn_ctr == doctest::Approx(1.1));
  CHECK(s[0].deploy_se == doctest::Approx(0.1));  // sample sd 0.1414 / √2
  CHECK(s[0].seeds == 2);
  CHECK(*s[0].deploy_lift == 0.0);
  CHECK(*s[1].deploy_lift == doctest::Approx(1.6 / 1.3 - 1.0));

  std::ostringstream os;
  write_summary_csv(os, s);
  CHECK(os.str().rfind("algorithm,best_parameter,data_fraction", 0) == 0);
}

TEST_CASE("segment offsets are segment ctr minus overall ctr") {
  auto ev = [](std::size_t seg, const ArmId& chosen, double reward) {
    LoggedEvent e;
    FeatureVector x(6, 0.0);
    x[seg - 1] = 1.0;
    x[5] = 1.0;
    e.context.arms = {{"a", x, std::nullopt}, {"b", x, std::nullopt}};
    e.chosen = chosen;
    e.reward = reward;
    e.propensity = 0.5;
    return e;
  };
  // Arm a: segment 1 clicks 2/2, segment 2 clicks 0/2 → overall 0.5.
  // Arm b: segment 1 clicks 1/4 only → offset 0.
  const std::vector<LoggedEvent> events{ev(1, "a", 1), ev(1, "a", 1), ev(2, "a", 0), ev(2, "a", 0),
                                        ev(1, "b", 1), ev(1, "b", 0), ev(1, "b", 0), ev(1, "b", 0)};
  SpanEventSource src(events);
  const auto off = fit_segment_offsets(src);
  const FeatureVector u1{0.9, 0.1, 0, 0, 0, 1}, u2{0.1, 0.9, 0, 0, 0, 1};
  CHECK(off.offset(u1, "a") == doctest::Approx(0.5));
  CHECK(off.offset(u2, "a") == doctest::Approx(-0.5));
  CHECK(off.offset(u1, "b") == doctest::Approx(0.0));
  CHECK(off.offset(u2, "b") == 0.0);  // unseen pair
}

TEST_CASE("spec parsing and validation") {
  const auto dir = std::filesystem::temp_directory_path() / "cbandit_test_harness";
  std::filesystem::create_directories(dir);
  const auto events = world_stream(3, 2000, 8);
  write_events((dir / "events.jsonl").string(), events);
  {
    std::ofstream f(dir / "spec.json");
    f << R"({"algorithms":["egreedy",{"algorithm":"ucb","parameters":[0.5]}],
             "data_fractions":[1.0],"T":100,"seeds":[3,4],"stream":"events.jsonl","threads":2})";
  }
  const auto spec = SweepSpec::load((dir / "spec.json").string());
  CHECK(spec.algorithms.size() == 2);
  CHECK(spec.algorithms[0].parameters == default_grid("egreedy"));
  CHECK(spec.algorithms[1].parameters == std::vector<double>{0.5});
  CHECK(spec.stream_path == (dir / "events.jsonl").string());
  CHECK(spec.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(spec.learning_fraction == 0.2);
  const auto rows = run_sweep(spec);
  CHECK(rows.size() == (8 + 1) * 1 * 2 * 2);

  SweepSpec s = spec;
  s.algorithms = {{"nope", {1.0}}};
  CHECK(error_of([&] { s.validate(); }) == "invalid policy spec: unknown algorithm 'nope'");
  s = spec;
  s.data_fractions = {0.0};
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec;
  s.data_fractions = {};
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec;
  s.algorithms[0].parameters.clear();
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec;
  s.learning_fraction = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec;
  s.seeds.clear();
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec;
  s.stream_path = (dir / "missing.jsonl").string();
  CHECK_THROWS_AS(run_sweep(s), Error);
  s = spec;
  s.algorithms = {{"egreedy_warm", {0.1}}};
  CHECK(error_of([&] { run_sweep(s); }) == "invalid policy spec: warm-start algorithms need warm_offsets");
  CHECK_THROWS_AS(SweepSpec::from_json(json::parse(R"({"algorithms":[{"parameters":[1]}]})")), Error);
}
