#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "cbandit/core.hpp"

using namespace cbandit;

namespace {

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

ArmFeatures arm(std::string id, FeatureVector x) { return {std::move(id), std::move(x), std::nullopt}; }

LoggedEvent random_event(Rng& rng, std::size_t K, std::size_t d, std::size_t k) {
  LoggedEvent ev;
  std::map<ArmId, double> hidden;
  for (std::size_t i = 0; i < K; ++i) {
    ArmFeatures a;
    a.id = "arm" + std::to_string(K - i);  // deliberately not sorted
    for (std::size_t j = 0; j < d; ++j) a.x.push_back(rng.normal() * 1e3);
    if (k) {
      a.z = FeatureVector{};
      for (std::size_t j = 0; j < k; ++j) a.z->push_back(rng.uniform() / 3.0);
    }
    hidden[a.id] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    ev.context.arms.push_back(std::move(a));
  }
  ev.chosen = ev.context.arms[rng.below(K)].id;
  ev.reward = hidden[ev.chosen];
  ev.propensity = 1.0 / static_cast<double>(K);
  ev.hidden = hidden;
  return ev;
}

}  // namespace

TEST_CASE("missing propensity defaults to uniform over the arms") {
  const auto ev = parse_event_line(R"({"arms":[{"id":"a1","x":[1,0]},{"id":"a2","x":[0,1]}],"chosen":"a1","reward":1})");
  CHECK(ev.context.size() == 2);
  CHECK(ev.chosen == "a1");
  CHECK(ev.reward == 1.0);
  CHECK(ev.propensity == 0.5);
  CHECK_FALSE(ev.hidden.has_value());
  CHECK_FALSE(ev.context.hybrid());
}

TEST_CASE("parse errors") {
  CHECK(error_of([] { parse_event_line(R"({"arms":[{"id":"a1","x":[1]}],"chosen":"a9","reward":0})"); }) ==
        "chosen arm not in context");
  CHECK(error_of([] { parse_event_line(R"({"arms":[{"id":"a1","x":[1]}],"chosen":"a1","reward":1.5})"); }) ==
        "reward outside [0,1]");
  CHECK(error_of([] {
          parse_event_line(R"({"arms":[{"id":"a1","x":[1]}],"chosen":"a1","reward":1,"propensity":0})");
        }) == "propensity outside (0,1]");
  CHECK(error_of([] {
          parse_event_line(R"({"arms":[{"id":"a1","x":[1]},{"id":"a2","x":[1,2]}],"chosen":"a1","reward":1})");
        }) == "inconsistent x dimension");
  CHECK(error_of([] {
          parse_event_line(R"({"arms":[{"id":"a1","x":[1]},{"id":"a2","x":[1]}],"chosen":"a1","reward":1,"hidden":{"a1":1}})");
        }) == "hidden rewards do not cover every arm");
  CHECK(error_of([] { parse_event_line("{not json"); }).rfind("malformed record", 0) == 0);
  CHECK(error_of([] { parse_event_line(R"({"arms":[],"chosen":"a1","reward":1})"); }) == "empty arm set");
  CHECK(error_of([] { parse_event_line(R"({"arms":[{"id":"a1","x":["q"]}],"chosen":"a1","reward":1})"); })
            .rfind("malformed record", 0) == 0);
}

TEST_CASE("validate_trial") {
  TrialContext ok{{arm("a", FeatureVector(6, 0.1)), arm("b", FeatureVector(6, 0.2)), arm("c", FeatureVector(6, 0.3))}};
  CHECK_NOTHROW(validate_trial(ok));

  TrialContext mixed{{arm("a", FeatureVector(6, 0.1)), arm("b", FeatureVector(5, 0.1))}};
  CHECK(error_of([&] { validate_trial(mixed); }) == "inconsistent x dimension");

  TrialContext partial{{arm("a", {1.0}), arm("b", {1.0})}};
  partial.arms[0].z = FeatureVector{1.0};
  CHECK(error_of([&] { validate_trial(partial); }) == "partial shared-feature coverage");

  CHECK(error_of([] { validate_trial(TrialContext{}); }) == "empty arm set");

  TrialContext nan{{arm("a", {1.0, NAN})}};
  CHECK(error_of([&] { validate_trial(nan); }) == "non-finite feature value");

  TrialContext dup{{arm("a", {1.0}), arm("a", {2.0})}};
  CHECK(error_of([&] { validate_trial(dup); }).rfind("duplicate arm id", 0) == 0);

  TrialContext zdims{{arm("a", {1.0}), arm("b", {1.0})}};
  zdims.arms[0].z = FeatureVector{1.0};
  zdims.arms[1].z = FeatureVector{1.0, 2.0};
  CHECK(error_of([&] { validate_trial(zdims); }) == "inconsistent z dimension");
}

TEST_CASE("canonical form is written in fixed field order with 17 significant digits") {
  // Fields out of order, extra whitespace, short floats.
  const std::string messy =
      R"({ "reward": 0, "hidden": {"b": 1, "a": 0}, "chosen": "b",
           "arms": [ {"x": [0.1, 2], "id": "b", "z": [1]}, {"id": "a", "z": [0.5], "x": [3, -4]} ] })";
  const std::string expected =
      R"({"arms":[{"id":"b","x":[0.10000000000000001,2],"z":[1]},{"id":"a","x":[3,-4],"z":[0.5]}],)"
      R"("chosen":"b","reward":0,"propensity":0.5,"hidden":{"b":1,"a":0}})";
  CHECK(serialize_event(parse_event_line(messy)) == expected);
}

TEST_CASE("serialize -> parse -> serialize is byte-identical") {
  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    const auto ev = random_event(rng, 5, 3, i % 2 ? 4 : 0);
    const std::string once = serialize_event(ev);
    const auto back = parse_event_line(once);
    CHECK(serialize_event(back) == once);
    // Floats survive exactly.
    for (std::size_t a = 0; a < ev.context.size(); ++a) CHECK(back.context.arms[a].x == ev.context.arms[a].x);
  }
}

TEST_CASE("event files") {
  const auto dir = std::filesystem::temp_directory_path() / "cbandit_test_core";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "events.jsonl").string();
  Rng rng(7);
  std::vector<LoggedEvent> events;
  for (int i = 0; i < 20; ++i) events.push_back(random_event(rng, 3, 2, 0));
  write_events(path, events);

  const auto back = read_events(path);
  REQUIRE(back.size() == events.size());
  FileEventSource src(path);
  std::size_t n = 0;
  while (const LoggedEvent* ev = src.next()) {
    CHECK(serialize_event(*ev) == serialize_event(events[n]));
    ++n;
  }
  CHECK(n == events.size());

  {
    std::ofstream bad(path, std::ios::app);
    bad << R"({"arms":[{"id":"a","x":[1]}],"chosen":"zz","reward":1})" << '\n';
  }
  const std::string msg = error_of([&] { read_events(path); });
  CHECK(msg.find(":21: chosen arm not in context") != std::string::npos);
  CHECK_THROWS_AS(FileEventSource((dir / "missing.jsonl").string()), Error);
}

TEST_CASE("rng determinism and forks") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng parent(5);
  Rng untouched(5);
  Rng f1 = parent.fork(1);
  Rng f1_again = parent.fork(1);
  Rng f2 = parent.fork(2);
  CHECK(parent.next_u64() == untouched.next_u64());  // fork does not advance
  const auto x = f1.next_u64();
  CHECK(x == f1_again.next_u64());
  CHECK(x != f2.next_u64());

  CHECK_THROWS_AS(Rng(1).below(0), Error);
}

TEST_CASE("rng distributions") {
  Rng rng(99);
  // below(7): chi-square with 6 dof; 0.999 quantile is 22.46.
  const int n = 70000;
  std::vector<int> counts(7, 0);
  for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  CHECK(chi2 < 22.46);

  double sum = 0.0, sum_sq = 0.0, umin = 1.0, umax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
    const double u = rng.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
  }
  CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(sum_sq / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(umin >= 0.0);
  CHECK(umax < 1.0);
}

TEST_CASE("format_real keeps 17 significant digits") {
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK(format_real(1.0) == "1");
  CHECK(std::stod(format_real(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("history is append-only") {
  History h;
  CHECK(h.empty());
  h.append({TrialContext{{arm("a", {1.0})}}, "a", 1.0});
  h.append({TrialContext{{arm("b", {1.0})}}, "b", 0.0});
  CHECK(h.size() == 2);
  CHECK(h.records()[0].chosen == "a");
  CHECK(h.records()[1].reward == 0.0);
}
