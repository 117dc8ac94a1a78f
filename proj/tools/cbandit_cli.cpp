#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cbandit/core.hpp"
#include "cbandit/evaluator.hpp"
#include "cbandit/harness.hpp"
#include "cbandit/policies.hpp"
#include "cbandit/synthworld.hpp"
#include "json.hpp"

using namespace cbandit;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

json result_json(const ReplayResult& r) {
  return {{"retained", r.retained},   {"consumed", r.consumed}, {"updates", r.updates},
          {"total_payoff", r.total_payoff}, {"ctr", r.ctr},     {"std_error", r.std_error()},
          {"exhausted", r.exhausted}};
}

struct GenerateArgs {
  std::string world_path, out, world_out, offsets_out;
  std::size_t events = 10000;
  std::uint64_t seed = 1;
};

void cmd_generate(const GenerateArgs& a) {
  WorldConfig cfg = a.world_path.empty() ? WorldConfig{} : WorldConfig::from_json(load_json(a.world_path));
  const SyntheticWorld world = SyntheticWorld::generate(cfg);
  Rng rng(a.seed);
  {
    auto out = open_out(a.out);
    Rng stream_rng = rng.fork(1);
    for (std::size_t t = 0; t < a.events; ++t) out << serialize_event(draw_event(world, t, stream_rng)) << '\n';
  }
  if (!a.world_out.empty()) open_out(a.world_out) << world.to_json().dump(2) << '\n';
  if (!a.offsets_out.empty()) {
    // Offsets come from a separate earlier stream, never the evaluation one.
    WorldEventSource prior(world, rng.fork(2), a.events);
    fit_segment_offsets(prior).save(a.offsets_out);
  }
  std::fprintf(stderr, "wrote %zu events to %s\n", a.events, a.out.c_str());
}

struct EvaluateArgs {
  std::string stream, algorithm, warm, trials_out;
  double parameter = 0.0;
  std::size_t T = 0;
  double learning_fraction = 1.0;
  double data_fraction = 1.0;
  bool rejection = false;
  double min_propensity = 0.0;
  std::size_t refresh = kDefaultRefreshPeriod;
  std::uint64_t seed = 1;
};

void cmd_evaluate(const EvaluateArgs& a) {
  PolicyResources res;
  res.refresh_period = a.refresh;
  {
    FileEventSource probe(a.stream);
    const LoggedEvent* first = probe.next();
    if (!first) throw Error("event stream is empty");
    res.d = first->context.x_dim();
    res.k = first->context.z_dim();
  }
  if (a.algorithm == "omniscient") {
    FileEventSource src(a.stream);
    res.omniscient = std::make_shared<const ContextFreeArmStats>(omniscient_fit(src));
  }
  if (!a.warm.empty()) res.warm = std::make_shared<const WarmStartOffsets>(WarmStartOffsets::load(a.warm));
  auto policy = make_policy({a.algorithm, a.parameter}, res);

  ReplayOptions opt;
  opt.update_fraction = a.data_fraction;
  opt.until_exhausted = a.T == 0;
  opt.record_trials = !a.trials_out.empty();
  if (a.rejection) {
    opt.rejection = true;
    opt.min_propensity = a.min_propensity;
  }
  FileEventSource src(a.stream);
  Rng rng(a.seed);
  const BucketReport rep = bucketed_replay(*policy, src, a.T, a.learning_fraction, rng, opt);
  json j = {{"algorithm", a.algorithm},
            {"parameter", a.parameter},
            {"learning_fraction", a.learning_fraction},
            {"data_fraction", a.data_fraction},
            {"seed", a.seed},
            {"learning", result_json(rep.learning)}};
  if (a.learning_fraction < 1.0) j["deployment"] = result_json(rep.deployment);
  std::cout << j.dump(2) << '\n';
  if (!a.trials_out.empty()) {
    auto out = open_out(a.trials_out);
    out << "trial,payoff,cumulative_ctr\n";
    double sum = 0.0;
    for (std::size_t i = 0; i < rep.learning.per_trial_payoffs.size(); ++i) {
      sum += rep.learning.per_trial_payoffs[i];
      out << i + 1 << ',' << rep.learning.per_trial_payoffs[i] << ',' << format_real(sum / double(i + 1)) << '\n';
    }
  }
  if (rep.learning.exhausted) {
    std::fprintf(stderr, "warning: stream exhausted after %zu retained events\n", rep.learning.retained);
  }
}

struct SweepArgs {
  std::string spec, out;
  std::size_t threads = 0;
  std::vector<std::uint64_t> seeds;
};

void cmd_sweep(const SweepArgs& a) {
  SweepSpec spec = SweepSpec::load(a.spec);
  if (a.threads > 0) spec.threads = a.threads;
  if (!a.seeds.empty()) spec.seeds = a.seeds;
  const auto rows = run_sweep(spec);
  if (a.out.empty()) {
    write_report_csv(std::cout, rows);
  } else {
    auto out = open_out(a.out);
    write_report_csv(out, rows);
  }
  std::size_t flagged = 0;
  for (const auto& r : rows) flagged += r.exhausted ? 1 : 0;
  if (flagged) std::fprintf(stderr, "warning: %zu rows hit stream exhaustion\n", flagged);
}

struct FeaturesArgs {
  std::string input, out;
  std::size_t clusters = 5;
  std::optional<double> bandwidth;
  std::uint64_t seed = 1;
  bool synthetic = false;
};

void cmd_features(const FeaturesArgs& a) {
  Rng rng(a.seed);
  RawProfileSet raw;
  if (a.synthetic) {
    Rng data_rng = rng.fork(7);
    raw = synthetic_raw_profiles(200, 60, 12, 10, 4000, data_rng);
  } else {
    if (a.input.empty()) throw Error("features: give --input or --synthetic");
    raw = RawProfileSet::from_json(load_json(a.input));
  }
  KMeansOptions km;
  km.n_clusters = a.clusters;
  km.bandwidth = a.bandwidth;
  const ReducedFeatures reduced = reduce_features(raw, rng, {}, km);
  const std::string text = to_json(reduced).dump(2);
  if (a.out.empty()) {
    std::cout << text << '\n';
  } else {
    open_out(a.out) << text << '\n';
  }
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::uint64_t seed = 1;
};

void cmd_report(const ReportArgs& a) {
  std::vector<ReportRow> rows;
  for (const auto& path : a.inputs) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    auto part = read_report_csv(in);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto summary = summarize(rows);
  if (a.out.empty()) {
    write_summary_csv(std::cout, summary);
  } else {
    auto out = open_out(a.out);
    write_summary_csv(out, summary);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual-bandit policies, replay evaluation and sweeps"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic world and a uniformly logged event stream");
  g->add_option("--world", gen.world_path, "World config (JSON)")->check(CLI::ExistingFile);
  g->add_option("-n,--events", gen.events, "Number of logged events")->check(CLI::PositiveNumber);
  g->add_option("-o,--out", gen.out, "Output event log (JSONL)")->required();
  g->add_option("--world-out", gen.world_out, "Write the ground-truth world (JSON)");
  g->add_option("--offsets-out", gen.offsets_out, "Fit warm-start segment offsets on a separate stream");
  g->add_option("--seed", gen.seed, "Random seed");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Replay-evaluate one policy on a logged stream");
  e->add_option("-s,--stream", ev.stream, "Event log (JSONL)")->required()->check(CLI::ExistingFile);
  e->add_option("-a,--algorithm", ev.algorithm, "Policy name")->required()->check(CLI::IsMember(known_algorithms()));
  e->add_option("-p,--param", ev.parameter, "epsilon or alpha");
  e->add_option("-T,--trials", ev.T, "Retained events to collect (0: whole stream)");
  e->add_option("--learning-fraction", ev.learning_fraction, "Share of traffic routed to the learning bucket")
      ->check(CLI::Range(0.0, 1.0));
  e->add_option("--data-fraction", ev.data_fraction, "Share of retained events used for updates")
      ->check(CLI::Range(0.0, 1.0));
  e->add_flag("--rejection", ev.rejection, "Rejection-sample non-uniformly logged events");
  e->add_option("--min-propensity", ev.min_propensity, "p_min for rejection sampling");
  e->add_option("--warm-offsets", ev.warm, "Warm-start offset file")->check(CLI::ExistingFile);
  e->add_option("--refresh-period", ev.refresh, "Updates between exact re-inversions")->check(CLI::PositiveNumber);
  e->add_option("--trials-out", ev.trials_out, "Per-trial payoff CSV of the learning bucket");
  e->add_option("--seed", ev.seed, "Random seed");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Run a parameter / data-fraction sweep");
  s->add_option("spec", sw.spec, "Sweep spec (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("-o,--out", sw.out, "Output CSV (default stdout)");
  s->add_option("-j,--threads", sw.threads, "Worker threads (overrides the spec)");
  s->add_option("--seed", sw.seeds, "Seeds (override the spec)");

  FeaturesArgs ft;
  auto* f = app.add_subcommand("features", "Reduce raw binary profiles to membership features");
  f->add_option("-i,--input", ft.input, "Raw profile file (JSON)")->check(CLI::ExistingFile);
  f->add_flag("--synthetic", ft.synthetic, "Use generated profiles with a planted click model");
  f->add_option("-o,--out", ft.out, "Output JSON (default stdout)");
  f->add_option("-k,--clusters", ft.clusters, "Number of clusters")->check(CLI::PositiveNumber);
  f->add_option("--bandwidth", ft.bandwidth, "Kernel bandwidth (default: from centroid spacing)");
  f->add_option("--seed", ft.seed, "Random seed");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Summarize sweep CSVs: best parameter per algorithm and fraction");
  r->add_option("inputs", rp.inputs, "Sweep CSV files")->required()->check(CLI::ExistingFile);
  r->add_option("-o,--out", rp.out, "Output CSV (default stdout)");
  r->add_option("--seed", rp.seed, "Unused; accepted for uniformity");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) cmd_generate(gen);
    if (*e) cmd_evaluate(ev);
    if (*s) cmd_sweep(sw);
    if (*f) cmd_features(ft);
    if (*r) cmd_report(rp);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
