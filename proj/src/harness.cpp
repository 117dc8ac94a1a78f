#include "cbandit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

namespace cbandit {

using nlohmann::json;

namespace {

bool is_ucb_driven(const std::string& a) {
  return a == "ucb" || a == "ucb_warm" || a == "ucb_seg" || a == "linucb_disjoint" || a == "linucb_hybrid";
}

bool is_egreedy_baseline(const std::string& a) { return a == "egreedy"; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base) / path).string();
}

}  // namespace

std::vector<double> default_grid(const std::string& algorithm) {
  if (!algorithm_has_parameter(algorithm)) return {0.0};
  if (is_ucb_driven(algorithm)) return {0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 2.36, 5.0};
  return {0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
}

SweepSpec SweepSpec::from_json(const json& j, const std::string& base_dir) {
  SweepSpec s;
  try {
    for (const auto& a : j.at("algorithms")) {
      AlgorithmGrid g;
      if (a.is_string()) {
        g.algorithm = a.get<std::string>();
        g.parameters = default_grid(g.algorithm);
      } else {
        g.algorithm = a.at("algorithm").get<std::string>();
        g.parameters = a.contains("parameters") ? a["parameters"].get<std::vector<double>>()
                                                : default_grid(g.algorithm);
      }
      s.algorithms.push_back(std::move(g));
    }
    if (j.contains("data_fractions")) s.data_fractions = j["data_fractions"].get<std::vector<double>>();
    s.learning_fraction = j.value("learning_fraction", s.learning_fraction);
    s.T = j.value("T", s.T);
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    s.stream_path = resolve(j.value("stream", std::string()), base_dir);
    s.warm_offsets_path = resolve(j.value("warm_offsets", std::string()), base_dir);
    s.threads = j.value("threads", s.threads);
    s.refresh_period = j.value("refresh_period", s.refresh_period);
    s.evict_after = j.value("evict_after", s.evict_after);
  } catch (const json::exception& e) {
    throw Error(std::string("sweep spec: ") + e.what());
  }
  return s;
}

SweepSpec SweepSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sweep spec: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("sweep spec " + path + ": " + e.what());
  }
  return from_json(j, std::filesystem::path(path).parent_path().string());
}

void SweepSpec::validate() const {
  if (algorithms.empty()) throw Error("sweep spec: no algorithms");
  for (const auto& g : algorithms) {
    const auto& known = known_algorithms();
    if (std::find(known.begin(), known.end(), g.algorithm) == known.end()) {
      throw Error("invalid policy spec: unknown algorithm '" + g.algorithm + "'");
    }
    if (g.parameters.empty()) throw Error("sweep spec: empty parameter grid for " + g.algorithm);
  }
  if (data_fractions.empty()) throw Error("sweep spec: no data fractions");
  for (double f : data_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error("sweep spec: data fractions must lie in (0,1]");
  }
  if (!(learning_fraction > 0.0 && learning_fraction <= 1.0)) {
    throw Error("sweep spec: learning_fraction must lie in (0,1]");
  }
  if (seeds.empty()) throw Error("sweep spec: no seeds");
  if (threads == 0) throw Error("sweep spec: threads must be positive");
  if (refresh_period == 0) throw Error("sweep spec: refresh_period must be positive");
}

std::vector<ReportRow> run_sweep(const SweepSpec& spec) {
  if (spec.stream_path.empty()) throw Error("sweep spec: no stream path");
  { FileEventSource probe(spec.stream_path); }
  const std::string path = spec.stream_path;
  return run_sweep(spec, [path] { return std::make_unique<FileEventSource>(path); });
}

std::vector<ReportRow> run_sweep(const SweepSpec& spec, const StreamFactory& stream) {
  spec.validate();

  PolicyResources res;
  res.refresh_period = spec.refresh_period;
  res.evict_after = spec.evict_after;
  {
    auto src = stream();
    const LoggedEvent* first = src->next();
    if (first == nullptr) throw Error("event stream is empty");
    res.d = first->context.x_dim();
    res.k = first->context.z_dim();
  }
  bool need_omniscient = false, need_warm = false;
  for (const auto& g : spec.algorithms) {
    need_omniscient |= g.algorithm == "omniscient";
    need_warm |= g.algorithm == "egreedy_warm" || g.algorithm == "ucb_warm";
  }
  if (need_omniscient) {
    auto src = stream();
    res.omniscient = std::make_shared<const ContextFreeArmStats>(omniscient_fit(*src));
  }
  if (need_warm) {
    if (spec.warm_offsets_path.empty()) throw Error("invalid policy spec: warm-start algorithms need warm_offsets");
    res.warm = std::make_shared<const WarmStartOffsets>(WarmStartOffsets::load(spec.warm_offsets_path));
  }
  for (const auto& g : spec.algorithms)
    for (double p : g.parameters) make_policy({g.algorithm, p}, res);

  struct Job {
    std::string algorithm;
    double parameter;
    double fraction;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::map<std::uint64_t, std::size_t> baseline;  // seed → job index of the random run
  for (auto seed : spec.seeds) {
    if (baseline.count(seed)) continue;
    baseline[seed] = jobs.size();
    jobs.push_back({"random", 0.0, 1.0, seed});
  }
  std::vector<std::size_t> row_job;  // per (grid point, fraction, seed) in output order
  for (const auto& g : spec.algorithms) {
    for (double p : g.parameters) {
      for (double f : spec.data_fractions) {
        for (auto seed : spec.seeds) {
          if (g.algorithm == "random") {
            row_job.push_back(baseline.at(seed));
          } else {
            row_job.push_back(jobs.size());
            jobs.push_back({g.algorithm, p, f, seed});
          }
        }
      }
    }
  }

  std::vector<BucketReport> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const Job& job = jobs[i];
        auto policy = make_policy({job.algorithm, job.parameter}, res);
        auto src = stream();
        Rng rng(job.seed);
        ReplayOptions opt;
        opt.update_fraction = job.fraction;
        opt.until_exhausted = spec.T == 0;
        results[i] = bucketed_replay(*policy, *src, spec.T, spec.learning_fraction, rng, opt);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(spec.threads, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<ReportRow> rows;
  std::size_t r = 0;
  for (const auto& g : spec.algorithms) {
    for (double p : g.parameters) {
      for (double f : spec.data_fractions) {
        for (auto seed : spec.seeds) {
          const std::size_t j = row_job[r++];
          const BucketReport& rep = results[j];
          const BucketReport& base = results[baseline.at(seed)];
          for (int b = 0; b < 2; ++b) {
            const ReplayResult& res_b = b == 0 ? rep.learning : rep.deployment;
            const ReplayResult& base_b = b == 0 ? base.learning : base.deployment;
            ReportRow row;
            row.algorithm = g.algorithm;
            row.parameter = algorithm_has_parameter(g.algorithm) ? p : 0.0;
            row.data_fraction = f;
            row.bucket = b == 0 ? "learn" : "deploy";
            row.retained = res_b.retained;
            row.consumed = res_b.consumed;
            row.seed = seed;
            row.raw_ctr = res_b.ctr;
            row.exhausted = res_b.exhausted;
            if (j == baseline.at(seed)) {
              if (base_b.ctr > 0.0) row.ctr = 1.0;
            } else if (base_b.ctr > 0.0) {
              row.ctr = res_b.ctr / base_b.ctr;
            }
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }

  // Lift against the best ε-greedy row sharing fraction, seed and bucket.
  std::map<std::tuple<double, std::uint64_t, std::string>, double> best_egreedy;
  for (const auto& row : rows) {
    if (!is_egreedy_baseline(row.algorithm)) continue;
    auto key = std::make_tuple(row.data_fraction, row.seed, row.bucket);
    auto it = best_egreedy.find(key);
    if (it == best_egreedy.end() || row.raw_ctr > it->second) best_egreedy[key] = row.raw_ctr;
  }
  for (auto& row : rows) {
    const auto it = best_egreedy.find(std::make_tuple(row.data_fraction, row.seed, row.bucket));
    if (it != best_egreedy.end() && it->second > 0.0) row.lift_vs_baseline = row.raw_ctr / it->second - 1.0;
  }
  return rows;
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "algorithm,parameter,data_fraction,bucket,ctr,lift_vs_baseline,retained,consumed,seed,raw_ctr,exhausted\n";
  for (const auto& r : rows) {
    out << r.algorithm << ',' << fmt(r.parameter) << ',' << fmt(r.data_fraction) << ',' << r.bucket << ','
        << (r.ctr ? fmt(*r.ctr) : "") << ',' << (r.lift_vs_baseline ? fmt(*r.lift_vs_baseline) : "") << ','
        << r.retained << ',' << r.consumed << ',' << r.seed << ',' << fmt(r.raw_ctr) << ','
        << (r.exhausted ? 1 : 0) << '\n';
  }
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  if (!std::getline(in, line) || line.rfind("algorithm,parameter,", 0) != 0) {
    throw Error("report CSV: missing header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 11) throw Error("report CSV line " + std::to_string(lineno) + ": expected 11 fields");
    try {
      ReportRow r;
      r.algorithm = f[0];
      r.parameter = std::stod(f[1]);
      r.data_fraction = std::stod(f[2]);
      r.bucket = f[3];
      if (!f[4].empty()) r.ctr = std::stod(f[4]);
      if (!f[5].empty()) r.lift_vs_baseline = std::stod(f[5]);
      r.retained = std::stoull(f[6]);
      r.consumed = std::stoull(f[7]);
      r.seed = std::stoull(f[8]);
      r.raw_ctr = std::stod(f[9]);
      r.exhausted = f[10] == "1";
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw Error("report CSV line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

namespace {

struct Accumulator {
  std::vector<double> values;
  std::size_t retained = 0;
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
  double se() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    const double n = static_cast<double>(values.size());
    return std::sqrt(ss / (n - 1.0) / n);
  }
};

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  const bool relative = std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.ctr.has_value(); });
  using GroupKey = std::pair<std::string, double>;  // algorithm, fraction
  std::vector<GroupKey> group_order;
  std::map<GroupKey, std::vector<double>> param_order;
  std::map<std::tuple<std::string, double, double>, std::pair<Accumulator, Accumulator>> acc;
  for (const auto& r : rows) {
    const GroupKey g{r.algorithm, r.data_fraction};
    if (!param_order.count(g)) group_order.push_back(g);
    auto& params = param_order[g];
    if (std::find(params.begin(), params.end(), r.parameter) == params.end()) params.push_back(r.parameter);
    auto& pair = acc[{r.algorithm, r.data_fraction, r.parameter}];
    Accumulator& a = r.bucket == "learn" ? pair.first : pair.second;
    a.values.push_back(relative ? *r.ctr : r.raw_ctr);
    a.retained += r.retained;
  }

  std::vector<SummaryRow> out;
  for (const auto& g : group_order) {
    bool any_deploy = false;
    for (double p : param_order[g]) any_deploy |= acc[{g.first, g.second, p}].second.retained > 0;
    const SummaryRow* best = nullptr;
    SummaryRow candidate;
    for (double p : param_order[g]) {
      const auto& [learn, deploy] = acc[{g.first, g.second, p}];
      SummaryRow s{g.first, p, g.second, learn.mean(), learn.se(), deploy.mean(), deploy.se(), std::nullopt,
                   std::max(learn.values.size(), deploy.values.size())};
      const double score = any_deploy ? s.deploy_ctr : s.learn_ctr;
      const double best_score = best ? (any_deploy ? best->deploy_ctr : best->learn_ctr) : -INFINITY;
      if (score > best_score) {
        candidate = s;
        best = &candidate;
      }
    }
    out.push_back(candidate);
  }
  for (auto& s : out) {
    for (const auto& b : out) {
      if (is_egreedy_baseline(b.algorithm) && b.data_fraction == s.data_fraction && b.deploy_ctr > 0.0) {
        s.deploy_lift = s.deploy_ctr / b.deploy_ctr - 1.0;
      }
    }
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "algorithm,best_parameter,data_fraction,learn_ctr,learn_se,deploy_ctr,deploy_se,deploy_lift,seeds\n";
  for (const auto& s : rows) {
    out << s.algorithm << ',' << fmt(s.best_parameter) << ',' << fmt(s.data_fraction) << ',' << fmt(s.learn_ctr)
        << ',' << fmt(s.learn_se) << ',' << fmt(s.deploy_ctr) << ',' << fmt(s.deploy_se) << ','
        << (s.deploy_lift ? fmt(*s.deploy_lift) : "") << ',' << s.seeds << '\n';
  }
}

WarmStartOffsets fit_segment_offsets(EventSource& events) {
  std::map<ArmId, ContextFreeArmStats::Counts> overall;
  std::map<std::pair<std::size_t, ArmId>, ContextFreeArmStats::Counts> by_segment;
  while (const LoggedEvent* ev = events.next()) {
    const std::size_t seg = segment_assign(ev->context.arms.front().x);
    auto& o = overall[ev->chosen];
    o.clicks += ev->reward;
    ++o.views;
    auto& s = by_segment[{seg, ev->chosen}];
    s.clicks += ev->reward;
    ++s.views;
  }
  WarmStartOffsets out;
  for (const auto& [key, c] : by_segment) {
    const auto& o = overall.at(key.second);
    const double offset = c.clicks / static_cast<double>(c.views) - o.clicks / static_cast<double>(o.views);
    out.set_segment(key.first, key.second, offset);
  }
  return out;
}

}  // namespace cbandit
