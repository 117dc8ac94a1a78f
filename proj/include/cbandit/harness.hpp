#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cbandit/core.hpp"
#include "cbandit/evaluator.hpp"
#include "cbandit/policies.hpp"
#include "json.hpp"

namespace cbandit {

struct AlgorithmGrid {
  std::string algorithm;
  std::vector<double> parameters;  // ε or α values; {0} for parameterless
};

/// Default grids: ε ∈ {0, .01, .02, .05, .1, .2, .5, 1} for ε-driven
/// algorithms, α ∈ {0, .1, .2, .5, 1, 2, 2.36, 5} for UCB-driven ones.
std::vector<double> default_grid(const std::string& algorithm);

struct SweepSpec {
  std::vector<AlgorithmGrid> algorithms;
  std::vector<double> data_fractions{1.0, 0.3, 0.2, 0.1, 0.05, 0.01};
  double learning_fraction = 0.2;
  std::size_t T = 0;  // learning-bucket retained events; 0 reads the whole stream
  std::vector<std::uint64_t> seeds{1};
  std::string stream_path;
  std::string warm_offsets_path;
  std::size_t threads = 1;
  std::size_t refresh_period = kDefaultRefreshPeriod;
  std::size_t evict_after = 0;

  /// Keys: algorithms ([{"algorithm":..,"parameters":[..]}] or names for
  /// the default grid), data_fractions, learning_fraction, T, seeds, stream,
  /// warm_offsets, threads, refresh_period, evict_after. Relative paths
  /// resolve against base_dir.
  static SweepSpec from_json(const nlohmann::json& j, const std::string& base_dir = "");
  static SweepSpec load(const std::string& path);
  void validate() const;
};

struct ReportRow {
  std::string algorithm;
  double parameter = 0.0;
  double data_fraction = 1.0;
  std::string bucket;  // "learn" or "deploy"
  std::optional<double> ctr;               // relative to random; unset if random earned nothing
  std::optional<double> lift_vs_baseline;  // vs best ε-greedy; unset without an ε-greedy row
  std::size_t retained = 0;
  std::size_t consumed = 0;
  std::uint64_t seed = 0;
  double raw_ctr = 0.0;
  bool exhausted = false;
};

using StreamFactory = std::function<std::unique_ptr<EventSource>()>;

/// One bucketed replay per (algorithm, parameter, fraction, seed), rows in
/// spec order (learn, then deploy). The stream comes from spec.stream_path.
std::vector<ReportRow> run_sweep(const SweepSpec& spec);
/// Same, reading events from a factory that yields a fresh pass each call.
std::vector<ReportRow> run_sweep(const SweepSpec& spec, const StreamFactory& stream);

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(std::istream& in);

/// Best parameter per (algorithm, fraction), chosen by mean deployment CTR.
struct SummaryRow {
  std::string algorithm;
  double best_parameter = 0.0;
  double data_fraction = 1.0;
  double learn_ctr = 0.0;
  double learn_se = 0.0;
  double deploy_ctr = 0.0;
  double deploy_se = 0.0;
  std::optional<double> deploy_lift;  // vs the best ε-greedy at this fraction
  std::size_t seeds = 0;
};

/// Uses relative CTRs when every row has one, raw CTRs otherwise.
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

/// Warm-start offsets by user segment: CTR(arm | segment) − CTR(arm),
/// estimated on uniformly logged events whose x is a membership vector.
WarmStartOffsets fit_segment_offsets(EventSource& events);

}  // namespace cbandit
