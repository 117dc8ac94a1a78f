#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cbandit {

/// Raised for contract violations: malformed input, dimension mismatches,
/// out-of-range parameters.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ArmId = std::string;
using FeatureVector = std::vector<double>;

struct ArmFeatures {
  ArmId id;
  FeatureVector x;
  std::optional<FeatureVector> z;  // shared (hybrid) features
};

/// The arm set offered at one trial. The current user is represented only
/// through the per-arm features.
struct TrialContext {
  std::vector<ArmFeatures> arms;

  std::size_t size() const { return arms.size(); }
  bool hybrid() const { return !arms.empty() && arms.front().z.has_value(); }
  std::size_t x_dim() const { return arms.empty() ? 0 : arms.front().x.size(); }
  std::size_t z_dim() const { return hybrid() ? arms.front().z->size() : 0; }
  const ArmFeatures* find(std::string_view id) const;
  const ArmFeatures& at(std::string_view id) const;  // throws Error
};

/// One interaction of the logging policy with the world.
struct LoggedEvent {
  TrialContext context;
  ArmId chosen;
  double reward = 0.0;
  double propensity = 0.0;
  // Ground-truth payoffs for every arm; only synthetic streams carry it and
  // neither policies nor the replay estimate read it.
  std::optional<std::map<ArmId, double>> hidden;
};

struct HistoryRecord {
  TrialContext context;
  ArmId chosen;
  double reward = 0.0;
};

/// Append-only record of retained trials.
class History {
 public:
  void append(HistoryRecord record) { records_.push_back(std::move(record)); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<HistoryRecord>& records() const { return records_; }

 private:
  std::vector<HistoryRecord> records_;
};

/// Returns ctx unchanged when every TrialContext invariant holds, throws
/// Error otherwise.
const TrialContext& validate_trial(const TrialContext& ctx);

bool all_finite(std::span<const double> v);

/// Parses one line of the event log. A missing propensity defaults to 1/K.
LoggedEvent parse_event_line(std::string_view line);

/// Canonical single-line form: fixed field order, 17 significant digits.
std::string serialize_event(const LoggedEvent& event);

/// Pull-based event stream. The returned pointer stays valid until the next
/// call; nullptr marks the end of the stream.
class EventSource {
 public:
  virtual ~EventSource() = default;
  virtual const LoggedEvent* next() = 0;
};

class SpanEventSource final : public EventSource {
 public:
  explicit SpanEventSource(std::span<const LoggedEvent> events) : events_(events) {}
  const LoggedEvent* next() override {
    return pos_ < events_.size() ? &events_[pos_++] : nullptr;
  }

 private:
  std::span<const LoggedEvent> events_;
  std::size_t pos_ = 0;
};

/// Reads an event log line by line.
class FileEventSource final : public EventSource {
 public:
  explicit FileEventSource(const std::string& path);
  ~FileEventSource() override;
  const LoggedEvent* next() override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<LoggedEvent> read_events(const std::string& path);
void write_events(const std::string& path, std::span<const LoggedEvent> events);

/// Shortest text of a double with 17 significant digits ("%.17g").
std::string format_real(double v);

/// Deterministic random source. All randomized operations in the toolkit take
/// an Rng; identical seed and inputs give identical outputs on every
/// platform. The engine is std::mt19937_64 (fully specified by the standard);
/// the distributions are implemented here because <random>'s are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  std::size_t below(std::size_t n);      // uniform in [0, n)
  double normal();                       // standard normal
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent generator derived from this generator's seed and tag;
  /// does not advance this generator.
  Rng fork(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace cbandit
