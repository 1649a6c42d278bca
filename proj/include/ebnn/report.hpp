#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ebnn/harness.hpp"

namespace ebnn::report {

using harness::RunLog;
using sensors::Channel;

/// Selection percentages of one group of decisions.
struct UsageRow {
  std::string group;
  int steps = 0;
  std::array<double, sensors::kChannelCount> percent{};
};

using UsageTable = std::vector<UsageRow>;

/// Groups decisions by the lap being driven (1-based). Groups without any
/// attributed step are left out with a warning.
UsageTable usage_by_lap(const RunLog& log);

/// Groups decisions by fault window label: clean first, then the windows in
/// schedule order. Windows the run never reached are omitted.
UsageTable usage_by_window(const RunLog& log);

std::string usage_csv(const UsageTable& table);

/// Consecutive trajectory rows driven by one learner within one lap.
struct Segment {
  int index = 0;
  int lap = 0;  // 1-based lap being driven
  int learner = -1;
  std::vector<harness::TrajectoryRow> rows;
};

/// Splits the trajectory wherever the selected learner or the lap changes.
/// Row k is attributed to the decision taken at step k.
std::vector<Segment> segments(const RunLog& log);

/// segment,lap,learner followed by the trajectory columns.
std::string segments_csv(const std::vector<Segment>& segs);

struct Quantiles {
  int count = 0;
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;  // NaN when count == 0
};

/// Linear-interpolation quantiles of the finite values.
Quantiles quantiles(std::vector<double> values);

/// Usage and variance of one faulted channel inside one window, against the
/// clean steps of the same run.
struct WindowResponse {
  std::string window;
  Channel channel = Channel::state;
  int steps = 0;
  double clean_usage = 0.0;  // percent
  double window_usage = 0.0;
  double clean_median = 0.0;  // total variance
  double window_median = 0.0;
  double ratio = 0.0;  // window_median / clean_median
};

std::vector<WindowResponse> window_responses(const RunLog& log);

/// Laps, outcome, per-learner variance quantiles on clean steps and on
/// steps where the learner's own sensor was faulted, usage tables and
/// window responses.
std::string summary_json(const RunLog& log);

/// Writes segments.csv, usage_by_lap.csv, usage_by_window.csv and
/// summary.json into `dir`.
void emit_report(const std::filesystem::path& dir, const RunLog& log);

}  // namespace ebnn::report
