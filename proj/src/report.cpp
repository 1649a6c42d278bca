#include "ebnn/report.hpp"

#include <spdlog/spdlog.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "ebnn/io.hpp"

namespace ebnn::report {
namespace {

using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

UsageRow tally(const std::string& group, const std::vector<const harness::DecisionRecord*>& ds) {
  UsageRow row;
  row.group = group;
  std::array<int, sensors::kChannelCount> counts{};
  for (const auto* d : ds) {
    if (d->selected < 0 || d->selected >= sensors::kChannelCount) continue;
    ++counts[d->selected];
    ++row.steps;
  }
  for (int i = 0; i < sensors::kChannelCount; ++i)
    row.percent[i] = row.steps > 0 ? 100.0 * counts[i] / row.steps : 0.0;
  return row;
}

UsageTable build(const std::vector<std::pair<std::string, std::vector<const harness::DecisionRecord*>>>& groups,
                 const char* kind) {
  UsageTable table;
  for (const auto& [name, ds] : groups) {
    UsageRow row = tally(name, ds);
    if (row.steps == 0) {
      spdlog::warn("usage: {} '{}' has no attributed steps; excluded", kind, name);
      continue;
    }
    table.push_back(row);
  }
  return table;
}

std::vector<std::string> window_order(const RunLog& log) {
  std::vector<std::string> order{harness::kCleanLabel};
  for (const auto& w : log.windows)
    if (std::find(order.begin(), order.end(), w.label) == order.end()) order.push_back(w.label);
  for (const auto& d : log.decisions)
    if (std::find(order.begin(), order.end(), d.window) == order.end()) order.push_back(d.window);
  return order;
}

double percent_of(const RunLog& log, const std::string& window, int learner) {
  int steps = 0, hits = 0;
  for (const auto& d : log.decisions) {
    if (d.window != window || d.selected < 0) continue;
    ++steps;
    hits += d.selected == learner;
  }
  return steps > 0 ? 100.0 * hits / steps : kNaN;
}

std::vector<double> totals(const RunLog& log, int learner, const std::string& window) {
  std::vector<double> v;
  for (const auto& d : log.decisions)
    if (d.window == window) v.push_back(d.total[learner]);
  return v;
}

json quantile_json(const Quantiles& q) {
  return {{"count", q.count}, {"q05", number(q.q05)}, {"q25", number(q.q25)}, {"q50", number(q.q50)},
          {"q75", number(q.q75)}, {"q95", number(q.q95)}};
}

json usage_json(const UsageTable& t) {
  json a = json::array();
  for (const auto& r : t) {
    json p = json::object();
    for (Channel c : sensors::kChannels)
      p[std::string(sensors::channel_name(c))] = number(r.percent[sensors::index(c)]);
    a.push_back({{"group", r.group}, {"steps", r.steps}, {"percent", p}});
  }
  return a;
}

}  // namespace

UsageTable usage_by_lap(const RunLog& log) {
  std::map<int, std::vector<const harness::DecisionRecord*>> by_lap;
  int last = -1;
  for (const auto& d : log.decisions) {
    by_lap[d.lap].push_back(&d);
    last = std::max(last, d.lap);
  }
  std::vector<std::pair<std::string, std::vector<const harness::DecisionRecord*>>> groups;
  for (int lap = 0; lap <= last; ++lap) groups.emplace_back(std::to_string(lap + 1), by_lap[lap]);
  return build(groups, "lap");
}

UsageTable usage_by_window(const RunLog& log) {
  std::vector<std::pair<std::string, std::vector<const harness::DecisionRecord*>>> groups;
  for (const std::string& label : window_order(log)) {
    std::vector<const harness::DecisionRecord*> ds;
    for (const auto& d : log.decisions)
      if (d.window == label) ds.push_back(&d);
    if (!ds.empty()) groups.emplace_back(label, std::move(ds));  // windows after the run ended
  }
  return build(groups, "window");
}

std::string usage_csv(const UsageTable& table) {
  std::ostringstream out;
  out << "group,steps";
  for (Channel c : sensors::kChannels) out << "," << sensors::channel_name(c);
  out << "\n";
  for (const auto& r : table) {
    out << r.group << "," << r.steps;
    for (double p : r.percent) out << "," << format_double(p);
    out << "\n";
  }
  return out.str();
}

std::vector<Segment> segments(const RunLog& log) {
  std::map<int, const harness::DecisionRecord*> by_step;
  for (const auto& d : log.decisions) by_step[d.step] = &d;
  std::vector<Segment> out;
  for (const auto& row : log.trajectory) {
    auto it = by_step.find(row.step);
    const int learner = it == by_step.end() ? -1 : it->second->selected;
    const int lap = (it == by_step.end() ? row.lap : it->second->lap) + 1;
    if (out.empty() || out.back().learner != learner || out.back().lap != lap) {
      Segment s;
      s.index = static_cast<int>(out.size());
      s.lap = lap;
      s.learner = learner;
      out.push_back(std::move(s));
    }
    out.back().rows.push_back(row);
  }
  return out;
}

std::string segments_csv(const std::vector<Segment>& segs) {
  std::ostringstream out;
  out << "segment,lap,learner,step,t,p_x,p_y,theta,V_x,V_y,theta_dot,steering,throttle,lap_after,crashed\n";
  for (const auto& s : segs) {
    std::string prefix = std::to_string(s.index) + "," + std::to_string(s.lap) + "," +
                         (s.learner < 0 ? std::string("none")
                                        : std::string(sensors::channel_name(static_cast<Channel>(s.learner)))) +
                         ",";
    // Reuse the trajectory row format without its header.
    std::string rows = io::trajectory_csv(s.rows);
    std::istringstream in(rows);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) out << prefix << line << "\n";
  }
  return out.str();
}

Quantiles quantiles(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }),
               values.end());
  Quantiles q;
  q.count = static_cast<int>(values.size());
  if (values.empty()) {
    q.q05 = q.q25 = q.q50 = q.q75 = q.q95 = kNaN;
    return q;
  }
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    const double pos = p * (values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - lo) * (values[hi] - values[lo]);
  };
  q.q05 = at(0.05);
  q.q25 = at(0.25);
  q.q50 = at(0.5);
  q.q75 = at(0.75);
  q.q95 = at(0.95);
  return q;
}

std::vector<WindowResponse> window_responses(const RunLog& log) {
  std::vector<WindowResponse> out;
  std::vector<std::string> seen;
  for (const auto& w : log.windows) {
    if (std::find(seen.begin(), seen.end(), w.label) != seen.end()) continue;
    seen.push_back(w.label);
    for (Channel c : w.channels) {
      const int i = sensors::index(c);
      WindowResponse r;
      r.window = w.label;
      r.channel = c;
      for (const auto& d : log.decisions) r.steps += d.window == w.label;
      r.clean_usage = percent_of(log, harness::kCleanLabel, i);
      r.window_usage = percent_of(log, w.label, i);
      r.clean_median = quantiles(totals(log, i, harness::kCleanLabel)).q50;
      r.window_median = quantiles(totals(log, i, w.label)).q50;
      r.ratio = r.window_median / r.clean_median;
      out.push_back(r);
    }
  }
  return out;
}

std::string summary_json(const RunLog& log) {
  json j;
  j["mode"] = log.mode;
  j["seed"] = log.seed;
  j["lap_budget"] = log.lap_budget;
  j["outcome"] = harness::outcome_name(log.outcome);
  j["crashed"] = log.outcome == harness::Outcome::crashed;
  j["laps_completed"] = log.laps_completed;
  j["end_time"] = number(log.end_time);
  j["steps"] = log.decisions.size();

  json var = json::object();
  for (Channel c : sensors::kChannels) {
    const int i = sensors::index(c);
    std::vector<double> clean, faulted;
    bool active = false;
    for (const auto& d : log.decisions) {
      active = active || d.active[i];
      if (d.fault[i])
        faulted.push_back(d.total[i]);
      else if (d.window == harness::kCleanLabel)
        clean.push_back(d.total[i]);
    }
    if (!active) continue;
    var[std::string(sensors::channel_name(c))] = {{"clean", quantile_json(quantiles(clean))},
                                                  {"faulted", quantile_json(quantiles(faulted))}};
  }
  j["total_variance"] = var;
  j["usage_by_window"] = usage_json(usage_by_window(log));
  j["usage_by_lap"] = usage_json(usage_by_lap(log));

  json resp = json::array();
  for (const auto& r : window_responses(log))
    resp.push_back({{"window", r.window},
                    {"channel", std::string(sensors::channel_name(r.channel))},
                    {"steps", r.steps},
                    {"clean_usage", number(r.clean_usage)},
                    {"window_usage", number(r.window_usage)},
                    {"clean_median_variance", number(r.clean_median)},
                    {"window_median_variance", number(r.window_median)},
                    {"variance_ratio", number(r.ratio)}});
  j["windows"] = resp;
  return j.dump(2) + "\n";
}

void emit_report(const std::filesystem::path& dir, const RunLog& log) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "segments.csv", segments_csv(segments(log)));
  io::write_text(dir / "usage_by_lap.csv", usage_csv(usage_by_lap(log)));
  io::write_text(dir / "usage_by_window.csv", usage_csv(usage_by_window(log)));
  io::write_text(dir / "summary.json", summary_json(log));
}

}  // namespace ebnn::report
