#include "ebnn/io.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace ebnn::io {
namespace {

using nlohmann::json;
using sensors::Channel;

const char* const kStateColumns[] = {"p_x", "p_y", "theta", "psi", "V_x", "V_y", "theta_dot"};
const char* const kStateUnits = "m,m,rad,rad,m/s,m/s,rad/s";

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw FormatError(what + ": not a number: '" + text + "'");
  return v;
}

template <typename T>
T parse_integer(const std::string& text, const std::string& what) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw FormatError(what + ": not an integer: '" + text + "'");
  return v;
}

// Non-finite values travel as strings so they survive a JSON round trip.
json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double number(const json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_double(j.get<std::string>(), what);
  throw FormatError(what + ": expected a number");
}

json numbers(const double* data, std::size_t n) {
  json a = json::array();
  for (std::size_t i = 0; i < n; ++i) a.push_back(number(data[i]));
  return a;
}

std::vector<double> numbers(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const json& v : j) out.push_back(number(v, what));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::vector<std::string> observation_columns(Channel c, int dims) {
  std::vector<std::string> cols;
  if (c == Channel::state) {
    cols.assign(std::begin(kStateColumns), std::end(kStateColumns));
  } else {
    for (int i = 0; i < dims; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "r%02d", i);
      cols.emplace_back(buf);
    }
  }
  return cols;
}

template <typename F>
const json& field(const json& j, const char* key, F&& what) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(what() + ": missing '" + key + "'");
  return *it;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string dataset_filename(Channel c) { return "dataset_" + std::string(sensors::channel_name(c)) + ".csv"; }
std::string checkpoint_filename(Channel c) {
  return "checkpoint_" + std::string(sensors::channel_name(c)) + ".json";
}
std::string loss_filename(Channel c) { return "loss_" + std::string(sensors::channel_name(c)) + ".csv"; }

std::string dataset_csv(const harness::ChannelDataset& data, const config::ExperimentConfig& config) {
  const int dims = harness::observation_dim(data.channel, config);
  if (data.observations.cols() != dims && data.observations.rows() > 0)
    throw FormatError("dataset: observation width does not match the channel");
  if (data.controls.rows() != data.observations.rows())
    throw FormatError("dataset: observation and control row counts differ");
  std::string units = data.channel == Channel::state
                          ? kStateUnits
                          : "m (" + std::to_string(dims) + " ray ranges)";
  std::ostringstream out;
  out << "# channel: " << sensors::channel_name(data.channel) << "\n";
  out << "# dims: " << dims << "\n";
  out << "# units: " << units << "; controls normalized to [-1,1]\n";
  out << "# seed: " << config.seed << "\n";
  out << "# config_hash: " << config::content_hash(config) << "\n";
  std::vector<std::string> cols = observation_columns(data.channel, dims);
  cols.emplace_back("steering");
  cols.emplace_back("throttle");
  out << join(cols) << "\n";
  for (Eigen::Index r = 0; r < data.observations.rows(); ++r) {
    for (Eigen::Index c = 0; c < dims; ++c) out << format_double(data.observations(r, c)) << ",";
    out << format_double(data.controls(r, 0)) << "," << format_double(data.controls(r, 1)) << "\n";
  }
  return out.str();
}

harness::ChannelDataset parse_dataset_csv(const std::string& text, DatasetHeader* header) {
  DatasetHeader h;
  std::map<std::string, std::string> meta;
  std::istringstream in(text);
  std::string line;
  bool have_columns = false;
  std::vector<double> flat, labels;
  long row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string key = line.substr(1, colon - 1), value = line.substr(colon + 1);
      key.erase(0, key.find_first_not_of(' '));
      value.erase(0, value.find_first_not_of(' '));
      meta[key] = value;
      continue;
    }
    if (!have_columns) {
      for (const char* k : {"channel", "dims", "seed", "config_hash"})
        if (!meta.count(k)) throw FormatError(std::string("dataset: missing header '") + k + "'");
      try {
        h.channel = sensors::parse_channel(meta["channel"]);
      } catch (const ConfigError& e) {
        throw FormatError(std::string("dataset: ") + e.what());
      }
      h.dims = parse_integer<int>(meta["dims"], "dataset dims");
      h.units = meta["units"];
      h.seed = parse_integer<std::uint64_t>(meta["seed"], "dataset seed");
      h.config_hash = meta["config_hash"];
      std::vector<std::string> expected = observation_columns(h.channel, h.dims);
      expected.emplace_back("steering");
      expected.emplace_back("throttle");
      if (line != join(expected)) throw FormatError("dataset: unexpected column header");
      have_columns = true;
      continue;
    }
    ++row;
    std::vector<std::string> cells = split(line, ',');
    if (static_cast<int>(cells.size()) != h.dims + 2)
      throw FormatError("dataset row " + std::to_string(row) + ": expected " +
                        std::to_string(h.dims + 2) + " values");
    for (int c = 0; c < h.dims; ++c) flat.push_back(parse_double(cells[c], "dataset"));
    labels.push_back(parse_double(cells[h.dims], "dataset"));
    labels.push_back(parse_double(cells[h.dims + 1], "dataset"));
  }
  if (!have_columns) throw FormatError("dataset: no column header");
  harness::ChannelDataset d;
  d.channel = h.channel;
  d.observations.resize(row, h.dims);
  d.controls.resize(row, 2);
  for (long r = 0; r < row; ++r) {
    for (int c = 0; c < h.dims; ++c) d.observations(r, c) = flat[r * h.dims + c];
    d.controls(r, 0) = labels[2 * r];
    d.controls(r, 1) = labels[2 * r + 1];
  }
  if (header) *header = h;
  return d;
}

std::string checkpoint_json(const harness::Learner& l, const config::ExperimentConfig& config) {
  const nn::MlpSpec& s = l.net.spec();
  json j;
  j["format"] = "ebnn-checkpoint";
  j["version"] = kCheckpointVersion;
  j["channel"] = std::string(sensors::channel_name(l.channel));
  j["seed"] = l.seed;
  j["config_hash"] = config::content_hash(config);
  j["spec"] = {{"input_dim", s.input_dim},
               {"hidden_widths", s.hidden_widths},
               {"output_dim", s.output_dim},
               {"activation", "relu"},
               {"dropout_rate", number(s.dropout_rate)},
               {"dropout_mode", s.dropout_mode == nn::DropoutMode::fixed ? "fixed" : "concrete"},
               {"concrete_temperature", number(s.concrete_temperature)}};
  j["standardizer"] = {{"mean", numbers(l.net.input_norm.mean.data(), l.net.input_norm.mean.size())},
                       {"scale", numbers(l.net.input_norm.scale.data(), l.net.input_norm.scale.size())}};
  auto values = l.net.params.values();
  j["parameters"] = numbers(values.data(), values.size());
  j["loss_history"] = numbers(l.loss_history.data(), l.loss_history.size());
  return j.dump() + "\n";
}

harness::Learner parse_checkpoint_json(const std::string& text, std::string* config_hash) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  auto what = [] { return std::string("checkpoint"); };
  if (field(j, "format", what) != "ebnn-checkpoint") throw FormatError("checkpoint: wrong format tag");
  const int version = field(j, "version", what).get<int>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  harness::Learner l;
  try {
    l.channel = sensors::parse_channel(field(j, "channel", what).get<std::string>());
    l.seed = field(j, "seed", what).get<std::uint64_t>();
    if (config_hash) *config_hash = field(j, "config_hash", what).get<std::string>();
    const json& js = field(j, "spec", what);
    nn::MlpSpec s;
    s.input_dim = field(js, "input_dim", what).get<int>();
    s.hidden_widths = field(js, "hidden_widths", what).get<std::vector<int>>();
    s.output_dim = field(js, "output_dim", what).get<int>();
    if (field(js, "activation", what) != "relu") throw FormatError("checkpoint: unknown activation");
    s.dropout_rate = number(field(js, "dropout_rate", what), "dropout_rate");
    const std::string mode = field(js, "dropout_mode", what).get<std::string>();
    if (mode != "fixed" && mode != "concrete") throw FormatError("checkpoint: unknown dropout mode");
    s.dropout_mode = mode == "fixed" ? nn::DropoutMode::fixed : nn::DropoutMode::concrete;
    s.concrete_temperature = number(field(js, "concrete_temperature", what), "concrete_temperature");
    s.validate();

    std::vector<double> values = numbers(field(j, "parameters", what), "parameters");
    if (values.size() != s.parameter_count())
      throw FormatError("checkpoint: expected " + std::to_string(s.parameter_count()) +
                        " parameters, found " + std::to_string(values.size()));
    l.net.params = nn::NetworkParams(s);
    std::copy(values.begin(), values.end(), l.net.params.values().begin());

    const json& jn = field(j, "standardizer", what);
    std::vector<double> mean = numbers(field(jn, "mean", what), "standardizer mean");
    std::vector<double> scale = numbers(field(jn, "scale", what), "standardizer scale");
    if (static_cast<int>(mean.size()) != s.input_dim || static_cast<int>(scale.size()) != s.input_dim)
      throw FormatError("checkpoint: standardizer width does not match the input");
    l.net.input_norm.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), mean.size());
    l.net.input_norm.scale = Eigen::Map<Eigen::VectorXd>(scale.data(), scale.size());
    l.loss_history = numbers(field(j, "loss_history", what), "loss_history");
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return l;
}

std::string loss_csv(const harness::Learner& l) {
  std::ostringstream out;
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < l.loss_history.size(); ++e)
    out << e + 1 << "," << format_double(l.loss_history[e]) << "\n";
  return out.str();
}

std::string trajectory_csv(const std::vector<harness::TrajectoryRow>& rows) {
  std::ostringstream out;
  out << "step,t,p_x,p_y,theta,V_x,V_y,theta_dot,steering,throttle,lap,crashed\n";
  for (const auto& r : rows) {
    const auto& x = r.state;
    out << r.step << "," << format_double(r.t) << "," << format_double(x.p_x) << ","
        << format_double(x.p_y) << "," << format_double(x.theta) << "," << format_double(x.V_x) << ","
        << format_double(x.V_y) << "," << format_double(x.theta_dot) << ","
        << format_double(r.control.steering) << "," << format_double(r.control.throttle) << ","
        << r.lap << "," << (r.crashed ? 1 : 0) << "\n";
  }
  return out.str();
}

std::vector<harness::TrajectoryRow> parse_trajectory_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,t,p_x,p_y,theta,V_x,V_y,theta_dot,steering,throttle,lap,crashed")
    throw FormatError("trajectory: unexpected header");
  std::vector<harness::TrajectoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c = split(line, ',');
    if (c.size() != 12) throw FormatError("trajectory: expected 12 columns in '" + line + "'");
    harness::TrajectoryRow r;
    r.step = parse_integer<int>(c[0], "trajectory step");
    r.t = parse_double(c[1], "trajectory t");
    r.state.p_x = parse_double(c[2], "trajectory");
    r.state.p_y = parse_double(c[3], "trajectory");
    r.state.theta = parse_double(c[4], "trajectory");
    r.state.V_x = parse_double(c[5], "trajectory");
    r.state.V_y = parse_double(c[6], "trajectory");
    r.state.theta_dot = parse_double(c[7], "trajectory");
    r.control.steering = parse_double(c[8], "trajectory");
    r.control.throttle = parse_double(c[9], "trajectory");
    r.lap = parse_integer<int>(c[10], "trajectory lap");
    const int crashed = parse_integer<int>(c[11], "trajectory crashed");
    if (crashed != 0 && crashed != 1) throw FormatError("trajectory: crashed must be 0 or 1");
    r.crashed = crashed == 1;
    rows.push_back(r);
  }
  return rows;
}

std::string events_jsonl(const harness::RunLog& log) {
  std::ostringstream out;
  json start;
  start["event"] = "run_start";
  start["mode"] = log.mode;
  start["seed"] = log.seed;
  start["lap_budget"] = log.lap_budget;
  start["windows"] = json::array();
  for (const auto& w : log.windows) {
    json jw;
    jw["label"] = w.label;
    jw["channels"] = json::array();
    for (Channel c : w.channels) jw["channels"].push_back(std::string(sensors::channel_name(c)));
    jw["start"] = number(w.start);
    jw["end"] = number(w.end);
    start["windows"].push_back(jw);
  }
  out << start.dump() << "\n";

  std::size_t next_fault = 0, next_lap = 0;
  for (const auto& d : log.decisions) {
    while (next_fault < log.faults.size() && log.faults[next_fault].step <= d.step) {
      const auto& f = log.faults[next_fault++];
      out << json{{"event", "fault"},
                  {"step", f.step},
                  {"t", number(f.t)},
                  {"channel", std::string(sensors::channel_name(f.channel))},
                  {"active", f.active}}
                 .dump()
          << "\n";
    }
    json jd;
    jd["event"] = "decision";
    jd["step"] = d.step;
    jd["t"] = number(d.t);
    jd["lap"] = d.lap;
    jd["window"] = d.window;
    jd["selected"] = d.selected;
    jd["control"] = json::array({number(d.control.steering), number(d.control.throttle)});
    jd["learners"] = json::array();
    for (Channel c : sensors::kChannels) {
      const int i = sensors::index(c);
      jd["learners"].push_back({{"channel", std::string(sensors::channel_name(c))},
                                {"fault", d.fault[i]},
                                {"active", d.active[i]},
                                {"valid", d.valid[i]},
                                {"mean", json::array({number(d.mean[i].steering), number(d.mean[i].throttle)})},
                                {"epistemic", number(d.epistemic[i])},
                                {"aleatoric", number(d.aleatoric[i])},
                                {"total", number(d.total[i])},
                                {"observation", numbers(d.observation[i].data(), d.observation[i].size())}});
    }
    out << jd.dump() << "\n";
    while (next_lap < log.laps.size() && log.laps[next_lap].step <= d.step) {
      const auto& l = log.laps[next_lap++];
      out << json{{"event", "lap"}, {"lap", l.lap}, {"step", l.step}, {"t", number(l.t)}}.dump() << "\n";
    }
  }
  if (log.outcome == harness::Outcome::crashed) {
    const int step = log.decisions.empty() ? 0 : log.decisions.back().step;
    out << json{{"event", "crash"}, {"step", step}, {"t", number(log.end_time)}, {"lap", log.laps_completed}}
               .dump()
        << "\n";
  }
  out << json{{"event", "end"},
              {"outcome", harness::outcome_name(log.outcome)},
              {"laps_completed", log.laps_completed},
              {"end_time", number(log.end_time)}}
             .dump()
      << "\n";
  return out.str();
}

harness::RunLog parse_events_jsonl(const std::string& text) {
  harness::RunLog log;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool started = false, ended = false, crash_event = false;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto what = [line_no] { return "events line " + std::to_string(line_no); };
      if (ended) throw FormatError(what() + ": content after the end event");
      json j = json::parse(line);
      const std::string ev = field(j, "event", what).get<std::string>();
      if (!started && ev != "run_start") throw FormatError(what() + ": expected run_start first");
      if (ev == "run_start") {
        if (started) throw FormatError(what() + ": duplicate run_start");
        started = true;
        log.mode = field(j, "mode", what).get<std::string>();
        log.seed = field(j, "seed", what).get<std::uint64_t>();
        log.lap_budget = field(j, "lap_budget", what).get<int>();
        for (const json& jw : field(j, "windows", what)) {
          harness::ScheduledWindow w;
          w.label = field(jw, "label", what).get<std::string>();
          for (const json& c : field(jw, "channels", what))
            w.channels.push_back(sensors::parse_channel(c.get<std::string>()));
          w.start = number(field(jw, "start", what), what());
          w.end = number(field(jw, "end", what), what());
          log.windows.push_back(std::move(w));
        }
      } else if (ev == "fault") {
        log.faults.push_back({sensors::parse_channel(field(j, "channel", what).get<std::string>()),
                              field(j, "active", what).get<bool>(), field(j, "step", what).get<int>(),
                              number(field(j, "t", what), what())});
      } else if (ev == "decision") {
        harness::DecisionRecord d;
        d.step = field(j, "step", what).get<int>();
        d.t = number(field(j, "t", what), what());
        d.lap = field(j, "lap", what).get<int>();
        d.window = field(j, "window", what).get<std::string>();
        d.selected = field(j, "selected", what).get<int>();
        std::vector<double> u = numbers(field(j, "control", what), what());
        if (u.size() != 2) throw FormatError(what() + ": control must have 2 entries");
        d.control = {u[0], u[1]};
        const json& ls = field(j, "learners", what);
        if (!ls.is_array() || ls.size() != sensors::kChannelCount)
          throw FormatError(what() + ": expected one entry per learner");
        for (const json& jl : ls) {
          const int i = sensors::index(sensors::parse_channel(field(jl, "channel", what).get<std::string>()));
          d.fault[i] = field(jl, "fault", what).get<bool>();
          d.active[i] = field(jl, "active", what).get<bool>();
          d.valid[i] = field(jl, "valid", what).get<bool>();
          std::vector<double> m = numbers(field(jl, "mean", what), what());
          if (m.size() != 2) throw FormatError(what() + ": mean must have 2 entries");
          d.mean[i] = {m[0], m[1]};
          d.epistemic[i] = number(field(jl, "epistemic", what), what());
          d.aleatoric[i] = number(field(jl, "aleatoric", what), what());
          d.total[i] = number(field(jl, "total", what), what());
          d.observation[i] = numbers(field(jl, "observation", what), what());
        }
        if (d.selected < -1 || d.selected >= sensors::kChannelCount)
          throw FormatError(what() + ": selected index out of range");
        log.decisions.push_back(std::move(d));
      } else if (ev == "lap") {
        const int lap = field(j, "lap", what).get<int>();
        if (!log.laps.empty() && lap <= log.laps.back().lap)
          throw FormatError(what() + ": lap boundaries must increase");
        log.laps.push_back({lap, field(j, "step", what).get<int>(), number(field(j, "t", what), what())});
      } else if (ev == "crash") {
        crash_event = true;
      } else if (ev == "end") {
        ended = true;
        log.outcome = harness::parse_outcome(field(j, "outcome", what).get<std::string>());
        log.laps_completed = field(j, "laps_completed", what).get<int>();
        log.end_time = number(field(j, "end_time", what), what());
      } else {
        throw FormatError(what() + ": unknown event '" + ev + "'");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("events line " + std::to_string(line_no) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError("events line " + std::to_string(line_no) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("events line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!ended) throw FormatError("events: missing end event");
  if (crash_event != (log.outcome == harness::Outcome::crashed))
    throw FormatError("events: crash event and end outcome disagree");
  return log;
}

void write_run(const fs::path& dir, const harness::RunLog& log) {
  fs::create_directories(dir);
  write_text(dir / kTrajectoryFile, trajectory_csv(log.trajectory));
  write_text(dir / kEventsFile, events_jsonl(log));
}

harness::RunLog read_run(const fs::path& dir) {
  harness::RunLog log = parse_events_jsonl(read_text(dir / kEventsFile));
  log.trajectory = parse_trajectory_csv(read_text(dir / kTrajectoryFile));
  const bool crash_row = !log.trajectory.empty() && log.trajectory.back().crashed;
  if (crash_row != (log.outcome == harness::Outcome::crashed))
    throw FormatError("run: trajectory crash flag and event log disagree");
  return log;
}

}  // namespace ebnn::io
