#include "ebnn/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace ebnn::config {
namespace {

using sensors::Channel;

double parse_double(const std::string& text, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(key + ": not a number: '" + text + "'");
  return v;
}

template <class Int>
Int parse_integer(const std::string& text, const std::string& key) {
  Int v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(key + ": not an integer: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;

  std::string path() const { return section + "." + key; }
};

Field real(std::string s, std::string k, double& v) {
  std::string name = s + "." + k;
  return {s, k, [&v] { return format_double(v); },
          [&v, name](const std::string& t) { v = parse_double(t, name); }};
}

Field integer(std::string s, std::string k, int& v) {
  std::string name = s + "." + k;
  return {s, k, [&v] { return std::to_string(v); },
          [&v, name](const std::string& t) { v = parse_integer<int>(t, name); }};
}

Field boolean(std::string s, std::string k, bool& v) {
  std::string name = s + "." + k;
  return {s, k, [&v] { return std::string(v ? "true" : "false"); },
          [&v, name](const std::string& t) { v = parse_bool(t, name); }};
}

std::vector<Field> learner_fields(const std::string& s, LearnerConfig& l) {
  std::string name = s + ".hidden_widths";
  return {
      {s, "hidden_widths",
       [&l] {
         std::string out;
         for (std::size_t i = 0; i < l.hidden_widths.size(); ++i)
           out += (i ? "," : "") + std::to_string(l.hidden_widths[i]);
         return out;
       },
       [&l, name](const std::string& t) {
         l.hidden_widths.clear();
         for (const std::string& w : split(t, ',')) l.hidden_widths.push_back(parse_integer<int>(w, name));
       }},
      real(s, "dropout_rate", l.dropout_rate),
      {s, "dropout_mode",
       [&l] { return std::string(l.dropout_mode == nn::DropoutMode::fixed ? "fixed" : "concrete"); },
       [&l, s](const std::string& t) {
         if (t == "fixed")
           l.dropout_mode = nn::DropoutMode::fixed;
         else if (t == "concrete")
           l.dropout_mode = nn::DropoutMode::concrete;
         else
           throw ConfigError(s + ".dropout_mode: expected fixed or concrete, got '" + t + "'");
       }},
      real(s, "concrete_temperature", l.concrete_temperature),
      integer(s, "epochs", l.train.epochs),
      integer(s, "batch_size", l.train.batch_size),
      real(s, "learning_rate", l.train.adam.learning_rate),
      real(s, "beta1", l.train.adam.beta1),
      real(s, "beta2", l.train.adam.beta2),
      real(s, "epsilon", l.train.adam.epsilon),
      real(s, "length_scale", l.train.length_scale),
  };
}

std::vector<Field> fields(ExperimentConfig& c, int& schema) {
  std::vector<Field> f = {
      integer("experiment", "schema_version", schema),
      {"experiment", "seed", [&c] { return std::to_string(c.seed); },
       [&c](const std::string& t) { c.seed = parse_integer<std::uint64_t>(t, "experiment.seed"); }},

      real("track", "straight_length", c.track.straight_length),
      real("track", "turn_radius", c.track.turn_radius),
      real("track", "half_width", c.track.half_width),
      {"track", "direction",
       [&c] {
         return std::string(c.track.direction == track::Direction::counterclockwise ? "counterclockwise"
                                                                                   : "clockwise");
       },
       [&c](const std::string& t) {
         if (t == "counterclockwise")
           c.track.direction = track::Direction::counterclockwise;
         else if (t == "clockwise")
           c.track.direction = track::Direction::clockwise;
         else
           throw ConfigError("track.direction: expected counterclockwise or clockwise, got '" + t + "'");
       }},

      real("vehicle", "wheelbase", c.vehicle.wheelbase),
      real("vehicle", "max_steer", c.vehicle.max_steer),
      real("vehicle", "max_speed", c.vehicle.max_speed),
      real("vehicle", "velocity_tau", c.vehicle.velocity_tau),

      real("simulation", "dt", c.dt),
      real("simulation", "start_speed", c.start_speed),

      real("cost", "w_lateral", c.cost.w_lateral),
      real("cost", "w_velocity", c.cost.w_velocity),
      real("cost", "v_des", c.cost.v_des),
      real("cost", "w_control", c.cost.w_control),

      integer("ddp", "horizon", c.ddp.horizon),
      integer("ddp", "max_iterations", c.ddp.max_iterations),
      real("ddp", "lambda_init", c.ddp.lambda_init),
      real("ddp", "lambda_growth", c.ddp.lambda_growth),
      real("ddp", "lambda_shrink", c.ddp.lambda_shrink),
      real("ddp", "lambda_min", c.ddp.lambda_min),
      real("ddp", "lambda_max", c.ddp.lambda_max),
      integer("ddp", "line_search_steps", c.ddp.line_search_steps),
      real("ddp", "convergence_tol", c.ddp.convergence_tol),

      integer("rays", "ray_count", c.sensors.rays.ray_count),
      {"rays", "fan_angle_deg", [&c] { return format_double(c.sensors.rays.fan_angle * 180.0 / kPi); },
       [&c](const std::string& t) {
         c.sensors.rays.fan_angle = parse_double(t, "rays.fan_angle_deg") * kPi / 180.0;
       }},
      real("rays", "max_range", c.sensors.rays.max_range),
      integer("rays", "band_block", c.sensors.rays.band_block),
      integer("rays", "band_stride", c.sensors.rays.band_stride),

      real("gps_fault", "min_offset_factor", c.sensors.gps.min_offset_factor),
      real("gps_fault", "max_offset_factor", c.sensors.gps.max_offset_factor),

      integer("collection", "laps", c.collection.laps),
      real("collection", "steering_noise", c.collection.steering_noise),
      real("collection", "throttle_noise", c.collection.throttle_noise),
      real("collection", "noise_time_constant", c.collection.noise_time_constant),
  };
  for (Channel ch : sensors::kChannels) {
    auto lf = learner_fields("learner_" + std::string(sensors::channel_name(ch)),
                             c.learners[sensors::index(ch)]);
    f.insert(f.end(), lf.begin(), lf.end());
  }
  std::vector<Field> rest = {
      integer("schedule", "laps", c.schedule.laps),
      integer("schedule", "clean_prefix_laps", c.schedule.clean_prefix_laps),
      integer("schedule", "window_laps", c.schedule.window_laps),
      integer("schedule", "gap_laps", c.schedule.gap_laps),
      {"schedule", "windows",
       [&c] {
         std::string out;
         for (std::size_t i = 0; i < c.schedule.windows.size(); ++i)
           out += (i ? ";" : "") + window_label(c.schedule.windows[i]);
         return out;
       },
       [&c](const std::string& t) {
         c.schedule.windows.clear();
         if (t.empty()) return;
         for (const std::string& w : split(t, ';')) c.schedule.windows.push_back(parse_window_label(w));
       }},
      real("schedule", "lap_time", c.schedule.lap_time),
      real("schedule", "duty_cycle", c.schedule.duty_cycle),
      real("schedule", "burst_period", c.schedule.burst_period),

      integer("run", "mc_samples", c.run.mc_samples),
      {"run", "execution",
       [&c] {
         return std::string(c.run.execution == ensemble::Execution::concurrent ? "concurrent"
                                                                               : "sequential");
       },
       [&c](const std::string& t) {
         if (t == "concurrent")
           c.run.execution = ensemble::Execution::concurrent;
         else if (t == "sequential")
           c.run.execution = ensemble::Execution::sequential;
         else
           throw ConfigError("run.execution: expected concurrent or sequential, got '" + t + "'");
       }},
      real("run", "stall_timeout", c.run.stall_timeout),
      boolean("run", "concurrent_training", c.run.concurrent_training),
  };
  f.insert(f.end(), rest.begin(), rest.end());
  return f;
}

}  // namespace

void CollectionConfig::validate() const {
  if (laps < 0) throw ConfigError("collection.laps must be >= 0");
  if (!(steering_noise >= 0.0) || !(throttle_noise >= 0.0))
    throw ConfigError("collection: noise levels must be >= 0");
  if (!(noise_time_constant > 0.0)) throw ConfigError("collection.noise_time_constant must be > 0");
}

nn::MlpSpec LearnerConfig::spec(int input_dim) const {
  nn::MlpSpec s;
  s.input_dim = input_dim;
  s.hidden_widths = hidden_widths;
  s.output_dim = 2;
  s.dropout_rate = dropout_rate;
  s.dropout_mode = dropout_mode;
  s.concrete_temperature = concrete_temperature;
  return s;
}

void LearnerConfig::validate() const {
  spec(1).validate();
  train.validate();
}

void ScheduleConfig::validate() const {
  if (laps < 1) throw ConfigError("schedule.laps must be >= 1");
  if (clean_prefix_laps < 0 || window_laps < 1 || gap_laps < 0)
    throw ConfigError("schedule: lap counts out of range");
  if (!(lap_time >= 0.0)) throw ConfigError("schedule.lap_time must be >= 0");
  if (!(duty_cycle > 0.0) || duty_cycle > 1.0) throw ConfigError("schedule.duty_cycle must be in (0, 1]");
  if (!(burst_period > 0.0)) throw ConfigError("schedule.burst_period must be > 0");
  for (const auto& w : windows)
    if (w.empty()) throw ConfigError("schedule.windows: empty window");
}

void RunConfig::validate() const {
  if (mc_samples < 1) throw ConfigError("run.mc_samples must be >= 1");
  if (!(stall_timeout > 0.0)) throw ConfigError("run.stall_timeout must be > 0");
}

ExperimentConfig::ExperimentConfig() { learners[sensors::index(Channel::state)].train.epochs = 400; }

void ExperimentConfig::validate() const {
  track.validate();
  vehicle.validate();
  if (!(dt > 0.0)) throw ConfigError("simulation.dt must be > 0");
  if (!(start_speed >= 0.0) || !std::isfinite(start_speed))
    throw ConfigError("simulation.start_speed must be finite and >= 0");
  cost.validate();
  solver_config().validate();
  sensors.validate();
  collection.validate();
  for (const auto& l : learners) l.validate();
  schedule.validate();
  run.validate();
}

ddp::DdpConfig ExperimentConfig::solver_config() const {
  ddp::DdpConfig d = ddp;
  d.dt = dt;
  return d;
}

double ExperimentConfig::lap_time() const {
  if (schedule.lap_time > 0.0) return schedule.lap_time;
  if (!(cost.v_des > 0.0)) throw ConfigError("schedule.lap_time is required when cost.v_des <= 0");
  return track.length() / cost.v_des;
}

track::VehicleState ExperimentConfig::initial_state() const {
  track::VehicleState x = track::start_state(track);
  x.V_x = start_speed;
  return x;
}

std::string window_label(const std::vector<Channel>& channels) {
  std::string out;
  for (std::size_t i = 0; i < channels.size(); ++i)
    out += (i ? "+" : "") + std::string(sensors::channel_name(channels[i]));
  return out;
}

std::vector<Channel> parse_window_label(const std::string& label) {
  std::vector<Channel> out;
  for (const std::string& name : split(label, '+')) {
    Channel c = sensors::parse_channel(name);
    for (Channel seen : out)
      if (seen == c) throw ConfigError("schedule.windows: channel repeated in '" + label + "'");
    out.push_back(c);
  }
  if (out.empty()) throw ConfigError("schedule.windows: empty window label");
  return out;
}

std::pair<std::string, std::string> split_override(const std::string& text) {
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

ExperimentConfig parse(const std::string& ini_text,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  namespace pt = boost::property_tree;
  ExperimentConfig cfg;
  int schema = kSchemaVersion;
  std::vector<Field> table = fields(cfg, schema);
  auto find = [&](const std::string& path) -> Field& {
    for (Field& f : table)
      if (f.path() == path) return f;
    throw ConfigError("unknown configuration key '" + path + "'");
  };

  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!tree.empty()) {
    auto version = tree.get_optional<std::string>("experiment.schema_version");
    if (!version) throw ConfigError("config: missing experiment.schema_version");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' outside of a section");
    for (const auto& [key, value] : body) find(section + "." + key).set(value.data());
  }
  for (const auto& [key, value] : overrides) find(key).set(value);
  if (schema != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(schema) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  cfg.validate();
  return cfg;
}

ExperimentConfig load(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), overrides);
}

std::string serialize(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  int schema = kSchemaVersion;
  std::string out, section;
  for (const Field& f : fields(copy, schema)) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

std::string content_hash(const ExperimentConfig& config) {
  std::string text = serialize(config);
  std::string blob = "blob " + std::to_string(text.size()) + std::string(1, '\0') + text;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("content_hash: SHA-1 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace ebnn::config
