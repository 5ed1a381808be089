#include "lidarmotion/config.hpp"

#include <fstream>
#include <json.hpp>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

using nlohmann::json;

TrainSchedule RunConfig::schedule() const {
  TrainSchedule s;
  s.iterations = train.iterations;
  s.batch_size = train.batch_size;
  s.lr = train.lr;
  s.halve_after = train.halve_after;
  s.halve_every = train.halve_every;
  s.hflip_augment = train.hflip;
  s.seed = train.seed;
  return s;
}

namespace {

// Collects every violation before failing so one run reports them all.
struct ConfigErrors {
  std::vector<std::string> problems;

  void add(const std::string& p) { problems.push_back(p); }

  void raise_if_any() const {
    if (problems.empty()) return;
    std::string msg = "invalid config";
    for (const auto& p : problems) msg += "; " + p;
    fail(ErrorCategory::config, msg);
  }
};

struct Reader {
  ConfigErrors& errors;

  void object(const json& j, const std::string& where,
              const std::vector<std::string>& keys) {
    if (!j.is_object()) {
      errors.add(where + ": expected an object");
      return;
    }
    for (const auto& [key, value] : j.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        errors.add(where + ": unknown key '" + key + "'");
      }
    }
  }

  template <class T>
  void get(const json& j, const std::string& where, const char* key, T& out) {
    if (!j.is_object() || !j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      errors.add(where + "." + key + ": wrong type");
    }
  }
};

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open config: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    fail(ErrorCategory::config, path + ": " + e.what());
  }
}

// "a.b.c=value" -> json pointer set, parsing the value as JSON when it
// scans, else as a string.
void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorCategory::config, "override '" + kv + "' is not key=value");
  }
  std::string pointer = "/" + kv.substr(0, eq);
  for (auto& c : pointer) {
    if (c == '.') c = '/';
  }
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings
  }
  try {
    j[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    fail(ErrorCategory::config, "override '" + kv + "': " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!config_path.empty()) j = parse_json_file(config_path);
  for (const std::string& kv : overrides) apply_override(j, kv);

  RunConfig config;
  ConfigErrors errors;
  Reader r{errors};

  r.object(j, "config",
           {"sensor", "interval", "mode", "flow", "net", "train", "synth", "render"});

  if (j.contains("sensor")) {
    const json& s = j["sensor"];
    r.object(s, "sensor",
             {"n_rows", "n_cols", "azimuth_min_deg", "azimuth_max_deg",
              "vertical_angles_deg"});
    r.get(s, "sensor", "n_rows", config.sensor.n_rows);
    r.get(s, "sensor", "n_cols", config.sensor.n_cols);
    r.get(s, "sensor", "azimuth_min_deg", config.sensor.azimuth_min_deg);
    r.get(s, "sensor", "azimuth_max_deg", config.sensor.azimuth_max_deg);
    r.get(s, "sensor", "vertical_angles_deg", config.sensor.vertical_angles_deg);
    if (s.contains("n_rows") && !s.contains("vertical_angles_deg")) {
      // Re-span the default table over the requested row count.
      const int n = config.sensor.n_rows;
      if (n > 1) {
        config.sensor.vertical_angles_deg.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
          config.sensor.vertical_angles_deg[static_cast<size_t>(i)] =
              2.0 + (-24.8 - 2.0) * i / (n - 1);
        }
      }
    }
  }

  if (j.contains("interval")) {
    const json& s = j["interval"];
    r.object(s, "interval", {"n", "frame_rate_hz", "v_min_kmh"});
    r.get(s, "interval", "n", config.interval.n);
    r.get(s, "interval", "frame_rate_hz", config.interval.frame_rate_hz);
    r.get(s, "interval", "v_min_kmh", config.interval.v_min_kmh);
  }

  std::string mode_str = "D";
  r.get(j, "config", "mode", mode_str);
  try {
    config.mode = mode_from_name(mode_str);
  } catch (const Error& e) {
    errors.add(e.what());
  }

  if (j.contains("flow")) {
    const json& s = j["flow"];
    r.object(s, "flow", {"source", "checkpoint"});
    std::string source = "gt";
    r.get(s, "flow", "source", source);
    if (source == "gt") {
      config.flow_source = FlowSource::ground_truth;
    } else if (source == "pred") {
      config.flow_source = FlowSource::predicted;
    } else {
      errors.add("flow.source: expected 'gt' or 'pred', found '" + source + "'");
    }
    r.get(s, "flow", "checkpoint", config.flow_checkpoint);
  }

  config.net.in_channels = mode_channels(config.mode);
  if (j.contains("net")) {
    const json& s = j["net"];
    r.object(s, "net", {"in_channels", "base_width", "levels", "head_scales"});
    int in_channels = config.net.in_channels;
    r.get(s, "net", "in_channels", in_channels);
    if (in_channels != config.net.in_channels) {
      errors.add("net.in_channels=" + std::to_string(in_channels) +
                 " contradicts mode " + mode_name(config.mode) + " (" +
                 std::to_string(config.net.in_channels) + " channels)");
    }
    r.get(s, "net", "base_width", config.net.base_width);
    r.get(s, "net", "levels", config.net.levels);
    if (s.contains("head_scales")) {
      r.get(s, "net", "head_scales", config.net.head_scales);
    } else {
      config.net.head_scales = NetConfig::default_head_scales(config.net.levels);
    }
  }

  if (j.contains("train")) {
    const json& s = j["train"];
    r.object(s, "train",
             {"iterations", "batch_size", "lr", "halve_after", "halve_every", "hflip",
              "precision", "seed", "target"});
    r.get(s, "train", "iterations", config.train.iterations);
    r.get(s, "train", "batch_size", config.train.batch_size);
    r.get(s, "train", "lr", config.train.lr);
    r.get(s, "train", "halve_after", config.train.halve_after);
    r.get(s, "train", "halve_every", config.train.halve_every);
    r.get(s, "train", "hflip", config.train.hflip);
    r.get(s, "train", "precision", config.train.precision);
    r.get(s, "train", "seed", config.train.seed);
    r.get(s, "train", "target", config.train.target);
    if (config.train.precision != "f64" && config.train.precision != "f32") {
      errors.add("train.precision: expected 'f64' or 'f32'");
    }
    if (config.train.target != "motion" && config.train.target != "flow") {
      errors.add("train.target: expected 'motion' or 'flow'");
    }
  }

  if (j.contains("synth")) {
    const json& s = j["synth"];
    r.object(s, "synth",
             {"count", "seed", "static_fraction", "min_boxes", "max_boxes", "min_speed",
              "max_speed", "min_dist", "max_dist", "max_abs_x", "ego_speed_max",
              "ego_yaw_max", "camera_rows", "camera_cols"});
    r.get(s, "synth", "count", config.synth.count);
    r.get(s, "synth", "seed", config.synth.seed);
    r.get(s, "synth", "static_fraction", config.synth.static_fraction);
    r.get(s, "synth", "min_boxes", config.synth.params.min_boxes);
    r.get(s, "synth", "max_boxes", config.synth.params.max_boxes);
    r.get(s, "synth", "min_speed", config.synth.params.min_speed);
    r.get(s, "synth", "max_speed", config.synth.params.max_speed);
    r.get(s, "synth", "min_dist", config.synth.params.min_dist);
    r.get(s, "synth", "max_dist", config.synth.params.max_dist);
    r.get(s, "synth", "max_abs_x", config.synth.params.max_abs_x);
    r.get(s, "synth", "ego_speed_max", config.synth.params.ego_speed_max);
    r.get(s, "synth", "ego_yaw_max", config.synth.params.ego_yaw_max);
    r.get(s, "synth", "camera_rows", config.synth.params.camera_rows);
    r.get(s, "synth", "camera_cols", config.synth.params.camera_cols);
  }

  if (j.contains("render")) {
    const json& s = j["render"];
    r.object(s, "render", {"max_magnitude"});
    r.get(s, "render", "max_magnitude", config.render.max_magnitude);
    if (!(config.render.max_magnitude > 0.0)) {
      errors.add("render.max_magnitude must be positive");
    }
  }

  // Component validators, folded into the same single report.
  for (auto check : {0, 1, 2, 3}) {
    try {
      switch (check) {
        case 0: config.sensor.validate(); break;
        case 1: config.interval.validate(); break;
        case 2: config.net.validate(); break;
        case 3: config.schedule().validate(); break;
      }
    } catch (const Error& e) {
      errors.add(e.what());
    }
  }
  errors.raise_if_any();
  return config;
}

}  // namespace lidarmotion
