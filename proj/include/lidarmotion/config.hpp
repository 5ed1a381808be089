#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidarmotion/datapipe.hpp"
#include "lidarmotion/motion_net.hpp"
#include "lidarmotion/synth.hpp"

namespace lidarmotion {

// Everything a CLI run needs, parsed from a strict JSON file with dotted
// key=value overrides. Unknown keys are rejected and all violations are
// reported at once; every random choice flows from the explicit seeds here.
struct RunConfig {
  SensorModel sensor = SensorModel::hdl64();
  IntervalSpec interval;
  Mode mode = Mode::D;
  FlowSource flow_source = FlowSource::ground_truth;
  std::string flow_checkpoint;  // Pred.F network (2-channel, data-only input)

  NetConfig net;  // in_channels kept consistent with the mode

  struct Train {
    long iterations = 2000;
    int batch_size = 10;
    double lr = 1e-3;
    long halve_after = 150000;
    long halve_every = 60000;
    bool hflip = true;
    std::string precision = "f64";  // or "f32"
    std::uint64_t seed = 1;
    std::string target = "motion";  // or "flow"
  } train;

  struct Synth {
    int count = 10;
    std::uint64_t seed = 7;
    double static_fraction = 0.2;
    SynthParams params;
  } synth;

  struct Render {
    double max_magnitude = 2.0;
  } render;

  TrainSchedule schedule() const;
};

// config_path may be empty (defaults); overrides are dotted key=value
// strings, e.g. "train.iterations=500".
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides);

}  // namespace lidarmotion
