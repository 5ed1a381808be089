#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lidarmotion/datapipe.hpp"
#include "lidarmotion/motion_net.hpp"

namespace lidarmotion {

struct EpeResult {
  double full = 0.0;
  std::optional<double> dynamic;  // absent when the frame has no dynamic cells
  long n_cells = 0;
  long n_dynamic = 0;
};

// Mean endpoint error over all cells and over the dynamic cells only.
EpeResult epe(const MotionMap& pred, const MotionMap& gt);

// Cell-weighted accumulation across frames, so that dataset-level numbers
// equal the mean over the union of all cells.
class EpeAccumulator {
 public:
  void add(const MotionMap& pred, const MotionMap& gt);
  EpeResult result() const;
  long frames() const { return frames_; }

 private:
  double sum_full_ = 0.0, sum_dynamic_ = 0.0;
  long n_cells_ = 0, n_dynamic_ = 0, frames_ = 0;
};

struct EvalRow {
  std::string name;
  double full = 0.0;
  std::optional<double> dynamic;
  long n_frames = 0;
  long n_dynamic_cells = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

// error@zero: the all-zero regression.
EvalRow baseline_zero(const std::vector<AssembledSample>& dataset);

// error@mean: a constant prediction everywhere.
EvalRow baseline_mean(const std::vector<AssembledSample>& dataset, Vec2 train_mean);

// Mean GT vector over the dynamic cells of a (training) split; the constant
// used by the error@mean baseline.
Vec2 mean_dynamic_vector(const std::vector<AssembledSample>& dataset);

template <class T>
EvalRow evaluate_model(MotionNet<T>& net, const std::vector<AssembledSample>& dataset,
                       const std::string& name);

// Table rendering (4-decimal columns) and a machine-readable JSON twin that
// parses back to an identical report.
std::string render_report(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);

}  // namespace lidarmotion
