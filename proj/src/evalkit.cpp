#include "lidarmotion/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

namespace {

void check_same_grid(const MotionMap& pred, const MotionMap& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols) {
    fail(ErrorCategory::shape, "epe: prediction " + std::to_string(pred.rows) + "x" +
                                   std::to_string(pred.cols) + " vs ground truth " +
                                   std::to_string(gt.rows) + "x" + std::to_string(gt.cols));
  }
}

}  // namespace

EpeResult epe(const MotionMap& pred, const MotionMap& gt) {
  EpeAccumulator acc;
  acc.add(pred, gt);
  return acc.result();
}

void EpeAccumulator::add(const MotionMap& pred, const MotionMap& gt) {
  check_same_grid(pred, gt);
  const size_t n = gt.dz.size();
  for (size_t i = 0; i < n; ++i) {
    const double e = std::hypot(pred.dz[i] - gt.dz[i], pred.dx[i] - gt.dx[i]);
    sum_full_ += e;
    if (gt.dynamic[i]) {
      sum_dynamic_ += e;
      ++n_dynamic_;
    }
  }
  n_cells_ += static_cast<long>(n);
  ++frames_;
}

EpeResult EpeAccumulator::result() const {
  if (n_cells_ == 0) fail(ErrorCategory::state, "epe: no cells accumulated");
  EpeResult r;
  r.full = sum_full_ / n_cells_;
  r.n_cells = n_cells_;
  r.n_dynamic = n_dynamic_;
  if (n_dynamic_ > 0) r.dynamic = sum_dynamic_ / n_dynamic_;
  return r;
}

namespace {

EvalRow row_from(const std::string& name, const EpeResult& res, long frames) {
  EvalRow row;
  row.name = name;
  row.full = res.full;
  row.dynamic = res.dynamic;
  row.n_frames = frames;
  row.n_dynamic_cells = res.n_dynamic;
  return row;
}

MotionMap constant_prediction(int rows, int cols, Vec2 v) {
  MotionMap map(rows, cols);
  std::fill(map.dz.begin(), map.dz.end(), v.z);
  std::fill(map.dx.begin(), map.dx.end(), v.x);
  return map;
}

}  // namespace

EvalRow baseline_zero(const std::vector<AssembledSample>& dataset) {
  if (dataset.empty()) fail(ErrorCategory::state, "baseline_zero: empty dataset");
  EpeAccumulator acc;
  for (const AssembledSample& s : dataset) {
    acc.add(MotionMap(s.gt.rows, s.gt.cols), s.gt);
  }
  return row_from("error@zero", acc.result(), acc.frames());
}

EvalRow baseline_mean(const std::vector<AssembledSample>& dataset, Vec2 train_mean) {
  if (dataset.empty()) fail(ErrorCategory::state, "baseline_mean: empty dataset");
  EpeAccumulator acc;
  for (const AssembledSample& s : dataset) {
    acc.add(constant_prediction(s.gt.rows, s.gt.cols, train_mean), s.gt);
  }
  return row_from("error@mean", acc.result(), acc.frames());
}

Vec2 mean_dynamic_vector(const std::vector<AssembledSample>& dataset) {
  double sz = 0.0, sx = 0.0;
  long n = 0;
  for (const AssembledSample& s : dataset) {
    for (size_t i = 0; i < s.gt.dynamic.size(); ++i) {
      if (!s.gt.dynamic[i]) continue;
      sz += s.gt.dz[i];
      sx += s.gt.dx[i];
      ++n;
    }
  }
  if (n == 0) return {0.0, 0.0};
  return {sz / n, sx / n};
}

template <class T>
EvalRow evaluate_model(MotionNet<T>& net, const std::vector<AssembledSample>& dataset,
                       const std::string& name) {
  if (dataset.empty()) fail(ErrorCategory::state, "evaluate_model: empty dataset");
  if (dataset[0].stack.channels() != net.config.in_channels) {
    fail(ErrorCategory::mode_prerequisite_missing,
         "evaluate_model: dataset mode " + mode_name(dataset[0].stack.mode) + " (" +
             std::to_string(dataset[0].stack.channels()) + " channels) does not match "
             "the network's " + std::to_string(net.config.in_channels) + " input channels");
  }
  EpeAccumulator acc;
  for (const AssembledSample& s : dataset) {
    const auto pred = net_predict(net, s.stack.data, s.stack.channels(), s.stack.rows,
                                  s.stack.cols);
    MotionMap map(s.gt.rows, s.gt.cols);
    const size_t plane = static_cast<size_t>(s.gt.rows) * s.gt.cols;
    std::copy(pred.begin(), pred.begin() + plane, map.dz.begin());
    std::copy(pred.begin() + plane, pred.end(), map.dx.begin());
    acc.add(map, s.gt);
  }
  return row_from(name, acc.result(), acc.frames());
}

template EvalRow evaluate_model<double>(MotionNet<double>&,
                                        const std::vector<AssembledSample>&,
                                        const std::string&);
template EvalRow evaluate_model<float>(MotionNet<float>&,
                                       const std::vector<AssembledSample>&,
                                       const std::string&);

std::string render_report(const EvalReport& report) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %10s %14s\n", "model", "full",
                "dynamic", "frames", "dynamic cells");
  out << buf;
  for (const EvalRow& row : report.rows) {
    std::string dynamic = "-";
    if (row.dynamic.has_value()) {
      std::snprintf(buf, sizeof(buf), "%.4f", *row.dynamic);
      dynamic = buf;
    }
    std::snprintf(buf, sizeof(buf), "%-24s %10.4f %10s %10ld %14ld\n", row.name.c_str(),
                  row.full, dynamic.c_str(), row.n_frames, row.n_dynamic_cells);
    out << buf;
  }
  return out.str();
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const EvalRow& row : report.rows) {
    nlohmann::ordered_json r;
    r["name"] = row.name;
    r["full"] = row.full;
    if (row.dynamic.has_value()) {
      r["dynamic"] = *row.dynamic;
    } else {
      r["dynamic"] = nullptr;
    }
    r["n_frames"] = row.n_frames;
    r["n_dynamic_cells"] = row.n_dynamic_cells;
    j["rows"].push_back(r);
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("report: ") + e.what());
  }
  EvalReport report;
  for (const auto& r : j.at("rows")) {
    EvalRow row;
    row.name = r.at("name").get<std::string>();
    row.full = r.at("full").get<double>();
    if (!r.at("dynamic").is_null()) row.dynamic = r.at("dynamic").get<double>();
    row.n_frames = r.at("n_frames").get<long>();
    row.n_dynamic_cells = r.at("n_dynamic_cells").get<long>();
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace lidarmotion
