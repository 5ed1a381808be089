#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace lidarmotion {

struct TensorShape {
  std::array<int, 4> d{1, 1, 1, 1};
  int ndim = 0;

  TensorShape() = default;
  TensorShape(std::initializer_list<int> dims);

  long numel() const;
  bool operator==(const TensorShape& o) const;
  bool operator!=(const TensorShape& o) const { return !(*this == o); }
  std::string str() const;
};

// Reverse-mode autodiff node. Ops build a graph of these; backward() walks
// it in reverse topological order. Values are T (double by default project
// wide, float for the fast training path).
template <class T>
struct TensorNode {
  TensorShape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized like value when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  long numel() const { return shape.numel(); }
  // NCHW addressing for 4-d tensors.
  size_t at(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * shape.d[1] + c) * shape.d[2] + h) * shape.d[3] + w;
  }
};

template <class T>
using TensorPtr = std::shared_ptr<TensorNode<T>>;

template <class T>
TensorPtr<T> make_tensor(const TensorShape& shape, bool requires_grad = false);

// One-time malloc tuning for graph-sized buffer churn; called by the
// training loop, harmless elsewhere.
void tune_allocator_for_graphs();

// Zeroes every reachable gradient, seeds the (scalar) root with 1 and runs
// the recorded backward functions in reverse topological order.
template <class T>
void backward(const TensorPtr<T>& root);

// ---- operators (each differentiable) ----

// Cross-correlation with zero padding; weight (Cout, Cin, k, k), bias (Cout).
template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, int stride, int pad);

// Transposed convolution; weight (Cin, Cout, k, k), bias (Cout). With
// k=4, stride=2, pad=1 the spatial dims double.
template <class T>
TensorPtr<T> deconv2d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                      const TensorPtr<T>& b, int stride, int pad);

enum class BnMode { train, eval };

// Running statistics live in shared tensors so a network can expose them to
// the checkpoint writer alongside its parameters. Initialized to mean 0,
// variance 1 (biased estimator, matching train-mode stats).
template <class T>
struct BatchNormState {
  TensorPtr<T> running_mean;
  TensorPtr<T> running_var;
  TensorPtr<T> steps;  // single-element train-step counter

  static BatchNormState<T> create(int channels);
  long step_count() const { return static_cast<long>(steps->value[0]); }
};

template <class T>
TensorPtr<T> batchnorm(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                       const TensorPtr<T>& beta, BatchNormState<T>& state,
                       BnMode mode, double momentum = 0.1, double eps = 1e-5,
                       bool update_running = true);

template <class T>
TensorPtr<T> relu(const TensorPtr<T>& x);

// Elementwise sum of two same-shape tensors (loss accumulation).
template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b);

// Concatenation along the channel axis.
template <class T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& xs);

// align_corners=false doubling.
template <class T>
TensorPtr<T> upsample_bilinear_2x(const TensorPtr<T>& x);

// Picks the top-left element of each factor x factor block.
template <class T>
TensorPtr<T> downsample_nearest(const TensorPtr<T>& x, int factor);

// Mean over batch and pixels of sqrt(dz^2 + dx^2 + delta^2) - delta with
// delta = 1e-8, keeping the gradient finite at exact matches.
inline constexpr double kEpeDelta = 1e-8;

template <class T>
TensorPtr<T> epe_loss(const TensorPtr<T>& pred, const TensorPtr<T>& gt);

// ---- parameters and optimization ----

template <class T>
struct Parameter {
  std::string name;
  TensorPtr<T> tensor;  // requires_grad when trainable
  std::vector<T> m, v;  // Adam moments
  long step = 0;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, TensorPtr<T> t, bool train = true);
};

template <class T>
void adam_step(const std::vector<Parameter<T>*>& params, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Zero-mean normal with variance 2 / fan_in, reproducible from the seed.
template <class T>
void he_fill(TensorNode<T>& t, long fan_in, std::uint64_t seed);

TensorPtr<double> he_init(const TensorShape& shape, long fan_in, std::uint64_t seed);

// ---- verification harness ----

// Central finite differences against the analytic gradient over every
// element of every listed input; returns the max elementwise relative error
// |a - n| / max(1e-8, |a| + |n|). Double precision only.
double grad_check(const std::function<TensorPtr<double>()>& build,
                  const std::vector<TensorPtr<double>>& inputs, double eps = 1e-5);

// ---- checkpoint io ----
// "CKPT1" layout: magic line; u32 count; per parameter: u32 name length,
// name bytes, u32 ndim, ndim u32 dims, then values, first moment, second
// moment as little-endian f64 arrays, then u64 step count.

template <class T>
void save_checkpoint(const std::vector<Parameter<T>*>& params, const std::string& path);

template <class T>
void load_checkpoint(const std::vector<Parameter<T>*>& params, const std::string& path);

}  // namespace lidarmotion
