#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lidarmotion/datapipe.hpp"
#include "lidarmotion/tensor.hpp"

namespace lidarmotion {

// Encoder-decoder configuration. The encoder contracts by stride-2 convs
// (width doubling, capped at 8x), the decoder expands back to full input
// resolution with skip concatenation; every decoder level carries a 3x3
// prediction head feeding the multi-scale loss.
struct NetConfig {
  int in_channels = 4;
  int base_width = 8;   // paper-scale networks would use 64
  int levels = 5;       // deepest feature map at 1/2^levels, never below 1/32
  int out_channels = 2;
  std::vector<int> head_scales = {16, 8, 4, 2, 1};  // denominators, coarse first

  void validate() const;
  int encoder_width(int level) const;  // level in [1, levels]
  static std::vector<int> default_head_scales(int levels);
};

template <class T>
struct MotionNet {
  NetConfig config;

  // All named state in checkpoint order; batchnorm running statistics ride
  // along as non-trainable entries.
  std::vector<Parameter<T>> state;

  struct BlockRef {
    int w = -1, b = -1, gamma = -1, beta = -1;
    BatchNormState<T> bn;
  };
  struct HeadRef {
    int w = -1, b = -1;
  };
  std::vector<BlockRef> encoder;  // [levels]
  std::vector<BlockRef> decoder;  // [levels], coarsest first
  std::vector<HeadRef> heads;     // aligned with decoder

  std::vector<Parameter<T>*> all_state();
  std::vector<Parameter<T>*> trainable();
  Parameter<T>& param(int idx) { return state[static_cast<size_t>(idx)]; }
};

template <class T>
MotionNet<T> build_net(const NetConfig& config, std::uint64_t seed);

// One prediction per decoder level, coarsest to finest; the finest has the
// full input resolution.
template <class T>
std::vector<TensorPtr<T>> net_forward(MotionNet<T>& net, const TensorPtr<T>& x,
                                      BnMode mode, bool update_running = false);

// Sum of per-scale euclidean losses against nearest-downsampled ground
// truth, unit weights.
template <class T>
TensorPtr<T> multiscale_loss(const MotionNet<T>& net,
                             const std::vector<TensorPtr<T>>& preds,
                             const TensorPtr<T>& gt);

// Pre-assembled training samples in the engine's scalar type.
template <class T>
struct TrainDataset {
  int channels = 0, rows = 0, cols = 0;
  std::vector<std::vector<T>> stacks;      // C*H*W each
  std::vector<std::vector<T>> targets;     // 2*H*W each
  std::vector<std::uint8_t> has_motion;
  std::vector<std::uint8_t> flip_negate;   // per input channel
  std::array<std::uint8_t, 2> target_flip_negate = {0, 1};

  size_t size() const { return stacks.size(); }
};

// Assembled samples -> engine-typed training data. The motion variant
// regresses the GT motion map; the flow variant pairs the 4-channel data
// stack with the lidar-flow channels of a flow-bearing assembly.
template <class T>
TrainDataset<T> to_train_dataset(const std::vector<AssembledSample>& samples);

template <class T>
TrainDataset<T> to_flow_train_dataset(const std::vector<AssembledSample>& samples);

struct TrainSchedule {
  long iterations = 2000;
  int batch_size = 10;
  double lr = 1e-3;
  long halve_after = 150000;  // paper-scale constants stay representable
  long halve_every = 60000;
  bool hflip_augment = false;
  std::uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  double lr_at(long iter) const;
  void validate() const;
};

// Balanced-batch Adam training; returns the per-iteration loss curve.
// Deterministic for a given dataset, schedule and net.
template <class T>
std::vector<double> train_net(MotionNet<T>& net, const TrainDataset<T>& dataset,
                              const TrainSchedule& schedule);

// Full-resolution prediction (2*H*W, (dZ, dX) planes) for one assembled
// stack, batchnorm in eval mode.
template <class T>
std::vector<double> net_predict(MotionNet<T>& net, const std::vector<double>& stack,
                                int channels, int rows, int cols);

template <class T>
void save_net(MotionNet<T>& net, const std::string& path);

template <class T>
void load_net(MotionNet<T>& net, const std::string& path);

}  // namespace lidarmotion
