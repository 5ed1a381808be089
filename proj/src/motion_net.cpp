#include "lidarmotion/motion_net.hpp"

#include <algorithm>
#include <cmath>

#include "lidarmotion/datapipe.hpp"
#include "lidarmotion/error.hpp"
#include "lidarmotion/rng.hpp"

namespace lidarmotion {

std::vector<int> NetConfig::default_head_scales(int levels) {
  std::vector<int> scales;
  for (int k = levels - 1; k >= 0; --k) scales.push_back(1 << k);
  return scales;
}

int NetConfig::encoder_width(int level) const {
  return std::min(base_width << (level - 1), 8 * base_width);
}

void NetConfig::validate() const {
  std::string problems;
  auto add = [&](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (in_channels != 4 && in_channels != 6 && in_channels != 8 && in_channels != 11) {
    add("in_channels must be one of 4, 6, 8, 11");
  }
  if (base_width < 1) add("base_width must be >= 1");
  if (levels < 1 || levels > 5) add("levels must be in [1, 5]");
  if (out_channels != 2) add("out_channels must be 2");
  if (levels >= 1 && levels <= 5 && head_scales != default_head_scales(levels)) {
    std::string want;
    for (int s : default_head_scales(levels)) want += (want.empty() ? "" : ",") + std::to_string(s);
    add("head_scales must cover every decoder level: {" + want + "}");
  }
  if (!problems.empty()) fail(ErrorCategory::config, "net config: " + problems);
}

template <class T>
std::vector<Parameter<T>*> MotionNet<T>::all_state() {
  std::vector<Parameter<T>*> out;
  out.reserve(state.size());
  for (auto& p : state) out.push_back(&p);
  return out;
}

template <class T>
std::vector<Parameter<T>*> MotionNet<T>::trainable() {
  std::vector<Parameter<T>*> out;
  for (auto& p : state) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

namespace {

template <class T>
int push_param(MotionNet<T>& net, const std::string& name, const TensorShape& shape,
               long he_fan_in, std::uint64_t seed, int* param_index) {
  auto tensor = make_tensor<T>(shape);
  if (he_fan_in > 0) he_fill(*tensor, he_fan_in, derive_seed(seed, (*param_index)++));
  net.state.emplace_back(name, tensor, true);
  return static_cast<int>(net.state.size() - 1);
}

template <class T>
int push_const_param(MotionNet<T>& net, const std::string& name, int channels, T value) {
  auto tensor = make_tensor<T>({channels});
  std::fill(tensor->value.begin(), tensor->value.end(), value);
  net.state.emplace_back(name, tensor, true);
  return static_cast<int>(net.state.size() - 1);
}

template <class T>
void push_bn_state(MotionNet<T>& net, const std::string& prefix,
                   typename MotionNet<T>::BlockRef& block, int channels) {
  block.bn = BatchNormState<T>::create(channels);
  net.state.emplace_back(prefix + ".rmean", block.bn.running_mean, false);
  net.state.emplace_back(prefix + ".rvar", block.bn.running_var, false);
  net.state.emplace_back(prefix + ".steps", block.bn.steps, false);
}

// Channel bookkeeping shared by build and forward.
struct DecoderPlan {
  int deconv_in = 0;
  int deconv_out = 0;
  int skip = 0;
  int fused = 0;  // deconv_out + skip (+ 2 for the upsampled prediction)
};

std::vector<DecoderPlan> plan_decoder(const NetConfig& config) {
  const int L = config.levels;
  std::vector<DecoderPlan> plan(static_cast<size_t>(L));
  int prev = config.encoder_width(L);  // deepest feature map
  for (int j = 0; j < L; ++j) {
    DecoderPlan& p = plan[static_cast<size_t>(j)];
    p.deconv_in = prev;
    p.deconv_out = j < L - 1 ? config.encoder_width(L - 1 - j) : config.base_width;
    p.skip = j < L - 1 ? config.encoder_width(L - 1 - j) : config.in_channels;
    p.fused = p.deconv_out + p.skip + (j > 0 ? 2 : 0);
    prev = p.fused;
  }
  return plan;
}

}  // namespace

template <class T>
MotionNet<T> build_net(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  MotionNet<T> net;
  net.config = config;
  const int L = config.levels;

  // The state vector must not reallocate while block refs hand out indices.
  net.state.reserve(static_cast<size_t>(7 * 2 * L + 2 * L + 8));
  int param_index = 0;

  int prev = config.in_channels;
  for (int i = 1; i <= L; ++i) {
    const int width = config.encoder_width(i);
    const std::string prefix = "enc" + std::to_string(i);
    typename MotionNet<T>::BlockRef block;
    block.w = push_param(net, prefix + ".conv.w", {width, prev, 3, 3},
                         static_cast<long>(prev) * 9, seed, &param_index);
    block.b = push_param(net, prefix + ".conv.b", {width}, 0, seed, &param_index);
    block.gamma = push_const_param(net, prefix + ".bn.gamma", width, T(1));
    block.beta = push_const_param(net, prefix + ".bn.beta", width, T(0));
    push_bn_state(net, prefix + ".bn", block, width);
    net.encoder.push_back(block);
    prev = width;
  }

  const auto plan = plan_decoder(config);
  for (int j = 0; j < L; ++j) {
    const DecoderPlan& p = plan[static_cast<size_t>(j)];
    const std::string prefix = "dec" + std::to_string(config.head_scales[static_cast<size_t>(j)]);
    typename MotionNet<T>::BlockRef block;
    block.w = push_param(net, prefix + ".deconv.w", {p.deconv_in, p.deconv_out, 4, 4},
                         static_cast<long>(p.deconv_in) * 4, seed, &param_index);
    block.b = push_param(net, prefix + ".deconv.b", {p.deconv_out}, 0, seed, &param_index);
    block.gamma = push_const_param(net, prefix + ".bn.gamma", p.deconv_out, T(1));
    block.beta = push_const_param(net, prefix + ".bn.beta", p.deconv_out, T(0));
    push_bn_state(net, prefix + ".bn", block, p.deconv_out);
    net.decoder.push_back(block);

    typename MotionNet<T>::HeadRef head;
    head.w = push_param(net, "head" + std::to_string(config.head_scales[static_cast<size_t>(j)]) + ".w",
                        {config.out_channels, p.fused, 3, 3}, static_cast<long>(p.fused) * 9,
                        seed, &param_index);
    head.b = push_param(net, "head" + std::to_string(config.head_scales[static_cast<size_t>(j)]) + ".b",
                        {config.out_channels}, 0, seed, &param_index);
    net.heads.push_back(head);
  }
  return net;
}

template <class T>
std::vector<TensorPtr<T>> net_forward(MotionNet<T>& net, const TensorPtr<T>& x,
                                      BnMode mode, bool update_running) {
  tune_allocator_for_graphs();
  const NetConfig& config = net.config;
  if (x->shape.ndim != 4 || x->shape.d[1] != config.in_channels) {
    fail(ErrorCategory::shape, "net_forward: expected (N, " +
                                   std::to_string(config.in_channels) + ", H, W), got " +
                                   x->shape.str());
  }
  const int H = x->shape.d[2], W = x->shape.d[3];
  const int div = 1 << config.levels;
  if (H % div != 0 || W % div != 0) {
    fail(ErrorCategory::shape, "net_forward: spatial dims " + x->shape.str() +
                                   " not divisible by " + std::to_string(div));
  }
  const int L = config.levels;

  std::vector<TensorPtr<T>> enc_maps;  // enc_maps[i] at scale 1/2^(i+1)
  TensorPtr<T> f = x;
  for (int i = 0; i < L; ++i) {
    auto& block = net.encoder[static_cast<size_t>(i)];
    f = conv2d(f, net.param(block.w).tensor, net.param(block.b).tensor, 2, 1);
    f = batchnorm(f, net.param(block.gamma).tensor, net.param(block.beta).tensor,
                  block.bn, mode, 0.1, 1e-5, update_running);
    f = relu(f);
    enc_maps.push_back(f);
  }

  std::vector<TensorPtr<T>> preds;
  for (int j = 0; j < L; ++j) {
    auto& block = net.decoder[static_cast<size_t>(j)];
    TensorPtr<T> d = deconv2d(f, net.param(block.w).tensor, net.param(block.b).tensor, 2, 1);
    d = batchnorm(d, net.param(block.gamma).tensor, net.param(block.beta).tensor,
                  block.bn, mode, 0.1, 1e-5, update_running);
    d = relu(d);
    const TensorPtr<T> skip = j < L - 1 ? enc_maps[static_cast<size_t>(L - 2 - j)] : x;
    std::vector<TensorPtr<T>> parts{d, skip};
    if (j > 0) parts.push_back(upsample_bilinear_2x(preds.back()));
    f = concat(parts);
    auto& head = net.heads[static_cast<size_t>(j)];
    preds.push_back(conv2d(f, net.param(head.w).tensor, net.param(head.b).tensor, 1, 1));
  }
  return preds;
}

template <class T>
TensorPtr<T> multiscale_loss(const MotionNet<T>& net,
                             const std::vector<TensorPtr<T>>& preds,
                             const TensorPtr<T>& gt) {
  if (preds.size() != net.config.head_scales.size()) {
    fail(ErrorCategory::shape, "multiscale_loss: prediction count mismatch");
  }
  TensorPtr<T> total;
  for (size_t i = 0; i < preds.size(); ++i) {
    const int denom = net.config.head_scales[i];
    const TensorPtr<T> target = denom == 1 ? gt : downsample_nearest(gt, denom);
    const TensorPtr<T> term = epe_loss(preds[i], target);
    total = total ? add(total, term) : term;
  }
  return total;
}

double TrainSchedule::lr_at(long iter) const {
  if (iter < halve_after) return lr;
  const long halvings = 1 + (iter - halve_after) / halve_every;
  return lr / double(1L << std::min(halvings, 62L));
}

void TrainSchedule::validate() const {
  std::string problems;
  auto add = [&](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (iterations < 0) add("iterations must be >= 0");
  if (batch_size < 1) add("batch_size must be >= 1");
  if (!(lr > 0.0)) add("lr must be positive");
  if (halve_after < 0) add("halve_after must be >= 0");
  if (halve_every < 1) add("halve_every must be >= 1");
  if (!problems.empty()) fail(ErrorCategory::config, "train schedule: " + problems);
}

namespace {

// Copies one sample into a batch slot, mirroring columns (and negating the
// sign-odd channels) when flipped.
template <class T>
void fill_slot(T* dst, const std::vector<T>& src, int channels, int rows, int cols,
               const std::uint8_t* negate, bool flip) {
  const size_t plane = static_cast<size_t>(rows) * cols;
  if (!flip) {
    std::copy(src.begin(), src.end(), dst);
    return;
  }
  for (int c = 0; c < channels; ++c) {
    const T sign = negate[c] ? T(-1) : T(1);
    const T* s = src.data() + c * plane;
    T* d = dst + c * plane;
    for (int r = 0; r < rows; ++r) {
      for (int col = 0; col < cols; ++col) {
        d[static_cast<size_t>(r) * cols + col] =
            sign * s[static_cast<size_t>(r) * cols + (cols - 1 - col)];
      }
    }
  }
}

}  // namespace

template <class T>
std::vector<double> train_net(MotionNet<T>& net, const TrainDataset<T>& dataset,
                              const TrainSchedule& schedule) {
  schedule.validate();
  tune_allocator_for_graphs();
  if (dataset.size() == 0) fail(ErrorCategory::state, "train: empty dataset");
  if (dataset.channels != net.config.in_channels) {
    fail(ErrorCategory::shape, "train: dataset has " + std::to_string(dataset.channels) +
                                   " channels, net expects " +
                                   std::to_string(net.config.in_channels));
  }
  const int B = schedule.batch_size;
  const int H = dataset.rows, W = dataset.cols, C = dataset.channels;
  const size_t stack_size = static_cast<size_t>(C) * H * W;
  const size_t gt_size = static_cast<size_t>(2) * H * W;

  BatchSampler sampler(dataset.has_motion, derive_seed(schedule.seed, 13));
  SplitMix64 flip_rng(derive_seed(schedule.seed, 77));
  const auto params = net.trainable();

  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(schedule.iterations));
  for (long iter = 0; iter < schedule.iterations; ++iter) {
    const auto batch = sampler.next_batch(B);
    auto x = make_tensor<T>({B, C, H, W});
    auto gt = make_tensor<T>({B, 2, H, W});
    for (int s = 0; s < B; ++s) {
      const bool flip = schedule.hflip_augment && flip_rng.uniform01() < 0.5;
      const int idx = batch[static_cast<size_t>(s)];
      fill_slot(x->value.data() + s * stack_size, dataset.stacks[static_cast<size_t>(idx)],
                C, H, W, dataset.flip_negate.data(), flip);
      fill_slot(gt->value.data() + s * gt_size, dataset.targets[static_cast<size_t>(idx)],
                2, H, W, dataset.target_flip_negate.data(), flip);
    }
    auto preds = net_forward(net, x, BnMode::train, true);
    auto loss = multiscale_loss(net, preds, gt);
    backward(loss);
    adam_step(params, schedule.lr_at(iter), schedule.beta1, schedule.beta2,
              schedule.adam_eps);
    losses.push_back(double(loss->value[0]));
  }
  return losses;
}

template <class T>
std::vector<double> net_predict(MotionNet<T>& net, const std::vector<double>& stack,
                                int channels, int rows, int cols) {
  if (stack.size() != static_cast<size_t>(channels) * rows * cols) {
    fail(ErrorCategory::shape, "net_predict: stack size mismatch");
  }
  auto x = make_tensor<T>({1, channels, rows, cols});
  for (size_t i = 0; i < stack.size(); ++i) x->value[i] = T(stack[i]);
  auto preds = net_forward(net, x, BnMode::eval, false);
  const auto& fine = preds.back();
  std::vector<double> out(static_cast<size_t>(2) * rows * cols);
  for (size_t i = 0; i < out.size(); ++i) out[i] = double(fine->value[i]);
  return out;
}

template <class T>
void save_net(MotionNet<T>& net, const std::string& path) {
  save_checkpoint(net.all_state(), path);
}

template <class T>
void load_net(MotionNet<T>& net, const std::string& path) {
  load_checkpoint(net.all_state(), path);
}

template <class T>
TrainDataset<T> to_train_dataset(const std::vector<AssembledSample>& samples) {
  TrainDataset<T> out;
  if (samples.empty()) return out;
  out.channels = samples[0].stack.channels();
  out.rows = samples[0].stack.rows;
  out.cols = samples[0].stack.cols;
  for (ChannelRole role : mode_layout(samples[0].stack.mode)) {
    out.flip_negate.push_back(flips_sign(role) ? 1 : 0);
  }
  out.target_flip_negate = {0, 1};  // (dZ, dX): the transversal part mirrors
  const size_t plane = samples[0].stack.plane();
  for (const AssembledSample& s : samples) {
    std::vector<T> stack(s.stack.data.size());
    for (size_t i = 0; i < stack.size(); ++i) stack[i] = T(s.stack.data[i]);
    out.stacks.push_back(std::move(stack));
    std::vector<T> target(2 * plane);
    for (size_t i = 0; i < plane; ++i) {
      target[i] = T(s.gt.dz[i]);
      target[plane + i] = T(s.gt.dx[i]);
    }
    out.targets.push_back(std::move(target));
    out.has_motion.push_back(s.has_motion ? 1 : 0);
  }
  return out;
}

template <class T>
TrainDataset<T> to_flow_train_dataset(const std::vector<AssembledSample>& samples) {
  TrainDataset<T> out;
  if (samples.empty()) return out;
  if (samples[0].stack.mode == Mode::D) {
    fail(ErrorCategory::mode_prerequisite_missing,
         "flow-target training needs a flow-bearing assembly mode");
  }
  out.channels = 4;  // the lidar-flow predictor consumes the data stack only
  out.rows = samples[0].stack.rows;
  out.cols = samples[0].stack.cols;
  out.flip_negate = {0, 0, 0, 0};
  out.target_flip_negate = {1, 0};  // (u, v): the horizontal pixel shift mirrors
  const size_t plane = samples[0].stack.plane();
  for (const AssembledSample& s : samples) {
    std::vector<T> stack(4 * plane);
    for (size_t i = 0; i < 4 * plane; ++i) stack[i] = T(s.stack.data[i]);
    out.stacks.push_back(std::move(stack));
    std::vector<T> target(2 * plane);
    for (size_t i = 0; i < plane; ++i) {
      target[i] = T(s.stack.channel(4)[i]);
      target[plane + i] = T(s.stack.channel(5)[i]);
    }
    out.targets.push_back(std::move(target));
    out.has_motion.push_back(s.has_motion ? 1 : 0);
  }
  return out;
}

#define LIDARMOTION_INSTANTIATE_NET(T)                                               \
  template struct MotionNet<T>;                                                       \
  template MotionNet<T> build_net<T>(const NetConfig&, std::uint64_t);                \
  template std::vector<TensorPtr<T>> net_forward<T>(MotionNet<T>&, const TensorPtr<T>&, \
                                                    BnMode, bool);                    \
  template TensorPtr<T> multiscale_loss<T>(const MotionNet<T>&,                       \
                                           const std::vector<TensorPtr<T>>&,          \
                                           const TensorPtr<T>&);                      \
  template std::vector<double> train_net<T>(MotionNet<T>&, const TrainDataset<T>&,    \
                                            const TrainSchedule&);                    \
  template std::vector<double> net_predict<T>(MotionNet<T>&, const std::vector<double>&, \
                                              int, int, int);                         \
  template void save_net<T>(MotionNet<T>&, const std::string&);                       \
  template void load_net<T>(MotionNet<T>&, const std::string&);                       \
  template TrainDataset<T> to_train_dataset<T>(const std::vector<AssembledSample>&);  \
  template TrainDataset<T> to_flow_train_dataset<T>(const std::vector<AssembledSample>&);

LIDARMOTION_INSTANTIATE_NET(double)
LIDARMOTION_INSTANTIATE_NET(float)

#undef LIDARMOTION_INSTANTIATE_NET

}  // namespace lidarmotion
