#include "lidarmotion/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <unordered_set>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "lidarmotion/error.hpp"
#include "lidarmotion/rng.hpp"

namespace lidarmotion {

void tune_allocator_for_graphs() {
#ifdef __GLIBC__
  // The graph allocates and frees large activation buffers every iteration;
  // keeping them on the heap instead of fresh mmaps avoids re-faulting the
  // pages each step (roughly halves the forward pass on glibc).
  static const bool done = [] {
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
    return true;
  }();
  (void)done;
#endif
}

TensorShape::TensorShape(std::initializer_list<int> dims) {
  if (dims.size() > 4) fail(ErrorCategory::shape, "tensors support at most 4 dims");
  ndim = static_cast<int>(dims.size());
  int i = 0;
  for (int v : dims) d[i++] = v;
  for (; i < 4; ++i) d[i] = 1;
}

long TensorShape::numel() const {
  long n = 1;
  for (int i = 0; i < ndim; ++i) n *= d[i];
  return ndim == 0 ? 0 : n;
}

bool TensorShape::operator==(const TensorShape& o) const {
  if (ndim != o.ndim) return false;
  for (int i = 0; i < ndim; ++i) {
    if (d[i] != o.d[i]) return false;
  }
  return true;
}

std::string TensorShape::str() const {
  std::string s = "(";
  for (int i = 0; i < ndim; ++i) {
    if (i) s += ", ";
    s += std::to_string(d[i]);
  }
  return s + ")";
}

template <class T>
TensorPtr<T> make_tensor(const TensorShape& shape, bool requires_grad) {
  auto t = std::make_shared<TensorNode<T>>();
  t->shape = shape;
  t->value.assign(static_cast<size_t>(shape.numel()), T(0));
  t->requires_grad = requires_grad;
  return t;
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
void check_4d(const TensorPtr<T>& t, const char* what) {
  if (t->shape.ndim != 4) {
    fail(ErrorCategory::shape, std::string(what) + " must be 4-d, got " + t->shape.str());
  }
}

// Shared sliding-window geometry. "Image" is the dense grid the kernel
// slides over, "positions" the grid of window placements.
struct ConvGeom {
  int C, H, W;    // image side
  int k, s, p;
  int OH, OW;     // position side

  long col_rows() const { return static_cast<long>(C) * k * k; }
  long col_cols() const { return static_cast<long>(OH) * OW; }
};

// Valid window-position range [lo, hi) for one kernel offset: positions o
// with 0 <= o*s - p + k_off < limit.
inline void valid_range(int k_off, int s, int p, int limit, int positions, int* lo,
                        int* hi) {
  int l = 0;
  const int start = k_off - p;  // image index at position 0
  if (start < 0) l = (-start + s - 1) / s;
  int h = positions;
  // largest o with start + o*s <= limit - 1
  const int last = (limit - 1 - start) / s;
  if (start > limit - 1) {
    h = 0;
  } else if (last + 1 < h) {
    h = last + 1;
  }
  *lo = std::min(l, positions);
  *hi = std::max(h, *lo);
}

template <class T>
void im2col(const ConvGeom& g, const T* src, T* col) {
  for (int c = 0; c < g.C; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = col + ((static_cast<size_t>(c) * g.k + ki) * g.k + kj) * g.col_cols();
        int wlo, whi;
        valid_range(kj, g.s, g.p, g.W, g.OW, &wlo, &whi);
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.s - g.p + ki;
          T* out = row + static_cast<size_t>(oh) * g.OW;
          if (ih < 0 || ih >= g.H) {
            std::fill(out, out + g.OW, T(0));
            continue;
          }
          const T* in = src + (static_cast<size_t>(c) * g.H + ih) * g.W - g.p + kj;
          std::fill(out, out + wlo, T(0));
          if (g.s == 1) {
            std::copy(in + wlo, in + whi, out + wlo);
          } else if (g.s == 2) {
            for (int ow = wlo; ow < whi; ++ow) out[ow] = in[2 * ow];
          } else {
            for (int ow = wlo; ow < whi; ++ow) out[ow] = in[g.s * ow];
          }
          std::fill(out + whi, out + g.OW, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* col, T* dst) {
  for (int c = 0; c < g.C; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((static_cast<size_t>(c) * g.k + ki) * g.k + kj) * g.col_cols();
        int wlo, whi;
        valid_range(kj, g.s, g.p, g.W, g.OW, &wlo, &whi);
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.s - g.p + ki;
          if (ih < 0 || ih >= g.H) continue;
          const T* in = row + static_cast<size_t>(oh) * g.OW;
          T* out = dst + (static_cast<size_t>(c) * g.H + ih) * g.W - g.p + kj;
          if (g.s == 1) {
            for (int ow = wlo; ow < whi; ++ow) out[ow] += in[ow];
          } else if (g.s == 2) {
            for (int ow = wlo; ow < whi; ++ow) out[2 * ow] += in[ow];
          } else {
            for (int ow = wlo; ow < whi; ++ow) out[g.s * ow] += in[ow];
          }
        }
      }
    }
  }
}

// Ordered reduction of per-sample partials so results do not depend on the
// thread count.
template <class T>
void reduce_into(std::vector<T>& acc, const std::vector<std::vector<T>>& parts) {
  for (const auto& part : parts) {
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += part[i];
  }
}

// Reusable per-thread column scratch; every caller fully overwrites the
// region it maps, so stale contents never leak.
template <class T>
T* col_scratch(int slot, size_t n) {
  thread_local std::array<std::vector<T>, 2> bufs;
  auto& b = bufs[static_cast<size_t>(slot)];
  if (b.size() < n) b.resize(n);
  return b.data();
}

}  // namespace

template <class T>
void backward(const TensorPtr<T>& root) {
  if (root->numel() != 1) {
    fail(ErrorCategory::shape, "backward: root must be scalar, got " + root->shape.str());
  }
  std::vector<TensorNode<T>*> order;
  {
    std::unordered_set<TensorNode<T>*> visited;
    struct Frame {
      TensorNode<T>* node;
      size_t next;
    };
    std::vector<Frame> stack;
    visited.insert(root.get());
    stack.push_back({root.get(), 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        TensorNode<T>* p = f.node->parents[f.next++].get();
        if (visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }
  for (TensorNode<T>* n : order) {
    if (n->requires_grad) n->grad.assign(n->value.size(), T(0));
  }
  if (!root->requires_grad) return;  // nothing differentiable upstream
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
  }
}

template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, int stride, int pad) {
  check_4d(x, "conv2d input");
  check_4d(w, "conv2d weight");
  if (stride != 1 && stride != 2) fail(ErrorCategory::shape, "conv2d: stride must be 1 or 2");
  if (pad < 0) fail(ErrorCategory::shape, "conv2d: pad must be >= 0");
  const int N = x->shape.d[0], Cin = x->shape.d[1], H = x->shape.d[2], W = x->shape.d[3];
  const int Cout = w->shape.d[0], k = w->shape.d[2];
  if (w->shape.d[1] != Cin || w->shape.d[3] != k) {
    fail(ErrorCategory::shape, "conv2d: weight " + w->shape.str() +
                                   " incompatible with input " + x->shape.str());
  }
  if (b->numel() != Cout) fail(ErrorCategory::shape, "conv2d: bias size mismatch");
  const int OH = (H + 2 * pad - k) / stride + 1;
  const int OW = (W + 2 * pad - k) / stride + 1;
  if (OH <= 0 || OW <= 0) fail(ErrorCategory::shape, "conv2d: empty output");
  const ConvGeom g{Cin, H, W, k, stride, pad, OH, OW};

  auto out = make_tensor<T>({N, Cout, OH, OW});
  out->requires_grad = x->requires_grad || w->requires_grad || b->requires_grad;
  const long cc = g.col_cols();

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    std::vector<T> col(static_cast<size_t>(g.col_rows()) * cc);
    im2col(g, x->value.data() + x->at(n, 0, 0, 0), col.data());
    CMapMat<T> wm(w->value.data(), Cout, g.col_rows());
    CMapMat<T> cm(col.data(), g.col_rows(), cc);
    MapMat<T> ym(out->value.data() + out->at(n, 0, 0, 0), Cout, cc);
    ym.noalias() = wm * cm;
    for (int co = 0; co < Cout; ++co) ym.row(co).array() += b->value[co];
  }

  if (out->requires_grad) {
    out->parents = {x, w, b};
    TensorPtr<T> xp = x, wp = w, bp = b;
    out->backward_fn = [xp, wp, bp, g, N, Cout](TensorNode<T>& self) {
      const long cc = g.col_cols();
      const long cr = g.col_rows();
      std::vector<std::vector<T>> dw_parts, db_parts;
      if (wp->requires_grad) dw_parts.assign(N, std::vector<T>(wp->value.size(), T(0)));
      if (bp->requires_grad) db_parts.assign(N, std::vector<T>(bp->value.size(), T(0)));

#pragma omp parallel for schedule(static)
      for (int n = 0; n < N; ++n) {
        CMapMat<T> dym(self.grad.data() + self.at(n, 0, 0, 0), Cout, cc);
        if (wp->requires_grad || bp->requires_grad) {
          std::vector<T> col(static_cast<size_t>(cr) * cc);
          im2col(g, xp->value.data() + xp->at(n, 0, 0, 0), col.data());
          if (wp->requires_grad) {
            CMapMat<T> cm(col.data(), cr, cc);
            MapMat<T> dwm(dw_parts[n].data(), Cout, cr);
            dwm.noalias() = dym * cm.transpose();
          }
          if (bp->requires_grad) {
            for (int co = 0; co < Cout; ++co) db_parts[n][co] = dym.row(co).sum();
          }
        }
        if (xp->requires_grad) {
          std::vector<T> dcol(static_cast<size_t>(cr) * cc);
          CMapMat<T> wm(wp->value.data(), Cout, cr);
          MapMat<T> dcm(dcol.data(), cr, cc);
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(g, dcol.data(), xp->grad.data() + xp->at(n, 0, 0, 0));
        }
      }
      if (wp->requires_grad) reduce_into(wp->grad, dw_parts);
      if (bp->requires_grad) reduce_into(bp->grad, db_parts);
    };
  }
  return out;
}

template <class T>
TensorPtr<T> deconv2d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                      const TensorPtr<T>& b, int stride, int pad) {
  check_4d(x, "deconv2d input");
  check_4d(w, "deconv2d weight");
  if (stride != 1 && stride != 2) fail(ErrorCategory::shape, "deconv2d: stride must be 1 or 2");
  if (pad < 0) fail(ErrorCategory::shape, "deconv2d: pad must be >= 0");
  const int N = x->shape.d[0], Cin = x->shape.d[1], H = x->shape.d[2], W = x->shape.d[3];
  const int Cout = w->shape.d[1], k = w->shape.d[2];
  if (w->shape.d[0] != Cin || w->shape.d[3] != k) {
    fail(ErrorCategory::shape, "deconv2d: weight " + w->shape.str() +
                                   " incompatible with input " + x->shape.str());
  }
  if (b->numel() != Cout) fail(ErrorCategory::shape, "deconv2d: bias size mismatch");
  const int OH = (H - 1) * stride - 2 * pad + k;
  const int OW = (W - 1) * stride - 2 * pad + k;
  if (OH <= 0 || OW <= 0) fail(ErrorCategory::shape, "deconv2d: empty output");
  // Image side is the (larger) output grid; positions are input pixels.
  const ConvGeom g{Cout, OH, OW, k, stride, pad, H, W};

  auto out = make_tensor<T>({N, Cout, OH, OW});
  out->requires_grad = x->requires_grad || w->requires_grad || b->requires_grad;
  const long cc = g.col_cols();   // H * W
  const long cr = g.col_rows();   // Cout * k * k

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    std::vector<T> col(static_cast<size_t>(cr) * cc);
    CMapMat<T> wm(w->value.data(), Cin, cr);
    CMapMat<T> xm(x->value.data() + x->at(n, 0, 0, 0), Cin, cc);
    MapMat<T> cm(col.data(), cr, cc);
    cm.noalias() = wm.transpose() * xm;
    T* y = out->value.data() + out->at(n, 0, 0, 0);
    col2im_add(g, col.data(), y);
    for (int co = 0; co < Cout; ++co) {
      T* plane = y + static_cast<size_t>(co) * OH * OW;
      const T bias = b->value[co];
      for (long i = 0; i < static_cast<long>(OH) * OW; ++i) plane[i] += bias;
    }
  }

  if (out->requires_grad) {
    out->parents = {x, w, b};
    TensorPtr<T> xp = x, wp = w, bp = b;
    out->backward_fn = [xp, wp, bp, g, N, Cin, Cout](TensorNode<T>& self) {
      const long cc = g.col_cols();
      const long cr = g.col_rows();
      std::vector<std::vector<T>> dw_parts, db_parts;
      if (wp->requires_grad) dw_parts.assign(N, std::vector<T>(wp->value.size(), T(0)));
      if (bp->requires_grad) db_parts.assign(N, std::vector<T>(bp->value.size(), T(0)));

#pragma omp parallel for schedule(static)
      for (int n = 0; n < N; ++n) {
        std::vector<T> dcol(static_cast<size_t>(cr) * cc);
        im2col(g, self.grad.data() + self.at(n, 0, 0, 0), dcol.data());
        CMapMat<T> dcm(dcol.data(), cr, cc);
        if (xp->requires_grad) {
          CMapMat<T> wm(wp->value.data(), Cin, cr);
          MapMat<T> dxm(xp->grad.data() + xp->at(n, 0, 0, 0), Cin, cc);
          dxm.noalias() += wm * dcm;
        }
        if (wp->requires_grad) {
          CMapMat<T> xm(xp->value.data() + xp->at(n, 0, 0, 0), Cin, cc);
          MapMat<T> dwm(dw_parts[n].data(), Cin, cr);
          dwm.noalias() = xm * dcm.transpose();
        }
        if (bp->requires_grad) {
          const T* dy = self.grad.data() + self.at(n, 0, 0, 0);
          for (int co = 0; co < Cout; ++co) {
            T acc(0);
            const T* plane = dy + static_cast<size_t>(co) * g.H * g.W;
            for (long i = 0; i < static_cast<long>(g.H) * g.W; ++i) acc += plane[i];
            db_parts[n][co] = acc;
          }
        }
      }
      if (wp->requires_grad) reduce_into(wp->grad, dw_parts);
      if (bp->requires_grad) reduce_into(bp->grad, db_parts);
    };
  }
  return out;
}

template <class T>
BatchNormState<T> BatchNormState<T>::create(int channels) {
  BatchNormState<T> s;
  s.running_mean = make_tensor<T>({channels});
  s.running_var = make_tensor<T>({channels});
  for (auto& v : s.running_var->value) v = T(1);
  s.steps = make_tensor<T>({1});
  return s;
}

template <class T>
TensorPtr<T> batchnorm(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                       const TensorPtr<T>& beta, BatchNormState<T>& state,
                       BnMode mode, double momentum, double eps, bool update_running) {
  check_4d(x, "batchnorm input");
  const int N = x->shape.d[0], C = x->shape.d[1], H = x->shape.d[2], W = x->shape.d[3];
  if (gamma->numel() != C || beta->numel() != C) {
    fail(ErrorCategory::shape, "batchnorm: gamma/beta must have one entry per channel");
  }
  if (!state.running_mean || state.running_mean->numel() != C) {
    fail(ErrorCategory::state, "batchnorm: state not initialized for " +
                                   std::to_string(C) + " channels");
  }
  if (mode == BnMode::eval && state.step_count() == 0) {
    fail(ErrorCategory::state, "batchnorm: eval mode before any train step");
  }
  const long plane = static_cast<long>(H) * W;
  const long m = static_cast<long>(N) * plane;

  auto out = make_tensor<T>(x->shape);
  out->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;

  std::vector<double> mean(C, 0.0), invstd(C, 0.0);
  if (mode == BnMode::train) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sumsq = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* p = x->value.data() + x->at(n, c, 0, 0);
        for (long i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += double(p[i]) * p[i];
        }
      }
      const double mu = sum / m;
      const double var = std::max(0.0, sumsq / m - mu * mu);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
    }
    if (update_running) {
      for (int c = 0; c < C; ++c) {
        const double var = 1.0 / (invstd[c] * invstd[c]) - eps;
        state.running_mean->value[c] =
            T((1.0 - momentum) * state.running_mean->value[c] + momentum * mean[c]);
        state.running_var->value[c] =
            T((1.0 - momentum) * state.running_var->value[c] + momentum * var);
      }
      state.steps->value[0] += T(1);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean->value[c];
      invstd[c] = 1.0 / std::sqrt(double(state.running_var->value[c]) + eps);
    }
  }

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const double g = gamma->value[c], bt = beta->value[c];
    for (int n = 0; n < N; ++n) {
      const T* p = x->value.data() + x->at(n, c, 0, 0);
      T* q = out->value.data() + out->at(n, c, 0, 0);
      for (long i = 0; i < plane; ++i) {
        q[i] = T(g * ((p[i] - mean[c]) * invstd[c]) + bt);
      }
    }
  }

  if (out->requires_grad) {
    out->parents = {x, gamma, beta};
    TensorPtr<T> xp = x, gp = gamma, bp = beta;
    const bool train_mode = mode == BnMode::train;
    out->backward_fn = [xp, gp, bp, mean, invstd, N, C, plane, m,
                        train_mode](TensorNode<T>& self) {
#pragma omp parallel for schedule(static)
      for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
          const T* dy = self.grad.data() + self.at(n, c, 0, 0);
          const T* xv = xp->value.data() + xp->at(n, c, 0, 0);
          for (long i = 0; i < plane; ++i) {
            const double xhat = (xv[i] - mean[c]) * invstd[c];
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xhat;
          }
        }
        if (gp->requires_grad) gp->grad[c] += T(sum_dy_xhat);
        if (bp->requires_grad) bp->grad[c] += T(sum_dy);
        if (xp->requires_grad) {
          const double g = gp->value[c];
          for (int n = 0; n < N; ++n) {
            T* dx = xp->grad.data() + xp->at(n, c, 0, 0);
            const T* dy = self.grad.data() + self.at(n, c, 0, 0);
            const T* xv = xp->value.data() + xp->at(n, c, 0, 0);
            if (train_mode) {
              for (long i = 0; i < plane; ++i) {
                const double xhat = (xv[i] - mean[c]) * invstd[c];
                dx[i] += T(g * invstd[c] *
                           (dy[i] - sum_dy / m - xhat * sum_dy_xhat / m));
              }
            } else {
              for (long i = 0; i < plane; ++i) {
                dx[i] += T(g * invstd[c] * dy[i]);
              }
            }
          }
        }
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  out->requires_grad = x->requires_grad;
  const size_t n = x->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  if (out->requires_grad) {
    out->parents = {x};
    TensorPtr<T> xp = x;
    out->backward_fn = [xp](TensorNode<T>& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) {
        if (xp->value[i] > T(0)) xp->grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& xs) {
  if (xs.empty()) fail(ErrorCategory::shape, "concat: no inputs");
  check_4d(xs[0], "concat input");
  const int N = xs[0]->shape.d[0], H = xs[0]->shape.d[2], W = xs[0]->shape.d[3];
  int C = 0;
  bool needs_grad = false;
  for (const auto& x : xs) {
    check_4d(x, "concat input");
    if (x->shape.d[0] != N || x->shape.d[2] != H || x->shape.d[3] != W) {
      fail(ErrorCategory::shape, "concat: non-channel dims differ: " +
                                     xs[0]->shape.str() + " vs " + x->shape.str());
    }
    C += x->shape.d[1];
    needs_grad = needs_grad || x->requires_grad;
  }
  auto out = make_tensor<T>({N, C, H, W});
  out->requires_grad = needs_grad;
  const long plane = static_cast<long>(H) * W;
  for (int n = 0; n < N; ++n) {
    long co = 0;
    for (const auto& x : xs) {
      const int ci = x->shape.d[1];
      std::memcpy(out->value.data() + out->at(n, static_cast<int>(co), 0, 0),
                  x->value.data() + x->at(n, 0, 0, 0),
                  sizeof(T) * static_cast<size_t>(ci) * plane);
      co += ci;
    }
  }
  if (needs_grad) {
    out->parents = xs;
    std::vector<TensorPtr<T>> parents = xs;
    out->backward_fn = [parents, N, plane](TensorNode<T>& self) {
      for (int n = 0; n < N; ++n) {
        long co = 0;
        for (const auto& x : parents) {
          const int ci = x->shape.d[1];
          if (x->requires_grad) {
            const T* src = self.grad.data() + self.at(n, static_cast<int>(co), 0, 0);
            T* dst = x->grad.data() + x->at(n, 0, 0, 0);
            for (long i = 0; i < ci * plane; ++i) dst[i] += src[i];
          }
          co += ci;
        }
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> upsample_bilinear_2x(const TensorPtr<T>& x) {
  check_4d(x, "upsample input");
  const int N = x->shape.d[0], C = x->shape.d[1], H = x->shape.d[2], W = x->shape.d[3];
  auto out = make_tensor<T>({N, C, 2 * H, 2 * W});
  out->requires_grad = x->requires_grad;

  // align_corners = false sampling positions for a fixed 2x factor.
  auto src_coord = [](int o) { return 0.5 * o - 0.25; };
  const long planes = static_cast<long>(N) * C;

#pragma omp parallel for schedule(static)
  for (long nc = 0; nc < planes; ++nc) {
    const T* src = x->value.data() + static_cast<size_t>(nc) * H * W;
    T* dst = out->value.data() + static_cast<size_t>(nc) * 4 * H * W;
    for (int oh = 0; oh < 2 * H; ++oh) {
      const double sh = src_coord(oh);
      int h0 = static_cast<int>(std::floor(sh));
      const double fh = sh - h0;
      const int h0c = std::clamp(h0, 0, H - 1);
      const int h1c = std::clamp(h0 + 1, 0, H - 1);
      for (int ow = 0; ow < 2 * W; ++ow) {
        const double sw = src_coord(ow);
        int w0 = static_cast<int>(std::floor(sw));
        const double fw = sw - w0;
        const int w0c = std::clamp(w0, 0, W - 1);
        const int w1c = std::clamp(w0 + 1, 0, W - 1);
        dst[static_cast<size_t>(oh) * 2 * W + ow] =
            T((1 - fh) * (1 - fw) * src[static_cast<size_t>(h0c) * W + w0c] +
              (1 - fh) * fw * src[static_cast<size_t>(h0c) * W + w1c] +
              fh * (1 - fw) * src[static_cast<size_t>(h1c) * W + w0c] +
              fh * fw * src[static_cast<size_t>(h1c) * W + w1c]);
      }
    }
  }

  if (out->requires_grad) {
    out->parents = {x};
    TensorPtr<T> xp = x;
    out->backward_fn = [xp, N, C, H, W, src_coord](TensorNode<T>& self) {
      const long planes = static_cast<long>(N) * C;
#pragma omp parallel for schedule(static)
      for (long nc = 0; nc < planes; ++nc) {
        T* dsrc = xp->grad.data() + static_cast<size_t>(nc) * H * W;
        const T* ddst = self.grad.data() + static_cast<size_t>(nc) * 4 * H * W;
        for (int oh = 0; oh < 2 * H; ++oh) {
          const double sh = src_coord(oh);
          int h0 = static_cast<int>(std::floor(sh));
          const double fh = sh - h0;
          const int h0c = std::clamp(h0, 0, H - 1);
          const int h1c = std::clamp(h0 + 1, 0, H - 1);
          for (int ow = 0; ow < 2 * W; ++ow) {
            const double sw = src_coord(ow);
            int w0 = static_cast<int>(std::floor(sw));
            const double fw = sw - w0;
            const int w0c = std::clamp(w0, 0, W - 1);
            const int w1c = std::clamp(w0 + 1, 0, W - 1);
            const T g = ddst[static_cast<size_t>(oh) * 2 * W + ow];
            dsrc[static_cast<size_t>(h0c) * W + w0c] += T((1 - fh) * (1 - fw)) * g;
            dsrc[static_cast<size_t>(h0c) * W + w1c] += T((1 - fh) * fw) * g;
            dsrc[static_cast<size_t>(h1c) * W + w0c] += T(fh * (1 - fw)) * g;
            dsrc[static_cast<size_t>(h1c) * W + w1c] += T(fh * fw) * g;
          }
        }
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> downsample_nearest(const TensorPtr<T>& x, int factor) {
  check_4d(x, "downsample input");
  if (factor < 1) fail(ErrorCategory::shape, "downsample_nearest: factor must be >= 1");
  const int N = x->shape.d[0], C = x->shape.d[1], H = x->shape.d[2], W = x->shape.d[3];
  if (H % factor != 0 || W % factor != 0) {
    fail(ErrorCategory::shape, "downsample_nearest: " + x->shape.str() +
                                   " not divisible by factor " + std::to_string(factor));
  }
  const int OH = H / factor, OW = W / factor;
  auto out = make_tensor<T>({N, C, OH, OW});
  out->requires_grad = x->requires_grad;
  const long planes = static_cast<long>(N) * C;
  for (long nc = 0; nc < planes; ++nc) {
    const T* src = x->value.data() + static_cast<size_t>(nc) * H * W;
    T* dst = out->value.data() + static_cast<size_t>(nc) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        dst[static_cast<size_t>(oh) * OW + ow] =
            src[static_cast<size_t>(oh) * factor * W + ow * factor];
      }
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    TensorPtr<T> xp = x;
    out->backward_fn = [xp, planes, H, W, OH, OW, factor](TensorNode<T>& self) {
      for (long nc = 0; nc < planes; ++nc) {
        T* dsrc = xp->grad.data() + static_cast<size_t>(nc) * H * W;
        const T* ddst = self.grad.data() + static_cast<size_t>(nc) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          for (int ow = 0; ow < OW; ++ow) {
            dsrc[static_cast<size_t>(oh) * factor * W + ow * factor] +=
                ddst[static_cast<size_t>(oh) * OW + ow];
          }
        }
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> epe_loss(const TensorPtr<T>& pred, const TensorPtr<T>& gt) {
  if (pred->shape != gt->shape) {
    fail(ErrorCategory::shape, "epe_loss: shapes differ: " + pred->shape.str() +
                                   " vs " + gt->shape.str());
  }
  int N = 1, C = 0, H = 0, W = 0;
  if (pred->shape.ndim == 4) {
    N = pred->shape.d[0];
    C = pred->shape.d[1];
    H = pred->shape.d[2];
    W = pred->shape.d[3];
  } else if (pred->shape.ndim == 3) {
    C = pred->shape.d[0];
    H = pred->shape.d[1];
    W = pred->shape.d[2];
  } else {
    fail(ErrorCategory::shape, "epe_loss: expected (N,2,H,W) or (2,H,W)");
  }
  if (C != 2) fail(ErrorCategory::shape, "epe_loss: needs exactly 2 channels");

  const long plane = static_cast<long>(H) * W;
  const long count = static_cast<long>(N) * plane;
  const double delta = kEpeDelta;

  auto out = make_tensor<T>({1});
  out->requires_grad = pred->requires_grad || gt->requires_grad;
  double sum = 0.0;
  for (int n = 0; n < N; ++n) {
    const T* pz = pred->value.data() + static_cast<size_t>(n) * 2 * plane;
    const T* px = pz + plane;
    const T* gz = gt->value.data() + static_cast<size_t>(n) * 2 * plane;
    const T* gx = gz + plane;
    for (long i = 0; i < plane; ++i) {
      const double dz = double(pz[i]) - gz[i];
      const double dx = double(px[i]) - gx[i];
      sum += std::sqrt(dz * dz + dx * dx + delta * delta) - delta;
    }
  }
  out->value[0] = T(sum / count);

  if (out->requires_grad) {
    out->parents = {pred, gt};
    TensorPtr<T> pp = pred, gp = gt;
    out->backward_fn = [pp, gp, N, plane, count, delta](TensorNode<T>& self) {
      const T gout_scaled = T(double(self.grad[0]) / count);
      const T d2 = T(delta * delta);
      for (int n = 0; n < N; ++n) {
        const size_t base = static_cast<size_t>(n) * 2 * plane;
        const T* pz = pp->value.data() + base;
        const T* px = pz + plane;
        const T* gz = gp->value.data() + base;
        const T* gx = gz + plane;
        for (long i = 0; i < plane; ++i) {
          const T dz = pz[i] - gz[i];
          const T dx = px[i] - gx[i];
          const T scale = gout_scaled / std::sqrt(dz * dz + dx * dx + d2);
          const T gz_ = scale * dz;
          const T gx_ = scale * dx;
          if (pp->requires_grad) {
            pp->grad[base + i] += gz_;
            pp->grad[base + plane + i] += gx_;
          }
          if (gp->requires_grad) {
            gp->grad[base + i] -= gz_;
            gp->grad[base + plane + i] -= gx_;
          }
        }
      }
    };
  }
  return out;
}

template <class T>
Parameter<T>::Parameter(std::string n, TensorPtr<T> t, bool train)
    : name(std::move(n)), tensor(std::move(t)), trainable(train) {
  tensor->requires_grad = trainable;
  m.assign(tensor->value.size(), T(0));
  v.assign(tensor->value.size(), T(0));
}

template <class T>
void adam_step(const std::vector<Parameter<T>*>& params, double lr, double beta1,
               double beta2, double eps) {
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    if (p->tensor->grad.empty()) {
      fail(ErrorCategory::state, "adam_step: missing gradient for " + p->name);
    }
    p->step++;
    const double bc1 = 1.0 - std::pow(beta1, double(p->step));
    const double bc2 = 1.0 - std::pow(beta2, double(p->step));
    const size_t n = p->tensor->value.size();
    for (size_t i = 0; i < n; ++i) {
      const double g = p->tensor->grad[i];
      const double m = beta1 * double(p->m[i]) + (1.0 - beta1) * g;
      const double v = beta2 * double(p->v[i]) + (1.0 - beta2) * g * g;
      p->m[i] = T(m);
      p->v[i] = T(v);
      p->tensor->value[i] -= T(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

template <class T>
void he_fill(TensorNode<T>& t, long fan_in, std::uint64_t seed) {
  if (fan_in <= 0) fail(ErrorCategory::range, "he_fill: fan_in must be positive");
  SplitMix64 rng(seed);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : t.value) v = T(stddev * rng.normal());
}

TensorPtr<double> he_init(const TensorShape& shape, long fan_in, std::uint64_t seed) {
  auto t = make_tensor<double>(shape);
  he_fill(*t, fan_in, seed);
  return t;
}

double grad_check(const std::function<TensorPtr<double>()>& build,
                  const std::vector<TensorPtr<double>>& inputs, double eps) {
  auto root = build();
  backward(root);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (!in->requires_grad || in->grad.empty()) {
      fail(ErrorCategory::state, "grad_check: input without gradient");
    }
    analytic.push_back(in->grad);
  }
  double max_rel = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto& val = inputs[t]->value;
    for (size_t i = 0; i < val.size(); ++i) {
      const double saved = val[i];
      val[i] = saved + eps;
      const double f1 = build()->value[0];
      val[i] = saved - eps;
      const double f2 = build()->value[0];
      val[i] = saved;
      const double numeric = (f1 - f2) / (2.0 * eps);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

void write_u32_raw(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void write_u64_raw(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint32_t read_u32_raw(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) fail(ErrorCategory::format, "truncated checkpoint: " + path);
  return v;
}

std::uint64_t read_u64_raw(std::ifstream& in, const std::string& path) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) fail(ErrorCategory::format, "truncated checkpoint: " + path);
  return v;
}

template <class T>
void write_f64_array(std::ofstream& out, const std::vector<T>& vals) {
  for (T v : vals) {
    const double d = double(v);
    out.write(reinterpret_cast<const char*>(&d), 8);
  }
}

template <class T>
void read_f64_array(std::ifstream& in, std::vector<T>& vals, const std::string& path) {
  for (auto& v : vals) {
    double d = 0.0;
    in.read(reinterpret_cast<char*>(&d), 8);
    if (!in) fail(ErrorCategory::format, "truncated checkpoint: " + path);
    v = T(d);
  }
}

}  // namespace

template <class T>
void save_checkpoint(const std::vector<Parameter<T>*>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  out.write("CKPT1\n", 6);
  write_u32_raw(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter<T>* p : params) {
    write_u32_raw(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u32_raw(out, static_cast<std::uint32_t>(p->tensor->shape.ndim));
    for (int i = 0; i < p->tensor->shape.ndim; ++i) {
      write_u32_raw(out, static_cast<std::uint32_t>(p->tensor->shape.d[i]));
    }
    write_f64_array(out, p->tensor->value);
    write_f64_array(out, p->m);
    write_f64_array(out, p->v);
    write_u64_raw(out, static_cast<std::uint64_t>(p->step));
  }
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

template <class T>
void load_checkpoint(const std::vector<Parameter<T>*>& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "CKPT1\n", 6) != 0) {
    fail(ErrorCategory::format, "missing CKPT1 header: " + path);
  }
  const std::uint32_t count = read_u32_raw(in, path);
  if (count != params.size()) {
    fail(ErrorCategory::format, "checkpoint " + path + " holds " + std::to_string(count) +
                                    " parameters, expected " + std::to_string(params.size()));
  }
  std::map<std::string, Parameter<T>*> by_name;
  for (Parameter<T>* p : params) by_name[p->name] = p;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32_raw(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) fail(ErrorCategory::format, "truncated checkpoint: " + path);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      fail(ErrorCategory::format, "checkpoint " + path + ": unknown parameter " + name);
    }
    Parameter<T>* p = it->second;
    TensorShape shape;
    shape.ndim = static_cast<int>(read_u32_raw(in, path));
    if (shape.ndim < 0 || shape.ndim > 4) {
      fail(ErrorCategory::format, "checkpoint " + path + ": bad rank for " + name);
    }
    for (int d = 0; d < shape.ndim; ++d) {
      shape.d[d] = static_cast<int>(read_u32_raw(in, path));
    }
    if (shape != p->tensor->shape) {
      fail(ErrorCategory::shape, "checkpoint " + path + ": parameter " + name +
                                     " has shape " + shape.str() + ", expected " +
                                     p->tensor->shape.str());
    }
    read_f64_array(in, p->tensor->value, path);
    read_f64_array(in, p->m, path);
    read_f64_array(in, p->v, path);
    p->step = static_cast<long>(read_u64_raw(in, path));
  }
}

// Explicit instantiations: the engine runs in double (verification default)
// and float (fast training path).
// A handful of scalar helpers used by the network-level code.
template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) {
    fail(ErrorCategory::shape, "add: shapes differ: " + a->shape.str() + " vs " +
                                   b->shape.str());
  }
  auto out = make_tensor<T>(a->shape);
  out->requires_grad = a->requires_grad || b->requires_grad;
  for (size_t i = 0; i < a->value.size(); ++i) out->value[i] = a->value[i] + b->value[i];
  if (out->requires_grad) {
    out->parents = {a, b};
    TensorPtr<T> ap = a, bp = b;
    out->backward_fn = [ap, bp](TensorNode<T>& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) {
        if (ap->requires_grad) ap->grad[i] += self.grad[i];
        if (bp->requires_grad) bp->grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

#define LIDARMOTION_INSTANTIATE(T)                                                  \
  template TensorPtr<T> make_tensor<T>(const TensorShape&, bool);                    \
  template void backward<T>(const TensorPtr<T>&);                                    \
  template struct BatchNormState<T>;                                                 \
  template TensorPtr<T> add<T>(const TensorPtr<T>&, const TensorPtr<T>&);            \
  template TensorPtr<T> conv2d<T>(const TensorPtr<T>&, const TensorPtr<T>&,          \
                                  const TensorPtr<T>&, int, int);                    \
  template TensorPtr<T> deconv2d<T>(const TensorPtr<T>&, const TensorPtr<T>&,        \
                                    const TensorPtr<T>&, int, int);                  \
  template TensorPtr<T> batchnorm<T>(const TensorPtr<T>&, const TensorPtr<T>&,       \
                                     const TensorPtr<T>&, BatchNormState<T>&,        \
                                     BnMode, double, double, bool);                  \
  template TensorPtr<T> relu<T>(const TensorPtr<T>&);                                \
  template TensorPtr<T> concat<T>(const std::vector<TensorPtr<T>>&);                 \
  template TensorPtr<T> upsample_bilinear_2x<T>(const TensorPtr<T>&);                \
  template TensorPtr<T> downsample_nearest<T>(const TensorPtr<T>&, int);             \
  template TensorPtr<T> epe_loss<T>(const TensorPtr<T>&, const TensorPtr<T>&);       \
  template struct Parameter<T>;                                                      \
  template void adam_step<T>(const std::vector<Parameter<T>*>&, double, double,      \
                             double, double);                                        \
  template void he_fill<T>(TensorNode<T>&, long, std::uint64_t);                     \
  template void save_checkpoint<T>(const std::vector<Parameter<T>*>&,                \
                                   const std::string&);                              \
  template void load_checkpoint<T>(const std::vector<Parameter<T>*>&,                \
                                   const std::string&);

LIDARMOTION_INSTANTIATE(double)
LIDARMOTION_INSTANTIATE(float)

#undef LIDARMOTION_INSTANTIATE

}  // namespace lidarmotion
