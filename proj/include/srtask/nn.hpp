// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal NCHW double-precision layers with hand-written backward passes.
// Forward functions never mutate parameters, so a frozen network can be
// shared between threads; per-call activations live in caller-owned caches.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srtask/norm_stats.hpp"

namespace srtask {
class Rng;
}

namespace srtask::nn {

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t image_size() const { return plane() * c; }
  double* image(int i) { return v.data() + image_size() * i; }
  const double* image(int i) const { return v.data() + image_size() * i; }
  double& at(int i, int ch, int y, int x) { return v[image_size() * i + plane() * ch + static_cast<std::size_t>(y) * w + x]; }
  double at(int i, int ch, int y, int x) const {
    return v[image_size() * i + plane() * ch + static_cast<std::size_t>(y) * w + x];
  }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.n, t.c, t.h, t.w); }
};

void add_inplace(Tensor& dst, const Tensor& src);

/// 2-D convolution, stride 1, zero padding k/2. weight is (out, in, k, k).
struct Conv2d {
  int in = 0, out = 0, k = 3;
  Tensor weight;
  Tensor bias;  // (1, out, 1, 1) or empty

  Conv2d() = default;
  Conv2d(int in_, int out_, int k_, bool with_bias);
  void init_he(Rng& rng);
};

Tensor conv_forward(const Conv2d& layer, const Tensor& x);
// Returns dL/dx; accumulates parameter gradients into grad when non-null.
Tensor conv_backward(const Conv2d& layer, const Tensor& x, const Tensor& dy, Conv2d* grad, bool need_dx = true);

/// Transposed convolution, kernel 2, stride 2 (doubles H and W).
/// weight is stored as (out, 2, 2, in).
struct UpConv2x2 {
  int in = 0, out = 0;
  Tensor weight;
  Tensor bias;

  UpConv2x2() = default;
  UpConv2x2(int in_, int out_);
  void init_he(Rng& rng);
};

Tensor upconv_forward(const UpConv2x2& layer, const Tensor& x);
Tensor upconv_backward(const UpConv2x2& layer, const Tensor& x, const Tensor& dy, UpConv2x2* grad);

enum class BnMode {
  Train,      // normalize with batch statistics (biased variance)
  Eval,       // normalize with running statistics
  Calibrate,  // normalize with the batch statistics that will be installed (unbiased variance)
  Collect,    // normalize with running statistics, record input statistics
};

struct BatchNorm {
  int c = 0;
  double eps = 1e-5;
  Tensor gamma, beta, running_mean, running_var;

  BatchNorm() = default;
  explicit BatchNorm(int channels);
};

struct BnCache {
  Tensor xhat;
  std::vector<double> inv_std;
  BnMode mode = BnMode::Eval;
};

/// Per-forward bookkeeping shared by every BN layer in traversal order.
struct Pass {
  BnMode mode = BnMode::Eval;
  std::vector<NormStats> batch_stats;  // filled in Train and Calibrate modes
};

Tensor bn_forward(const BatchNorm& layer, const Tensor& x, Pass& pass, BnCache* cache);
Tensor bn_backward(const BatchNorm& layer, const BnCache& cache, const Tensor& dy, BatchNorm* grad);

Tensor relu_forward(const Tensor& x);
// y is the forward output.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

struct PoolCache {
  std::vector<std::uint8_t> argmax;
  int in_h = 0, in_w = 0;
};
Tensor maxpool2_forward(const Tensor& x, PoolCache* cache);
Tensor maxpool2_backward(const PoolCache& cache, const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int ca, Tensor& da, Tensor& db);

/// Rearranges (N, C*r*r, H, W) into (N, C, H*r, W*r).
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& y, int r);

/// Pads bottom/right by reflection so interior coordinates are unchanged.
Tensor reflect_pad(const Tensor& x, int pad_h, int pad_w);
Tensor reflect_pad_backward(const Tensor& dy, int h, int w);
Tensor crop(const Tensor& x, int h, int w);

double sigmoid(double z);
double softplus(double z);

/// Parameter view used by optimizers and serializers.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace srtask::nn
