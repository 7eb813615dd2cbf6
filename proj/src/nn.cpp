// SPDX-License-Identifier: Apache-2.0
#include "srtask/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "srtask/error.hpp"
#include "srtask/rng.hpp"

namespace srtask::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void im2col(const double* img, int C, int H, int W, int k, double* col) {
  const int p = k / 2;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  for (int ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * hw;
        const double* src = img + ci * hw;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - p;
          double* row = dst + static_cast<std::size_t>(y) * W;
          if (sy < 0 || sy >= H) {
            std::fill(row, row + W, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(sy) * W;
          for (int x = 0; x < W; ++x) {
            const int sx = x + kx - p;
            row[x] = (sx >= 0 && sx < W) ? srow[sx] : 0.0;
          }
        }
      }
}

void col2im(const double* col, int C, int H, int W, int k, double* img) {
  const int p = k / 2;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  for (int ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * hw;
        double* dst = img + ci * hw;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - p;
          if (sy < 0 || sy >= H) continue;
          const double* row = src + static_cast<std::size_t>(y) * W;
          double* drow = dst + static_cast<std::size_t>(sy) * W;
          for (int x = 0; x < W; ++x) {
            const int sx = x + kx - p;
            if (sx >= 0 && sx < W) drow[sx] += row[x];
          }
        }
      }
}

void he_fill(Tensor& t, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / fan_in);
  for (double& v : t.v) v = std * rng.normal();
}

}  // namespace

void add_inplace(Tensor& dst, const Tensor& src) {
  require(dst.same_shape(src), ErrorKind::Data, "tensor shape mismatch in add");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.v[i] += src.v[i];
}

Conv2d::Conv2d(int in_, int out_, int k_, bool with_bias) : in(in_), out(out_), k(k_), weight(out_, in_, k_, k_) {
  if (with_bias) bias = Tensor(1, out_, 1, 1);
}

void Conv2d::init_he(Rng& rng) {
  he_fill(weight, in * k * k, rng);
  bias.zero();
}

Tensor conv_forward(const Conv2d& layer, const Tensor& x) {
  require(x.c == layer.in, ErrorKind::Data,
          "conv expects " + std::to_string(layer.in) + " channels, got " + std::to_string(x.c));
  Tensor y(x.n, layer.out, x.h, x.w);
  const std::size_t hw = x.plane();
  const int rows = layer.in * layer.k * layer.k;
  std::vector<double> col;
  if (layer.k != 1) col.resize(static_cast<std::size_t>(rows) * hw);
  MapC wm(layer.weight.v.data(), layer.out, rows);
  for (int i = 0; i < x.n; ++i) {
    const double* src = x.image(i);
    if (layer.k != 1) {
      im2col(src, x.c, x.h, x.w, layer.k, col.data());
      src = col.data();
    }
    MapC cm(src, rows, static_cast<Eigen::Index>(hw));
    Map ym(y.image(i), layer.out, static_cast<Eigen::Index>(hw));
    ym.noalias() = wm * cm;
    if (!layer.bias.empty()) {
      for (int o = 0; o < layer.out; ++o) ym.row(o).array() += layer.bias.v[o];
    }
  }
  return y;
}

Tensor conv_backward(const Conv2d& layer, const Tensor& x, const Tensor& dy, Conv2d* grad, bool need_dx) {
  const std::size_t hw = x.plane();
  const int rows = layer.in * layer.k * layer.k;
  Tensor dx;
  if (need_dx) dx = Tensor(x.n, x.c, x.h, x.w);
  std::vector<double> col, dcol;
  if (layer.k != 1) {
    col.resize(static_cast<std::size_t>(rows) * hw);
    if (need_dx) dcol.resize(col.size());
  }
  MapC wm(layer.weight.v.data(), layer.out, rows);
  for (int i = 0; i < x.n; ++i) {
    MapC dym(dy.image(i), layer.out, static_cast<Eigen::Index>(hw));
    const double* src = x.image(i);
    if (grad) {
      if (layer.k != 1) {
        im2col(src, x.c, x.h, x.w, layer.k, col.data());
        src = col.data();
      }
      MapC cm(src, rows, static_cast<Eigen::Index>(hw));
      Map gw(grad->weight.v.data(), layer.out, rows);
      gw.noalias() += dym * cm.transpose();
      if (!layer.bias.empty()) {
        for (int o = 0; o < layer.out; ++o) grad->bias.v[o] += dym.row(o).sum();
      }
    }
    if (need_dx) {
      if (layer.k == 1) {
        Map dxm(dx.image(i), layer.in, static_cast<Eigen::Index>(hw));
        dxm.noalias() = wm.transpose() * dym;
      } else {
        Map dcm(dcol.data(), rows, static_cast<Eigen::Index>(hw));
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcol.data(), x.c, x.h, x.w, layer.k, dx.image(i));
      }
    }
  }
  return dx;
}

UpConv2x2::UpConv2x2(int in_, int out_) : in(in_), out(out_), weight(out_, 2, 2, in_), bias(1, out_, 1, 1) {}

void UpConv2x2::init_he(Rng& rng) {
  he_fill(weight, in, rng);
  bias.zero();
}

Tensor upconv_forward(const UpConv2x2& layer, const Tensor& x) {
  require(x.c == layer.in, ErrorKind::Data, "upconv channel mismatch");
  Tensor y(x.n, layer.out, x.h * 2, x.w * 2);
  const std::size_t hw = x.plane();
  MapC wm(layer.weight.v.data(), layer.out * 4, layer.in);
  RowMat y4(layer.out * 4, static_cast<Eigen::Index>(hw));
  for (int i = 0; i < x.n; ++i) {
    MapC xm(x.image(i), layer.in, static_cast<Eigen::Index>(hw));
    y4.noalias() = wm * xm;
    for (int o = 0; o < layer.out; ++o)
      for (int d = 0; d < 4; ++d) {
        const int dy = d / 2, dx = d % 2;
        const double b = layer.bias.v[o];
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) y.at(i, o, 2 * yy + dy, 2 * xx + dx) = y4(o * 4 + d, yy * x.w + xx) + b;
      }
  }
  return y;
}

Tensor upconv_backward(const UpConv2x2& layer, const Tensor& x, const Tensor& dy, UpConv2x2* grad) {
  Tensor dx(x.n, x.c, x.h, x.w);
  const std::size_t hw = x.plane();
  MapC wm(layer.weight.v.data(), layer.out * 4, layer.in);
  RowMat dy4(layer.out * 4, static_cast<Eigen::Index>(hw));
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < layer.out; ++o)
      for (int d = 0; d < 4; ++d) {
        const int oy = d / 2, ox = d % 2;
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) dy4(o * 4 + d, yy * x.w + xx) = dy.at(i, o, 2 * yy + oy, 2 * xx + ox);
      }
    MapC xm(x.image(i), layer.in, static_cast<Eigen::Index>(hw));
    if (grad) {
      Map gw(grad->weight.v.data(), layer.out * 4, layer.in);
      gw.noalias() += dy4 * xm.transpose();
      for (int o = 0; o < layer.out; ++o) grad->bias.v[o] += dy4.middleRows(o * 4, 4).sum();
    }
    Map dxm(dx.image(i), layer.in, static_cast<Eigen::Index>(hw));
    dxm.noalias() = wm.transpose() * dy4;
  }
  return dx;
}

BatchNorm::BatchNorm(int channels)
    : c(channels),
      gamma(1, channels, 1, 1, 1.0),
      beta(1, channels, 1, 1, 0.0),
      running_mean(1, channels, 1, 1, 0.0),
      running_var(1, channels, 1, 1, 1.0) {}

Tensor bn_forward(const BatchNorm& layer, const Tensor& x, Pass& pass, BnCache* cache) {
  require(x.c == layer.c, ErrorKind::Data, "batch norm channel mismatch");
  std::vector<double> mean(layer.c), var(layer.c);
  if (pass.mode == BnMode::Eval || pass.mode == BnMode::Collect) {
    mean = layer.running_mean.v;
    var = layer.running_var.v;
  }
  if (pass.mode != BnMode::Eval) {
    NormStats stats(layer.c);
    for (int i = 0; i < x.n; ++i)
      stats.add_planar({x.image(i), x.image_size()}, static_cast<std::int64_t>(x.plane()));
    if (pass.mode != BnMode::Collect)
      for (int ch = 0; ch < layer.c; ++ch) {
        mean[ch] = stats.mean(ch);
        var[ch] = pass.mode == BnMode::Train ? stats.population_variance(ch) : stats.variance(ch);
      }
    pass.batch_stats.push_back(std::move(stats));
  }
  std::vector<double> inv_std(layer.c);
  for (int ch = 0; ch < layer.c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + layer.eps);

  Tensor y(x.n, x.c, x.h, x.w);
  Tensor xhat;
  if (cache) xhat = Tensor(x.n, x.c, x.h, x.w);
  const std::size_t hw = x.plane();
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < layer.c; ++ch) {
      const double* src = x.image(i) + ch * hw;
      double* dst = y.image(i) + ch * hw;
      double* xh = cache ? xhat.image(i) + ch * hw : nullptr;
      const double m = mean[ch], s = inv_std[ch], g = layer.gamma.v[ch], b = layer.beta.v[ch];
      for (std::size_t p = 0; p < hw; ++p) {
        const double h = (src[p] - m) * s;
        if (xh) xh[p] = h;
        dst[p] = g * h + b;
      }
    }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = pass.mode;
  }
  return y;
}

Tensor bn_backward(const BatchNorm& layer, const BnCache& cache, const Tensor& dy, BatchNorm* grad) {
  const Tensor& xhat = cache.xhat;
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  const std::size_t hw = dy.plane();
  const double m = static_cast<double>(hw) * dy.n;
  for (int ch = 0; ch < layer.c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const double* g = dy.image(i) + ch * hw;
      const double* h = xhat.image(i) + ch * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        sum_dy += g[p];
        sum_dy_xhat += g[p] * h[p];
      }
    }
    if (grad) {
      grad->gamma.v[ch] += sum_dy_xhat;
      grad->beta.v[ch] += sum_dy;
    }
    const double scale = layer.gamma.v[ch] * cache.inv_std[ch];
    for (int i = 0; i < dy.n; ++i) {
      const double* g = dy.image(i) + ch * hw;
      const double* h = xhat.image(i) + ch * hw;
      double* d = dx.image(i) + ch * hw;
      if (cache.mode == BnMode::Train) {
        for (std::size_t p = 0; p < hw; ++p) d[p] = scale / m * (m * g[p] - sum_dy - h[p] * sum_dy_xhat);
      } else {
        for (std::size_t p = 0; p < hw; ++p) d[p] = scale * g[p];
      }
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(y.v[i] > 0.0)) dx.v[i] = 0.0;
  return dx;
}

Tensor maxpool2_forward(const Tensor& x, PoolCache* cache) {
  require(x.h % 2 == 0 && x.w % 2 == 0, ErrorKind::Data, "max pool needs even dimensions");
  Tensor y(x.n, x.c, x.h / 2, x.w / 2);
  if (cache) {
    cache->argmax.assign(y.size(), 0);
    cache->in_h = x.h;
    cache->in_w = x.w;
  }
  std::size_t idx = 0;
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx, ++idx) {
          double best = x.at(i, ch, 2 * yy, 2 * xx);
          std::uint8_t arg = 0;
          for (std::uint8_t d = 1; d < 4; ++d) {
            const double v = x.at(i, ch, 2 * yy + d / 2, 2 * xx + d % 2);
            if (v > best) {
              best = v;
              arg = d;
            }
          }
          y.v[idx] = best;
          if (cache) cache->argmax[idx] = arg;
        }
  return y;
}

Tensor maxpool2_backward(const PoolCache& cache, const Tensor& dy) {
  Tensor dx(dy.n, dy.c, cache.in_h, cache.in_w);
  std::size_t idx = 0;
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx, ++idx) {
          const int d = cache.argmax[idx];
          dx.at(i, ch, 2 * yy + d / 2, 2 * xx + d % 2) += dy.v[idx];
        }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, ErrorKind::Data, "concat shape mismatch");
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.image(i), a.image(i) + a.image_size(), y.image(i));
    std::copy(b.image(i), b.image(i) + b.image_size(), y.image(i) + a.image_size());
  }
  return y;
}

void split_channels(const Tensor& d, int ca, Tensor& da, Tensor& db) {
  da = Tensor(d.n, ca, d.h, d.w);
  db = Tensor(d.n, d.c - ca, d.h, d.w);
  for (int i = 0; i < d.n; ++i) {
    std::copy(d.image(i), d.image(i) + da.image_size(), da.image(i));
    std::copy(d.image(i) + da.image_size(), d.image(i) + d.image_size(), db.image(i));
  }
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  require(x.c % (r * r) == 0, ErrorKind::Data, "pixel shuffle channel count not divisible by r^2");
  const int c = x.c / (r * r);
  Tensor y(x.n, c, x.h * r, x.w * r);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int d = 0; d < r * r; ++d)
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) y.at(i, ch, yy * r + d / r, xx * r + d % r) = x.at(i, ch * r * r + d, yy, xx);
  return y;
}

Tensor pixel_unshuffle(const Tensor& y, int r) {
  Tensor x(y.n, y.c * r * r, y.h / r, y.w / r);
  for (int i = 0; i < y.n; ++i)
    for (int ch = 0; ch < y.c; ++ch)
      for (int d = 0; d < r * r; ++d)
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) x.at(i, ch * r * r + d, yy, xx) = y.at(i, ch, yy * r + d / r, xx * r + d % r);
  return x;
}

namespace {
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace

Tensor reflect_pad(const Tensor& x, int pad_h, int pad_w) {
  if (pad_h == 0 && pad_w == 0) return x;
  Tensor y(x.n, x.c, x.h + pad_h, x.w + pad_w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) y.at(i, ch, yy, xx) = x.at(i, ch, reflect_index(yy, x.h), reflect_index(xx, x.w));
  return y;
}

Tensor reflect_pad_backward(const Tensor& dy, int h, int w) {
  if (dy.h == h && dy.w == w) return dy;
  Tensor dx(dy.n, dy.c, h, w);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) dx.at(i, ch, reflect_index(yy, h), reflect_index(xx, w)) += dy.at(i, ch, yy, xx);
  return dx;
}

Tensor crop(const Tensor& x, int h, int w) {
  if (x.h == h && x.w == w) return x;
  Tensor y(x.n, x.c, h, w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) y.at(i, ch, yy, xx) = x.at(i, ch, yy, xx);
  return y;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
  require(params.size() == grads.size(), ErrorKind::Data, "optimizer parameter/gradient count mismatch");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->v;
    const auto& g = grads[k]->v;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace srtask::nn
