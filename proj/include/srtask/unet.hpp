// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "srtask/nn.hpp"

namespace srtask {

struct UNetConfig {
  int depth = 4;  // number of 2x poolings
  int width = 32; // channels at the first level, doubled per level
  int in_channels = 1;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

struct ConvBnRelu {
  nn::Conv2d conv;
  nn::BatchNorm bn;
};

struct DoubleConv {
  ConvBnRelu a, b;
};

/// Encoder-decoder with skip connections, batch norm after every 3x3
/// convolution and a 1x1 head producing one foreground logit per pixel.
class UNet {
 public:
  struct CbrCache {
    nn::Tensor x;
    nn::BnCache bn;
    nn::Tensor y;
  };
  struct BlockCache {
    CbrCache a, b;
  };
  struct Tape {
    std::vector<BlockCache> enc;
    std::vector<nn::PoolCache> pool;
    BlockCache mid;
    std::vector<nn::Tensor> up_in;
    std::vector<BlockCache> dec;
    nn::Tensor head_in;
    nn::Tensor features;  // bottleneck output
    bool features_only = false;
  };

  UNet() = default;
  UNet(const UNetConfig& config, std::uint64_t seed);
  // Same shapes, all zeros: used as a gradient accumulator.
  static UNet zeros_like(const UNet& other);

  const UNetConfig& config() const { return config_; }
  int multiple() const { return 1 << config_.depth; }
  int bn_layer_count() const { return 4 * config_.depth + 2; }

  std::vector<nn::NamedTensor> named_tensors();
  std::vector<nn::Tensor*> trainable();
  std::vector<nn::BatchNorm*> bn_layers();
  std::vector<const nn::BatchNorm*> bn_layers() const;

  /// Input H and W must be multiples of 2^depth. Returns logits (N, 1, H, W),
  /// or the bottleneck features when features_only is set.
  nn::Tensor forward(const nn::Tensor& x, nn::Pass& pass, Tape* tape, bool features_only = false) const;

  /// Gradient with respect to the input. Either upstream gradient may be
  /// null; parameter gradients accumulate into grads when non-null.
  nn::Tensor backward(const Tape& tape, const nn::Tensor* dlogits, const nn::Tensor* dfeatures, UNet* grads) const;

  void update_running_stats(const std::vector<NormStats>& batch, double momentum);

  /// Eval-mode logits for arbitrary H, W: reflect-pads bottom/right to the
  /// next multiple of 2^depth and crops back.
  nn::Tensor infer_logits(const nn::Tensor& x) const;

 private:
  UNetConfig config_;
  std::vector<DoubleConv> enc_;
  DoubleConv mid_;
  std::vector<nn::UpConv2x2> up_;
  std::vector<DoubleConv> dec_;
  nn::Conv2d head_;
};

}  // namespace srtask
