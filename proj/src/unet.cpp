// SPDX-License-Identifier: Apache-2.0
#include "srtask/unet.hpp"

#include <string>

#include "srtask/error.hpp"
#include "srtask/rng.hpp"

namespace srtask {
namespace {

ConvBnRelu make_cbr(int in, int out, Rng& rng) {
  ConvBnRelu l{nn::Conv2d(in, out, 3, false), nn::BatchNorm(out)};
  l.conv.init_he(rng);
  return l;
}

DoubleConv make_block(int in, int out, Rng& rng) {
  DoubleConv b;
  b.a = make_cbr(in, out, rng);
  b.b = make_cbr(out, out, rng);
  return b;
}

nn::Tensor cbr_forward(const ConvBnRelu& l, const nn::Tensor& x, nn::Pass& pass, UNet::CbrCache* c) {
  nn::Tensor z = nn::conv_forward(l.conv, x);
  nn::Tensor y = nn::relu_forward(nn::bn_forward(l.bn, z, pass, c ? &c->bn : nullptr));
  if (c) {
    c->x = x;
    c->y = y;
  }
  return y;
}

nn::Tensor cbr_backward(const ConvBnRelu& l, const UNet::CbrCache& c, const nn::Tensor& dy, ConvBnRelu* g) {
  nn::Tensor dz = nn::bn_backward(l.bn, c.bn, nn::relu_backward(c.y, dy), g ? &g->bn : nullptr);
  return nn::conv_backward(l.conv, c.x, dz, g ? &g->conv : nullptr);
}

nn::Tensor block_forward(const DoubleConv& b, const nn::Tensor& x, nn::Pass& pass, UNet::BlockCache* c) {
  nn::Tensor h = cbr_forward(b.a, x, pass, c ? &c->a : nullptr);
  return cbr_forward(b.b, h, pass, c ? &c->b : nullptr);
}

nn::Tensor block_backward(const DoubleConv& b, const UNet::BlockCache& c, const nn::Tensor& dy, DoubleConv* g) {
  nn::Tensor dh = cbr_backward(b.b, c.b, dy, g ? &g->b : nullptr);
  return cbr_backward(b.a, c.a, dh, g ? &g->a : nullptr);
}

void name_cbr(ConvBnRelu& l, const std::string& p, std::vector<nn::NamedTensor>& out) {
  out.push_back({p + ".conv.weight", &l.conv.weight, true});
  out.push_back({p + ".bn.gamma", &l.bn.gamma, true});
  out.push_back({p + ".bn.beta", &l.bn.beta, true});
  out.push_back({p + ".bn.running_mean", &l.bn.running_mean, false});
  out.push_back({p + ".bn.running_var", &l.bn.running_var, false});
}

void name_block(DoubleConv& b, const std::string& p, std::vector<nn::NamedTensor>& out) {
  name_cbr(b.a, p + ".a", out);
  name_cbr(b.b, p + ".b", out);
}

void zero_all(UNet& net) {
  for (auto& t : net.named_tensors()) t.tensor->zero();
}

}  // namespace

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  require(config.depth >= 1 && config.depth <= 6, ErrorKind::Usage, "unet depth must be in [1, 6]");
  require(config.width >= 1 && config.in_channels >= 1, ErrorKind::Usage, "unet width and channels must be positive");
  Rng rng(seed);
  const int d = config.depth;
  const int f = config.width;
  int in = config.in_channels;
  for (int l = 0; l < d; ++l) {
    enc_.push_back(make_block(in, f << l, rng));
    in = f << l;
  }
  mid_ = make_block(f << (d - 1), f << d, rng);
  up_.resize(d);
  dec_.resize(d);
  for (int l = d - 1; l >= 0; --l) {
    up_[l] = nn::UpConv2x2(f << (l + 1), f << l);
    up_[l].init_he(rng);
    dec_[l] = make_block(2 * (f << l), f << l, rng);
  }
  head_ = nn::Conv2d(f, 1, 1, true);
  head_.init_he(rng);
}

UNet UNet::zeros_like(const UNet& other) {
  UNet g = other;
  zero_all(g);
  return g;
}

std::vector<nn::NamedTensor> UNet::named_tensors() {
  std::vector<nn::NamedTensor> out;
  for (std::size_t l = 0; l < enc_.size(); ++l) name_block(enc_[l], "enc" + std::to_string(l), out);
  name_block(mid_, "mid", out);
  for (int l = static_cast<int>(dec_.size()) - 1; l >= 0; --l) {
    out.push_back({"up" + std::to_string(l) + ".weight", &up_[l].weight, true});
    out.push_back({"up" + std::to_string(l) + ".bias", &up_[l].bias, true});
    name_block(dec_[l], "dec" + std::to_string(l), out);
  }
  out.push_back({"head.weight", &head_.weight, true});
  out.push_back({"head.bias", &head_.bias, true});
  return out;
}

std::vector<nn::Tensor*> UNet::trainable() {
  std::vector<nn::Tensor*> out;
  for (auto& t : named_tensors())
    if (t.trainable) out.push_back(t.tensor);
  return out;
}

std::vector<nn::BatchNorm*> UNet::bn_layers() {
  std::vector<nn::BatchNorm*> out;
  for (auto& b : enc_) {
    out.push_back(&b.a.bn);
    out.push_back(&b.b.bn);
  }
  out.push_back(&mid_.a.bn);
  out.push_back(&mid_.b.bn);
  for (int l = static_cast<int>(dec_.size()) - 1; l >= 0; --l) {
    out.push_back(&dec_[l].a.bn);
    out.push_back(&dec_[l].b.bn);
  }
  return out;
}

std::vector<const nn::BatchNorm*> UNet::bn_layers() const {
  std::vector<const nn::BatchNorm*> out;
  for (auto* b : const_cast<UNet*>(this)->bn_layers()) out.push_back(b);
  return out;
}

nn::Tensor UNet::forward(const nn::Tensor& x, nn::Pass& pass, Tape* tape, bool features_only) const {
  require(x.c == config_.in_channels, ErrorKind::Data,
          "model expects " + std::to_string(config_.in_channels) + " input bands, got " + std::to_string(x.c));
  require(x.h % multiple() == 0 && x.w % multiple() == 0, ErrorKind::Data,
          "unet input dims must be multiples of " + std::to_string(multiple()));
  const int d = config_.depth;
  if (tape) {
    tape->enc.assign(d, {});
    tape->pool.assign(d, {});
    tape->up_in.assign(d, {});
    tape->dec.assign(d, {});
    tape->features_only = features_only;
  }
  std::vector<nn::Tensor> skips(d);
  nn::Tensor h = x;
  for (int l = 0; l < d; ++l) {
    skips[l] = block_forward(enc_[l], h, pass, tape ? &tape->enc[l] : nullptr);
    h = nn::maxpool2_forward(skips[l], tape ? &tape->pool[l] : nullptr);
  }
  h = block_forward(mid_, h, pass, tape ? &tape->mid : nullptr);
  if (tape) tape->features = h;
  if (features_only) return h;
  for (int l = d - 1; l >= 0; --l) {
    if (tape) tape->up_in[l] = h;
    nn::Tensor u = nn::upconv_forward(up_[l], h);
    h = block_forward(dec_[l], nn::concat_channels(u, skips[l]), pass, tape ? &tape->dec[l] : nullptr);
  }
  if (tape) tape->head_in = h;
  return nn::conv_forward(head_, h);
}

nn::Tensor UNet::backward(const Tape& tape, const nn::Tensor* dlogits, const nn::Tensor* dfeatures, UNet* g) const {
  const int d = config_.depth;
  std::vector<nn::Tensor> dskip(d);
  nn::Tensor dmid;
  if (dlogits) {
    require(!tape.features_only, ErrorKind::Data, "tape was recorded without the decoder");
    nn::Tensor dh = nn::conv_backward(head_, tape.head_in, *dlogits, g ? &g->head_ : nullptr);
    for (int l = 0; l < d; ++l) {
      nn::Tensor dcat = block_backward(dec_[l], tape.dec[l], dh, g ? &g->dec_[l] : nullptr);
      nn::Tensor du;
      nn::split_channels(dcat, up_[l].out, du, dskip[l]);
      dh = nn::upconv_backward(up_[l], tape.up_in[l], du, g ? &g->up_[l] : nullptr);
    }
    dmid = std::move(dh);
  }
  if (dfeatures) {
    if (dmid.empty()) dmid = *dfeatures;
    else nn::add_inplace(dmid, *dfeatures);
  }
  require(!dmid.empty(), ErrorKind::Data, "backward needs an upstream gradient");
  nn::Tensor dh = block_backward(mid_, tape.mid, dmid, g ? &g->mid_ : nullptr);
  for (int l = d - 1; l >= 0; --l) {
    nn::Tensor ds = nn::maxpool2_backward(tape.pool[l], dh);
    if (!dskip[l].empty()) nn::add_inplace(ds, dskip[l]);
    dh = block_backward(enc_[l], tape.enc[l], ds, g ? &g->enc_[l] : nullptr);
  }
  return dh;
}

void UNet::update_running_stats(const std::vector<NormStats>& batch, double momentum) {
  auto layers = bn_layers();
  require(batch.size() == layers.size(), ErrorKind::Data, "batch statistics do not cover every BN layer");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto* bn = layers[k];
    for (int c = 0; c < bn->c; ++c) {
      bn->running_mean.v[c] = (1.0 - momentum) * bn->running_mean.v[c] + momentum * batch[k].mean(c);
      bn->running_var.v[c] = (1.0 - momentum) * bn->running_var.v[c] + momentum * batch[k].variance(c);
    }
  }
}

nn::Tensor UNet::infer_logits(const nn::Tensor& x) const {
  const int m = multiple();
  require(x.h >= m && x.w >= m, ErrorKind::Data,
          "image " + std::to_string(x.w) + "x" + std::to_string(x.h) + " is smaller than the minimum " +
              std::to_string(m) + "x" + std::to_string(m));
  const int ph = (m - x.h % m) % m;
  const int pw = (m - x.w % m) % m;
  nn::Pass pass{nn::BnMode::Eval, {}};
  return nn::crop(forward(nn::reflect_pad(x, ph, pw), pass, nullptr), x.h, x.w);
}

}  // namespace srtask
