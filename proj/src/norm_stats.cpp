// SPDX-License-Identifier: Apache-2.0
#include "srtask/norm_stats.hpp"

#include "srtask/error.hpp"

namespace srtask {

double NormStats::variance(int c) const {
  return count_ > 1 ? m2_[c] / static_cast<double>(count_ - 1) : 0.0;
}

double NormStats::population_variance(int c) const {
  return count_ > 0 ? m2_[c] / static_cast<double>(count_) : 0.0;
}

std::vector<double> NormStats::variance() const {
  std::vector<double> v(mean_.size());
  for (int c = 0; c < channels(); ++c) v[c] = variance(c);
  return v;
}

void NormStats::add_planar(std::span<const double> values, std::int64_t per_channel) {
  require(per_channel > 0 && values.size() == static_cast<std::size_t>(per_channel) * mean_.size(), ErrorKind::Data,
          "stats block size does not match channel count");
  NormStats block(channels());
  block.count_ = per_channel;
  for (int c = 0; c < channels(); ++c) {
    auto v = values.subspan(static_cast<std::size_t>(c) * per_channel, per_channel);
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(per_channel);
    double m2 = 0.0;
    for (double x : v) m2 += (x - mean) * (x - mean);
    block.mean_[c] = mean;
    block.m2_[c] = m2;
  }
  merge(block);
}

void NormStats::merge(const NormStats& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  require(other.channels() == channels(), ErrorKind::Data, "cannot merge stats with different channel counts");
  const auto na = static_cast<double>(count_);
  const auto nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (int c = 0; c < channels(); ++c) {
    const double delta = other.mean_[c] - mean_[c];
    mean_[c] += delta * nb / n;
    m2_[c] += other.m2_[c] + delta * delta * na * nb / n;
  }
  count_ += other.count_;
}

NormStats NormStats::from_moments(std::vector<double> mean, std::vector<double> variance, std::int64_t count) {
  require(mean.size() == variance.size(), ErrorKind::Data, "mean and variance sizes differ");
  NormStats s(static_cast<int>(mean.size()));
  s.mean_ = std::move(mean);
  s.count_ = count;
  for (std::size_t c = 0; c < variance.size(); ++c) {
    require(variance[c] >= 0.0, ErrorKind::Data, "negative variance");
    s.m2_[c] = variance[c] * static_cast<double>(count > 1 ? count - 1 : 0);
  }
  return s;
}

NormStats merged(const NormStats& a, const NormStats& b) {
  NormStats out = a;
  out.merge(b);
  return out;
}

}  // namespace srtask
