// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace srtask {

/// Per-channel streaming mean/variance (Welford accumulators with the
/// Chan et al. pairwise merge).
class NormStats {
 public:
  NormStats() = default;
  explicit NormStats(int channels) : mean_(channels, 0.0), m2_(channels, 0.0) {}

  int channels() const { return static_cast<int>(mean_.size()); }
  std::int64_t count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  double mean(int c) const { return mean_[c]; }
  // Unbiased (n - 1) estimator; 0 when fewer than two samples.
  double variance(int c) const;
  double population_variance(int c) const;
  std::vector<double> variance() const;

  /// Adds one block of samples where channel c owns values[c * n, (c + 1) * n), n = per_channel.
  void add_planar(std::span<const double> values, std::int64_t per_channel);
  void merge(const NormStats& other);

  static NormStats from_moments(std::vector<double> mean, std::vector<double> variance, std::int64_t count);

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  std::int64_t count_ = 0;
};

NormStats merged(const NormStats& a, const NormStats& b);

}  // namespace srtask
