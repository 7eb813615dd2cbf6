// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "srtask/raster.hpp"
#include "srtask/rng.hpp"

namespace testutil {

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<int> n{0};
    path = std::filesystem::temp_directory_path() /
           ("srtask-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

inline srtask::Raster constant(int w, int h, double v, std::vector<std::string> bands = {"B08"}, double gsd = 1.0) {
  return srtask::Raster(w, h, std::move(bands), gsd, v);
}

inline srtask::Raster noise(int w, int h, std::uint64_t seed, std::vector<std::string> bands = {"B08"},
                            double gsd = 1.0) {
  srtask::Raster r(w, h, std::move(bands), gsd);
  srtask::Rng rng(seed);
  for (double& v : r.pixels()) v = rng.uniform();
  return r;
}

}  // namespace testutil
