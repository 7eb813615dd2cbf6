// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace srtask::io {

/// Interleaved 8- or 16-bit image as stored in a PNG file.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1..4
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;  // interleaved, row-major
  std::map<std::string, std::string> text;
};

PngImage read_png(const std::filesystem::path& path);
// Deterministic output: no time chunk, fixed compression settings.
void write_png(const std::filesystem::path& path, const PngImage& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace srtask::io
