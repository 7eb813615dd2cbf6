// SPDX-License-Identifier: Apache-2.0
#include "srtask/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

#include "srtask/error.hpp"

namespace srtask::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::Io, "cannot open " + path.string());
  return f;
}

thread_local char g_png_message[256];

void png_error_fn(png_structp png, png_const_charp msg) {
  std::snprintf(g_png_message, sizeof g_png_message, "%s", msg);
  png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 2: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGB_ALPHA;
  }
  fail(ErrorKind::Data, "png supports 1 to 4 channels, got " + std::to_string(channels));
}

// libpng reports errors by longjmp; each phase runs in a frame whose locals
// are trivially destructible so the jump never skips a destructor.
bool read_header(png_structp png, png_infop info, std::FILE* f) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  return true;
}

bool read_rows(png_structp png, png_infop info, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, info);
  return true;
}

bool write_header(png_structp png, png_infop info, std::FILE* f, int w, int h, int depth, int color, png_textp text,
                  int ntext) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (ntext > 0) png_set_text(png, info, text, ntext);
  png_write_info(png, info);
  return true;
}

bool write_row(png_structp png, png_bytep row) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_write_row(png, row);
  return true;
}

bool write_end(png_structp png) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_write_end(png, nullptr);
  return true;
}

[[noreturn]] void png_failed(const std::filesystem::path& path) {
  fail(ErrorKind::Data, "png " + path.string() + ": " + g_png_message);
}

}  // namespace

PngImage read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "missing file " + path.string());
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) fail(ErrorKind::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  if (!read_header(png, info, file.get())) png_failed(path);

  PngImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buf(rowbytes * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + rowbytes * y;
  if (!read_rows(png, info, rows.data())) png_failed(path);

  png_textp text = nullptr;
  int ntext = 0;
  if (png_get_text(png, info, &text, &ntext) > 0) {
    for (int i = 0; i < ntext; ++i) img.text[text[i].key] = text[i].text ? text[i].text : "";
  }

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  if (img.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = buf[i];
  }
  return img;
}

void write_png(const std::filesystem::path& path, const PngImage& image) {
  require(image.bit_depth == 8 || image.bit_depth == 16, ErrorKind::Data, "png bit depth must be 8 or 16");
  require(image.samples.size() == static_cast<std::size_t>(image.width) * image.height * image.channels,
          ErrorKind::Data, "png sample buffer size mismatch");
  const int color = color_type_for(image.channels);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) fail(ErrorKind::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  std::vector<std::string> keys, values;
  for (const auto& [k, v] : image.text) {
    keys.push_back(k);
    values.push_back(v);
  }
  std::vector<png_text> texts(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    texts[i].compression = PNG_TEXT_COMPRESSION_NONE;
    texts[i].key = keys[i].data();
    texts[i].text = values[i].data();
    texts[i].text_length = values[i].size();
  }
  if (!write_header(png, info, file.get(), image.width, image.height, image.bit_depth, color, texts.data(),
                    static_cast<int>(texts.size())))
    png_failed(path);

  const std::size_t row_samples = static_cast<std::size_t>(image.width) * image.channels;
  const std::size_t bytes_per = image.bit_depth == 16 ? 2 : 1;
  std::vector<png_byte> row(row_samples * bytes_per);
  for (int y = 0; y < image.height; ++y) {
    const auto* src = image.samples.data() + row_samples * y;
    for (std::size_t i = 0; i < row_samples; ++i) {
      if (bytes_per == 2) {
        row[2 * i] = static_cast<png_byte>(src[i] >> 8);
        row[2 * i + 1] = static_cast<png_byte>(src[i] & 0xFF);
      } else {
        row[i] = static_cast<png_byte>(src[i]);
      }
    }
    if (!write_row(png, row.data())) png_failed(path);
  }
  if (!write_end(png)) png_failed(path);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace srtask::io
