// SPDX-License-Identifier: Apache-2.0
#include "srtask/tensor_store.hpp"

#include <bit>
#include <cstring>

#include "srtask/error.hpp"
#include "srtask/image_io.hpp"

namespace srtask {
namespace {

constexpr char kMagic[4] = {'S', 'R', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  std::uint64_t get(int n) {
    if (pos + static_cast<std::size_t>(n) > in.size()) fail(ErrorKind::Data, "truncated weights file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n) {
    if (pos + n > in.size()) fail(ErrorKind::Data, "truncated weights file");
    std::string s(in.begin() + static_cast<std::ptrdiff_t>(pos), in.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
};

}  // namespace

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kVersion, 4);
  put(out, archive.metadata.size(), 4);
  out.insert(out.end(), archive.metadata.begin(), archive.metadata.end());
  put(out, archive.tensors.size(), 4);
  for (const auto& [name, t] : archive.tensors) {
    put(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    for (int d : {t.n, t.c, t.h, t.w}) put(out, static_cast<std::uint32_t>(d), 4);
    for (double v : t.v) put(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  io::write_file(path, out);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "missing weights file " + path.string());
  const auto bytes = io::read_file(path);
  Reader r{bytes};
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::Data,
          "not a weights container: " + path.string());
  r.pos = 4;
  require(r.get(4) == kVersion, ErrorKind::Data, "unsupported weights container version");
  TensorArchive a;
  a.metadata = r.str(r.get(4));
  const auto count = r.get(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.str(r.get(2));
    const int n = static_cast<int>(r.get(4)), c = static_cast<int>(r.get(4)), h = static_cast<int>(r.get(4)),
              w = static_cast<int>(r.get(4));
    nn::Tensor t(n, c, h, w);
    for (double& v : t.v) v = std::bit_cast<double>(r.get(8));
    a.tensors.emplace(std::move(name), std::move(t));
  }
  require(r.pos == bytes.size(), ErrorKind::Data, "trailing bytes in weights container");
  return a;
}

void assign_tensors(const TensorArchive& archive, std::vector<nn::NamedTensor> slots) {
  for (auto& s : slots) {
    auto it = archive.tensors.find(s.name);
    require(it != archive.tensors.end(), ErrorKind::Data, "weights container lacks tensor " + s.name);
    require(it->second.same_shape(*s.tensor), ErrorKind::Data, "shape mismatch for tensor " + s.name);
    *s.tensor = it->second;
  }
}

TensorArchive collect_tensors(std::vector<nn::NamedTensor> slots, std::string metadata) {
  TensorArchive a;
  a.metadata = std::move(metadata);
  for (auto& s : slots) a.tensors.emplace(s.name, *s.tensor);
  return a;
}

}  // namespace srtask
