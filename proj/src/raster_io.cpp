#include "rvmde/raster_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rvmde {

namespace {

constexpr char kMagic[4] = {'R', 'V', 'R', 'D'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) {
    throw std::runtime_error("raster: truncated header in " + path);
  }
  return v;
}

}  // namespace

void write_raster(const std::string& path, const Tensor<float>& t) {
  int c, h, w;
  if (t.rank() == 2) {
    c = 1;
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 3) {
    c = t.dim(0);
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw std::invalid_argument("raster: expected rank 2 or 3 tensor, got " + t.shape_str());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("raster: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, static_cast<uint32_t>(c));
  write_u32(os, static_cast<uint32_t>(h));
  write_u32(os, static_cast<uint32_t>(w));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!os) throw std::runtime_error("raster: write failed for " + path);
}

Tensor<float> read_raster(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("raster: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("raster: bad magic in " + path);
  }
  const uint32_t c = read_u32(is, path);
  const uint32_t h = read_u32(is, path);
  const uint32_t w = read_u32(is, path);
  if (c == 0 || h == 0 || w == 0 || static_cast<uint64_t>(c) * h * w > (1ull << 31)) {
    throw std::runtime_error("raster: implausible dimensions in " + path);
  }
  Tensor<float> t({static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
  if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
    throw std::runtime_error("raster: truncated payload in " + path);
  }
  return t;
}

}  // namespace rvmde
