#ifndef RVMDE_PNG_IO_HPP
#define RVMDE_PNG_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace rvmde {

/// 8-bit interleaved RGB image, row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // height*width*3

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0) {}

  uint8_t& at(int y, int x, int ch) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + ch]; }
  uint8_t at(int y, int x, int ch) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + ch]; }
};

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace rvmde

#endif  // RVMDE_PNG_IO_HPP
