#ifndef RVMDE_RASTER_IO_HPP
#define RVMDE_RASTER_IO_HPP

#include <string>

#include "rvmde/tensor.hpp"

namespace rvmde {

// Raster file format: little-endian, magic "RVRD", u32 C, u32 H, u32 W,
// then C*H*W float32 row-major. Round trips are bit-exact.

void write_raster(const std::string& path, const Tensor<float>& chw);

/// Accepts rank-2 (treated as C=1) or rank-3 tensors on write; always
/// returns rank-3 (C,H,W) on read.
Tensor<float> read_raster(const std::string& path);

}  // namespace rvmde

#endif  // RVMDE_RASTER_IO_HPP
