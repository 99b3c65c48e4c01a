#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/core/image_io.hpp"
#include "bicross/core/tensor.hpp"

namespace bicross::eval {

// Min-max normalization to 8 bits; a constant map becomes mid-gray.
inline Image8 map_to_image(const Tensor& map) {
  if (map.rank() < 2) throw InvalidInput("render_map: expected a map with at least two dimensions");
  const int h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  if (map.size() != static_cast<std::size_t>(h) * w) throw InvalidInput("render_map: expected a single-channel map");
  double lo = INFINITY, hi = -INFINITY;
  for (double v : map.storage()) {
    if (!std::isfinite(v)) throw InvalidInput("render_map: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image8 img{w, h, 1, std::vector<std::uint8_t>(map.size(), 128)};
  if (hi > lo) {
    for (std::size_t i = 0; i < map.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround((map[i] - lo) / (hi - lo) * 255.0));
    }
  }
  return img;
}

inline void render_map(const Tensor& map, const std::filesystem::path& path) { write_pnm(map_to_image(map), path); }

}  // namespace bicross::eval
