#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bicross/core/error.hpp"

namespace bicross {

// 8-bit Netpbm images: P5 (gray) and P6 (RGB, interleaved).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image8&) const = default;
};

inline void write_pnm(const Image8& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw InvalidInput("pnm images must have 1 or 3 channels");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw InvalidInput("pnm pixel buffer size mismatch");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

inline Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string magic;
  f >> magic;
  Image8 img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw FormatError("not a binary PGM/PPM file: " + path.string(), 0);
  }
  auto next_int = [&]() {
    int v = -1;
    while (f >> std::ws && f.peek() == '#') {
      std::string comment;
      std::getline(f, comment);
    }
    f >> v;
    return v;
  };
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (img.width < 1 || img.height < 1 || maxval != 255) {
    throw FormatError("unsupported PNM header in " + path.string(), static_cast<std::size_t>(f.tellg()));
  }
  f.get();  // single whitespace byte before the raster
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError("truncated raster in " + path.string(), static_cast<std::size_t>(f.gcount()));
  }
  return img;
}

// Raw little-endian float32 grid with an 8-byte (H u32, W u32) header.
inline void write_depth_grid(const std::vector<float>& values, int h, int w, const std::filesystem::path& path) {
  if (values.size() != static_cast<std::size_t>(h) * w) throw InvalidInput("depth grid size mismatch");
  std::vector<std::uint8_t> bytes(8 + values.size() * 4);
  const std::uint32_t hh = static_cast<std::uint32_t>(h), ww = static_cast<std::uint32_t>(w);
  std::memcpy(bytes.data(), &hh, 4);
  std::memcpy(bytes.data() + 4, &ww, 4);
  std::memcpy(bytes.data() + 8, values.data(), values.size() * 4);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

struct DepthGrid {
  int h = 0;
  int w = 0;
  std::vector<float> values;
};

inline DepthGrid read_depth_grid(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::uint32_t hh = 0, ww = 0;
  f.read(reinterpret_cast<char*>(&hh), 4);
  f.read(reinterpret_cast<char*>(&ww), 4);
  if (!f || hh == 0 || ww == 0 || hh > 65536 || ww > 65536) throw FormatError("bad depth grid header", 0);
  DepthGrid g;
  g.h = static_cast<int>(hh);
  g.w = static_cast<int>(ww);
  g.values.resize(static_cast<std::size_t>(hh) * ww);
  f.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * 4));
  if (f.gcount() != static_cast<std::streamsize>(g.values.size() * 4)) throw FormatError("truncated depth grid", 8);
  if (f.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in depth grid", 8 + g.values.size() * 4);
  return g;
}

}  // namespace bicross
