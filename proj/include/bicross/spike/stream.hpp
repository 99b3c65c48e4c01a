#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/core/tensor.hpp"

namespace bicross::spike {

// Frame-sampled luminance, t-major then row-major. Values are normalized
// luminance (8-bit sources divided by 255); dt is the integration step.
struct LuminanceSequence {
  int t = 0;
  int h = 0;
  int w = 0;
  double dt = 1.0;
  std::vector<double> frames;

  LuminanceSequence() = default;
  LuminanceSequence(int t_, int h_, int w_, double dt_, double fill = 0.0)
      : t(t_), h(h_), w(w_), dt(dt_),
        frames(static_cast<std::size_t>(t_) * h_ * w_, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  double& at(int k, int y, int x) { return frames[(static_cast<std::size_t>(k) * h + y) * w + x]; }
  double at(int k, int y, int x) const { return frames[(static_cast<std::size_t>(k) * h + y) * w + x]; }

  void validate() const {
    if (t < 1 || h < 1 || w < 1) throw InvalidInput("luminance sequence needs t, h, w >= 1");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("luminance dt must be positive and finite");
    if (frames.size() != static_cast<std::size_t>(t) * h * w) {
      throw InvalidInput("luminance frame buffer size does not match t*h*w");
    }
    for (double v : frames) {
      if (!std::isfinite(v)) throw InvalidInput("non-finite luminance value");
      if (v < 0.0) throw InvalidInput("negative luminance value");
    }
  }

  bool operator==(const LuminanceSequence&) const = default;
};

// Binary spike volume, one byte per spike for in-memory use; packed on disk.
struct SpikeStream {
  int t = 0;
  int h = 0;
  int w = 0;
  double freq = 1280.0;
  double theta = 0.4;
  std::vector<std::uint8_t> bits;

  SpikeStream() = default;
  SpikeStream(int t_, int h_, int w_, double freq_, double theta_)
      : t(t_), h(h_), w(w_), freq(freq_), theta(theta_),
        bits(static_cast<std::size_t>(t_) * h_ * w_, 0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  std::uint8_t& at(int k, int y, int x) { return bits[(static_cast<std::size_t>(k) * h + y) * w + x]; }
  std::uint8_t at(int k, int y, int x) const { return bits[(static_cast<std::size_t>(k) * h + y) * w + x]; }

  std::size_t total_spikes() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  bool operator==(const SpikeStream&) const = default;
};

// Contiguous temporal slice of a stream, the spike-branch network input.
struct SpikeInputVolume {
  int t = 0;
  int h = 0;
  int w = 0;
  double freq = 0.0;
  double theta = 0.0;
  std::vector<std::uint8_t> planes;

  Tensor to_tensor() const {
    Tensor out({t, h, w});
    for (std::size_t i = 0; i < planes.size(); ++i) out[i] = planes[i];
    return out;
  }

  bool operator==(const SpikeInputVolume&) const = default;
};

}  // namespace bicross::spike
