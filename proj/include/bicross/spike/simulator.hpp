#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/spike/stream.hpp"

namespace bicross::spike {

enum class ResetMode {
  hard,      // accumulator returns to exactly 0 after a spike
  residual,  // accumulator keeps the overshoot (acc -= theta)
};

struct SimulatorConfig {
  double theta = 0.4;
  double freq_hz = 1280.0;  // recorded in the stream metadata
  ResetMode reset = ResetMode::hard;
  int threads = 1;          // row bands; output does not depend on it
};

namespace detail {

inline void integrate_rows(const LuminanceSequence& lum, const SimulatorConfig& cfg,
                           SpikeStream& out, int row_begin, int row_end) {
  const std::size_t plane = lum.pixels();
  std::vector<double> acc(static_cast<std::size_t>(row_end - row_begin) * lum.w, 0.0);
  for (int k = 0; k < lum.t; ++k) {
    const std::size_t base = static_cast<std::size_t>(k) * plane + static_cast<std::size_t>(row_begin) * lum.w;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      // left-endpoint rectangle rule: one rectangle per luminance step
      acc[i] += lum.frames[base + i] * lum.dt;
      if (acc[i] >= cfg.theta) {
        out.bits[base + i] = 1;
        acc[i] = cfg.reset == ResetMode::hard ? 0.0 : acc[i] - cfg.theta;
      }
    }
  }
}

}  // namespace detail

// Integrate-and-fire: at most one spike per pixel per step.
inline SpikeStream simulate_spikes(const LuminanceSequence& lum, const SimulatorConfig& cfg) {
  if (!(cfg.theta > 0.0)) throw InvalidParameter("theta must be positive");
  if (!(cfg.freq_hz > 0.0)) throw InvalidParameter("frequency must be positive");
  if (cfg.threads < 1) throw InvalidParameter("thread count must be >= 1");
  lum.validate();

  SpikeStream out(lum.t, lum.h, lum.w, cfg.freq_hz, cfg.theta);
  const int bands = std::min(cfg.threads, lum.h);
  if (bands <= 1) {
    detail::integrate_rows(lum, cfg, out, 0, lum.h);
    return out;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(bands));
  for (int b = 0; b < bands; ++b) {
    const int r0 = lum.h * b / bands;
    const int r1 = lum.h * (b + 1) / bands;
    workers.emplace_back([&, r0, r1] { detail::integrate_rows(lum, cfg, out, r0, r1); });
  }
  for (auto& th : workers) th.join();
  return out;
}

inline SpikeStream simulate_spikes(const LuminanceSequence& lum, double theta) {
  SimulatorConfig cfg;
  cfg.theta = theta;
  return simulate_spikes(lum, cfg);
}

// Linear interpolation in time: out[k*factor + j] = a + (b - a) * (j / factor).
inline LuminanceSequence interpolate_frames(const LuminanceSequence& in, int factor) {
  if (factor < 1) throw InvalidParameter("interpolation factor must be >= 1");
  in.validate();
  if (factor == 1) return in;

  const int t_out = (in.t - 1) * factor + 1;
  LuminanceSequence out(t_out, in.h, in.w, in.dt / factor);
  const std::size_t plane = in.pixels();
  for (int k = 0; k + 1 < in.t; ++k) {
    const double* a = in.frames.data() + static_cast<std::size_t>(k) * plane;
    const double* b = a + plane;
    for (int j = 0; j < factor; ++j) {
      const double s = static_cast<double>(j) / factor;
      double* dst = out.frames.data() + static_cast<std::size_t>(k * factor + j) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = a[i] + (b[i] - a[i]) * s;
    }
  }
  std::copy_n(in.frames.data() + static_cast<std::size_t>(in.t - 1) * plane, plane,
              out.frames.data() + static_cast<std::size_t>(t_out - 1) * plane);
  return out;
}

inline SpikeInputVolume bin_stream(const SpikeStream& s, int t_start, int t_model) {
  if (t_start < 0 || t_model < 1 || static_cast<long long>(t_start) + t_model > s.t) {
    throw BoundsError("slice [" + std::to_string(t_start) + ", " + std::to_string(t_start + t_model) +
                      ") is outside a stream of " + std::to_string(s.t) + " steps");
  }
  SpikeInputVolume v;
  v.t = t_model;
  v.h = s.h;
  v.w = s.w;
  v.freq = s.freq;
  v.theta = s.theta;
  const std::size_t plane = s.pixels();
  const auto first = s.bits.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t_start) * plane);
  v.planes.assign(first, first + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t_model) * plane));
  return v;
}

// Per-pixel mean firing rate as 8-bit gray, rate 1 -> 255, round half up.
// Integer arithmetic so every implementation agrees exactly.
inline std::vector<std::uint8_t> firing_rate_image(const SpikeStream& s) {
  std::vector<std::uint8_t> img(s.pixels(), 0);
  const std::uint64_t tt = static_cast<std::uint64_t>(s.t);
  for (std::size_t p = 0; p < s.pixels(); ++p) {
    std::uint64_t count = 0;
    for (int k = 0; k < s.t; ++k) count += s.bits[static_cast<std::size_t>(k) * s.pixels() + p];
    img[p] = static_cast<std::uint8_t>((2 * count * 255 + tt) / (2 * tt));
  }
  return img;
}

inline std::uint8_t to_unit_byte(double luminance01) {
  const double v = std::clamp(luminance01, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::floor(v + 0.5));
}

}  // namespace bicross::spike
