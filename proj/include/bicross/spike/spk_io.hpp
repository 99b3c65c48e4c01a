#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/spike/stream.hpp"

namespace bicross::spike {

// .spk container, little-endian:
//   "SPK1" | u16 version=1 | u32 H | u32 W | u32 T | f64 freq_hz | f64 theta |
//   payload: t-major then row-major, 8 spikes per byte, MSB first, each
//   (t, row) line padded to a whole byte with zero bits.
inline constexpr char kSpkMagic[4] = {'S', 'P', 'K', '1'};
inline constexpr std::uint16_t kSpkVersion = 1;
inline constexpr std::size_t kSpkHeaderBytes = 34;
inline constexpr std::uint64_t kSpkMaxPayload = std::uint64_t{1} << 40;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  if (offset + sizeof(T) > in.size()) throw FormatError("truncated header", in.size());
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace detail

inline std::size_t spk_line_bytes(int w) { return (static_cast<std::size_t>(w) + 7) / 8; }

inline std::vector<std::uint8_t> encode_spk(const SpikeStream& s) {
  if (s.t < 1 || s.h < 1 || s.w < 1) throw InvalidInput("spike stream dimensions must be >= 1");
  if (!(s.theta > 0.0) || !(s.freq > 0.0)) throw InvalidInput("spike stream theta and freq must be positive");
  if (s.bits.size() != static_cast<std::size_t>(s.t) * s.h * s.w) {
    throw InvalidInput("spike stream buffer size does not match t*h*w");
  }
  const std::size_t line = spk_line_bytes(s.w);
  std::vector<std::uint8_t> out;
  out.reserve(kSpkHeaderBytes + line * s.h * s.t);
  out.insert(out.end(), kSpkMagic, kSpkMagic + 4);
  detail::put_le<std::uint16_t>(out, kSpkVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.h));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.w));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.t));
  detail::put_le<double>(out, s.freq);
  detail::put_le<double>(out, s.theta);

  for (int k = 0; k < s.t; ++k) {
    for (int y = 0; y < s.h; ++y) {
      const std::size_t start = out.size();
      out.resize(start + line, 0);
      for (int x = 0; x < s.w; ++x) {
        const std::uint8_t b = s.at(k, y, x);
        if (b > 1) throw InvalidInput("spike values must be 0 or 1");
        if (b) out[start + x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
      }
    }
  }
  return out;
}

inline SpikeStream decode_spk(std::span<const std::uint8_t> in) {
  if (in.size() < 4 || std::memcmp(in.data(), kSpkMagic, 4) != 0) throw FormatError("bad magic", 0);
  const auto version = detail::get_le<std::uint16_t>(in, 4);
  if (version != kSpkVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
  const auto h = detail::get_le<std::uint32_t>(in, 6);
  const auto w = detail::get_le<std::uint32_t>(in, 10);
  const auto t = detail::get_le<std::uint32_t>(in, 14);
  const auto freq = detail::get_le<double>(in, 18);
  const auto theta = detail::get_le<double>(in, 26);
  if (h == 0) throw FormatError("zero height", 6);
  if (w == 0) throw FormatError("zero width", 10);
  if (t == 0) throw FormatError("zero length", 14);
  if (!(freq > 0.0)) throw FormatError("non-positive frequency", 18);
  if (!(theta > 0.0)) throw FormatError("non-positive theta", 26);
  if (h > 0x7fffffffu || w > 0x7fffffffu || t > 0x7fffffffu) throw FormatError("dimension overflow", 6);

  const std::uint64_t line = (static_cast<std::uint64_t>(w) + 7) / 8;
  const std::uint64_t payload = line * h * t;
  if (line * h > kSpkMaxPayload || payload / t != line * h || payload > kSpkMaxPayload) {
    throw FormatError("dimension overflow", 6);
  }
  if (in.size() < kSpkHeaderBytes + payload) throw FormatError("truncated payload", in.size());
  if (in.size() > kSpkHeaderBytes + payload) throw FormatError("trailing bytes after payload", kSpkHeaderBytes + payload);

  SpikeStream s(static_cast<int>(t), static_cast<int>(h), static_cast<int>(w), freq, theta);
  std::size_t off = kSpkHeaderBytes;
  const unsigned pad_bits = static_cast<unsigned>(line * 8 - w);
  for (int k = 0; k < s.t; ++k) {
    for (int y = 0; y < s.h; ++y, off += line) {
      for (int x = 0; x < s.w; ++x) {
        s.at(k, y, x) = (in[off + x / 8] >> (7 - x % 8)) & 1u;
      }
      if (pad_bits) {
        const std::uint8_t pad_mask = static_cast<std::uint8_t>((1u << pad_bits) - 1u);
        if (in[off + line - 1] & pad_mask) throw FormatError("non-zero padding bits", off + line - 1);
      }
    }
  }
  return s;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

inline void write_spk(const SpikeStream& s, const std::filesystem::path& path) {
  write_file_bytes(path, encode_spk(s));
}

inline SpikeStream read_spk(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_spk(bytes);
}

}  // namespace bicross::spike
