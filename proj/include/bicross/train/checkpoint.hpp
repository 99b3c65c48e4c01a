#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/net/params.hpp"
#include "bicross/spike/spk_io.hpp"
#include "bicross/train/adam.hpp"

namespace bicross::train {

// Everything needed to continue a stage bit-exactly.
struct RunState {
  std::string stage;
  int epoch = 0;  // completed epochs within the stage
  std::int64_t step = 0;
  std::map<std::string, net::ParameterSet> models;
  std::map<std::string, AdamState> optim;
  std::map<std::string, std::uint64_t> rng;
  std::map<std::string, std::int64_t> counters;
  nlohmann::json history = nlohmann::json::array();
  nlohmann::json config = nlohmann::json::object();

  bool operator==(const RunState&) const = default;

  const net::ParameterSet& model(const std::string& name) const {
    auto it = models.find(name);
    if (it == models.end()) throw ConfigError("checkpoint has no model '" + name + "'");
    return it->second;
  }
};

inline constexpr char kCkptMagic[4] = {'B', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

namespace detail {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> in, std::size_t off) {
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  return v;
}

inline std::string group_name(net::ParamGroup g) { return g == net::ParamGroup::backbone ? "backbone" : "decoder"; }

inline net::ParamGroup group_from(const std::string& s) {
  if (s == "backbone") return net::ParamGroup::backbone;
  if (s == "decoder") return net::ParamGroup::decoder;
  throw FormatError("checkpoint: unknown parameter group '" + s + "'", 0);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const RunState& s) {
  std::vector<double> payload;
  nlohmann::json arrays = nlohmann::json::array();
  auto push = [&](nlohmann::json meta, const Tensor& t) {
    meta["shape"] = t.shape();
    meta["offset"] = payload.size();
    payload.insert(payload.end(), t.storage().begin(), t.storage().end());
    arrays.push_back(std::move(meta));
  };
  for (const auto& [model, params] : s.models) {
    for (const auto& p : params) {
      push({{"kind", "param"}, {"model", model}, {"name", p.name}, {"group", detail::group_name(p.group)}}, p.value);
    }
  }
  nlohmann::json adam_t = nlohmann::json::object();
  for (const auto& [name, st] : s.optim) {
    adam_t[name] = st.t;
    for (std::size_t i = 0; i < st.m.size(); ++i) push({{"kind", "adam_m"}, {"model", name}, {"index", i}}, st.m[i]);
    for (std::size_t i = 0; i < st.v.size(); ++i) push({{"kind", "adam_v"}, {"model", name}, {"index", i}}, st.v[i]);
  }
  nlohmann::json header{{"stage", s.stage},         {"epoch", s.epoch},       {"step", s.step},
                        {"rng", s.rng},             {"counters", s.counters}, {"history", s.history},
                        {"config", s.config},       {"adam_t", adam_t},       {"arrays", arrays},
                        {"optimizers", nlohmann::json::array()}};
  for (const auto& [name, st] : s.optim) {
    header["optimizers"].push_back({{"name", name}, {"size", st.m.size()}});
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 4);
  detail::put<std::uint32_t>(out, kCkptVersion);
  detail::put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  detail::put<std::uint64_t>(out, payload.size());
  const std::size_t payload_at = out.size();
  out.resize(payload_at + payload.size() * sizeof(double));
  if (!payload.empty()) std::memcpy(out.data() + payload_at, payload.data(), payload.size() * sizeof(double));
  detail::put<std::uint64_t>(out, fnv1a64(out.data() + payload_at, payload.size() * sizeof(double)));
  return out;
}

inline RunState decode_checkpoint(std::span<const std::uint8_t> in) {
  if (in.size() < 16) throw FormatError("checkpoint truncated in header", in.size());
  if (std::memcmp(in.data(), kCkptMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const auto version = detail::get<std::uint32_t>(in, 4);
  if (version != kCkptVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCkptVersion) + ")",
                      4);
  }
  const auto header_len = detail::get<std::uint64_t>(in, 8);
  if (header_len > in.size() - 16) throw FormatError("checkpoint header length exceeds file size", 8);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.begin() + 16, in.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what(), 16);
  }
  std::size_t off = 16 + header_len;
  if (in.size() < off + 8) throw FormatError("checkpoint truncated before payload", in.size());
  const auto count = detail::get<std::uint64_t>(in, off);
  off += 8;
  if (count > (in.size() - off) / sizeof(double) || in.size() - off != count * sizeof(double) + 8) {
    throw FormatError("checkpoint payload size mismatch", off);
  }
  const std::uint8_t* payload = in.data() + off;
  const std::size_t payload_bytes = count * sizeof(double);
  if (detail::get<std::uint64_t>(in, off + payload_bytes) != fnv1a64(payload, payload_bytes)) {
    throw FormatError("checkpoint payload checksum mismatch", off + payload_bytes);
  }

  RunState s;
  try {
    s.stage = h.at("stage").get<std::string>();
    s.epoch = h.at("epoch").get<int>();
    s.step = h.at("step").get<std::int64_t>();
    s.rng = h.at("rng").get<std::map<std::string, std::uint64_t>>();
    s.counters = h.at("counters").get<std::map<std::string, std::int64_t>>();
    s.history = h.at("history");
    s.config = h.at("config");
    for (const auto& o : h.at("optimizers")) {
      AdamState st;
      const auto n = o.at("size").get<std::size_t>();
      st.m.resize(n);
      st.v.resize(n);
      st.t = h.at("adam_t").at(o.at("name").get<std::string>()).get<std::int64_t>();
      s.optim[o.at("name").get<std::string>()] = std::move(st);
    }
    for (const auto& a : h.at("arrays")) {
      const auto shape = a.at("shape").get<std::vector<int>>();
      const auto at = a.at("offset").get<std::size_t>();
      Tensor t(shape);
      if (at + t.size() > count) throw FormatError("checkpoint array exceeds payload", off);
      if (t.size() != 0) std::memcpy(t.storage().data(), payload + at * sizeof(double), t.size() * sizeof(double));
      const auto kind = a.at("kind").get<std::string>();
      const auto model = a.at("model").get<std::string>();
      if (kind == "param") {
        s.models[model].add(a.at("name").get<std::string>(), std::move(t), detail::group_from(a.at("group")));
      } else {
        auto it = s.optim.find(model);
        const auto idx = a.at("index").get<std::size_t>();
        if (it == s.optim.end() || idx >= it->second.m.size()) throw FormatError("checkpoint optimizer index", off);
        (kind == "adam_m" ? it->second.m : it->second.v)[idx] = std::move(t);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is missing fields: ") + e.what(), 16);
  }
  return s;
}

inline void checkpoint_save(const RunState& s, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(s);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  spike::write_file_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline RunState checkpoint_load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  const auto bytes = spike::read_file_bytes(path);
  return decode_checkpoint(bytes);
}

}  // namespace bicross::train
