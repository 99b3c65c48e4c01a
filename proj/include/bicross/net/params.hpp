#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/core/tensor.hpp"

namespace bicross::net {

enum class ParamGroup { backbone, decoder };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::backbone;
};

// Ordered collection of named arrays. Order and shapes are fixed by the
// network config, so two snapshots of one config line up index by index.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value, ParamGroup group) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value), group});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  const Tensor& value(const std::string& name) const { return params_[index(name)].value; }
  Tensor& value(const std::string& name) { return params_[index(name)].value; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  bool same_structure(const ParameterSet& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != o.params_[i].name || params_[i].value.shape() != o.params_[i].value.shape()) {
        return false;
      }
    }
    return true;
  }

  // Copies every parameter whose name and shape match; returns how many.
  std::size_t load_matching(const ParameterSet& src) {
    std::size_t n = 0;
    for (auto& p : params_) {
      auto it = src.index_.find(p.name);
      if (it == src.index_.end()) continue;
      const Tensor& v = src.params_[it->second].value;
      if (v.shape() != p.value.shape()) continue;
      p.value = v;
      ++n;
    }
    return n;
  }

  std::vector<Tensor> zero_grads() const {
    std::vector<Tensor> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(Tensor::zeros_like(p.value));
    return g;
  }

  bool operator==(const ParameterSet& o) const {
    if (!same_structure(o)) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!(params_[i].value == o.params_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParameterSnapshot = ParameterSet;

// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
inline void ema_update_inplace(ParameterSet& teacher, const ParameterSet& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidParameter("EMA alpha must lie in [0, 1]");
  if (!teacher.same_structure(student)) throw InvalidParameter("EMA snapshots are not structurally identical");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto& t = teacher[i].value.storage();
    const auto& s = student[i].value.storage();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = alpha * t[j] + (1.0 - alpha) * s[j];
  }
}

inline ParameterSet ema_update(const ParameterSet& teacher, const ParameterSet& student, double alpha) {
  ParameterSet out = teacher;
  ema_update_inplace(out, student, alpha);
  return out;
}

inline double max_abs_difference(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_structure(b)) throw InvalidParameter("snapshots are not structurally identical");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].value.size(); ++j) {
      m = std::max(m, std::abs(a[i].value[j] - b[i].value[j]));
    }
  }
  return m;
}

}  // namespace bicross::net
