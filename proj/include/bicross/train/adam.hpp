#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/core/tensor.hpp"
#include "bicross/net/params.hpp"

namespace bicross::train {

struct AdamHyper {
  double lr_backbone = 1e-5;
  double lr_decoder = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction and one learning rate per parameter group.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState for_params(const net::ParameterSet& p) {
    AdamState s;
    s.m = p.zero_grads();
    s.v = p.zero_grads();
    return s;
  }

  bool operator==(const AdamState&) const = default;

  void step(net::ParameterSet& params, const std::vector<Tensor>& grads, const AdamHyper& h) {
    if (grads.size() != params.size() || m.size() != params.size()) {
      throw InvalidInput("optimizer state does not match the parameter set");
    }
    ++t;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double lr = params[i].group == net::ParamGroup::backbone ? h.lr_backbone : h.lr_decoder;
      auto& w = params[i].value.storage();
      auto& mi = m[i].storage();
      auto& vi = v[i].storage();
      const auto& g = grads[i].storage();
      for (std::size_t k = 0; k < w.size(); ++k) {
        mi[k] = h.beta1 * mi[k] + (1.0 - h.beta1) * g[k];
        vi[k] = h.beta2 * vi[k] + (1.0 - h.beta2) * g[k] * g[k];
        w[k] -= lr * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + h.eps);
      }
    }
  }
};

}  // namespace bicross::train
