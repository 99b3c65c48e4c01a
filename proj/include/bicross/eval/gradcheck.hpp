#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"

namespace bicross::eval {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// A scalar function of named tensors together with its analytic gradient.
struct LossProbe {
  std::function<double(const std::vector<NamedTensor>&)> value;
  std::function<std::vector<Tensor>(const std::vector<NamedTensor>&)> gradient;
};

struct GradcheckOptions {
  double epsilon = 1e-5;
  int coords_per_param = 64;  // every coordinate is checked when a tensor is smaller
  std::uint64_t seed = 0;
  double denom_floor = 1e-5;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::vector<double> per_param_max;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradcheckResult gradcheck(const LossProbe& probe, std::vector<NamedTensor> params,
                                 const GradcheckOptions& opt = {}) {
  if (!(opt.epsilon > 0.0)) throw InvalidParameter("gradcheck epsilon must be positive");
  auto eval = [&](const std::string& where) {
    const double v = probe.value(params);
    if (!std::isfinite(v)) throw NonFiniteLoss("gradcheck: non-finite probe value while perturbing " + where);
    return v;
  };
  eval("(unperturbed)");
  const std::vector<Tensor> analytic = probe.gradient(params);
  if (analytic.size() != params.size()) throw InvalidInput("gradcheck: gradient count does not match parameters");

  GradcheckResult r;
  r.per_param_max.assign(params.size(), 0.0);
  SplitMix64 rng(opt.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].value;
    if (analytic[p].size() != t.size()) {
      throw InvalidInput("gradcheck: gradient of '" + params[p].name + "' has the wrong size");
    }
    std::vector<std::size_t> coords;
    if (t.size() <= static_cast<std::size_t>(opt.coords_per_param)) {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      for (int k = 0; k < opt.coords_per_param; ++k) {
        coords.push_back(static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(t.size()) - 1)));
      }
    }
    for (std::size_t i : coords) {
      const double orig = t[i];
      const std::string where = params[p].name + "[" + std::to_string(i) + "]";
      t[i] = orig + opt.epsilon;
      const double fp = eval(where);
      t[i] = orig - opt.epsilon;
      const double fm = eval(where);
      t[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.epsilon);
      const double a = analytic[p][i];
      if (!std::isfinite(a)) throw NonFiniteLoss("gradcheck: non-finite analytic gradient at " + where);
      const double err = relative_error(a, numeric, opt.denom_floor);
      r.per_param_max[p] = std::max(r.per_param_max[p], err);
      ++r.checked;
      if (err > r.max_rel_error || r.worst_param.empty()) {
        if (err >= r.max_rel_error) {
          r.max_rel_error = err;
          r.worst_param = params[p].name;
          r.worst_index = i;
          r.worst_analytic = a;
          r.worst_numeric = numeric;
        }
      }
    }
  }
  return r;
}

}  // namespace bicross::eval
