#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "bicross/autograd/gemm.hpp"
#include "bicross/autograd/tape.hpp"

namespace bicross::ag {

namespace detail {

inline Tape& tape_of(const Var& v) { return *v.tape(); }

inline void expect_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                      Tensor::shape_string(t.shape()));
  }
}

inline void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, double* col) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, int k, int stride, int pad, int ho, int wo, Tensor& dx) {
  const int c_in = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(c) * h + iy) * w;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  const Tensor& in = x.value();
  Tensor out = Tensor::zeros_like(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return tape_of(x).record(std::move(out), x.requires_grad(), [x, deriv](Node& self) {
    const Tensor& xin = x.value();
    Tensor& gx = x.grad();
    for (std::size_t i = 0; i < xin.size(); ++i) gx[i] += self.grad[i] * deriv(xin[i], self.value[i]);
  });
}

}  // namespace detail

// x {C,H,W}, w {O,C,k,k}, b {O} -> {O,Ho,Wo}
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  detail::expect_rank(X, 3, "conv2d input");
  detail::expect_rank(Wt, 4, "conv2d weight");
  const int c_in = X.dim(0), h = X.dim(1), wd = X.dim(2);
  const int c_out = Wt.dim(0), k = Wt.dim(2);
  if (Wt.dim(1) != c_in || Wt.dim(3) != k) {
    throw ConfigError("conv2d: weight " + Tensor::shape_string(Wt.shape()) + " does not fit input " +
                      Tensor::shape_string(X.shape()));
  }
  if (b.value().size() != static_cast<std::size_t>(c_out)) throw ConfigError("conv2d: bias size mismatch");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ConfigError("conv2d: input too small for kernel");
  const int kk = c_in * k * k;
  const int n = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::shared_ptr<std::vector<double>> col;
  const double* cols = X.data();
  if (!direct) {
    col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(kk) * n);
    detail::im2col(X, k, stride, pad, ho, wo, col->data());
    cols = col->data();
  }

  Tensor out({c_out, ho, wo});
  const Tensor& B = b.value();
  for (int o = 0; o < c_out; ++o) std::fill_n(out.data() + static_cast<std::size_t>(o) * n, n, B[o]);
  gemm(false, false, c_out, n, kk, 1.0, Wt.data(), kk, cols, n, 1.0, out.data(), n);

  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return detail::tape_of(x).record(std::move(out), rg, [=](Node& self) {
    const double* dy = self.grad.data();
    const double* cdata = direct ? x.value().data() : col->data();
    if (w.requires_grad()) {
      gemm(false, true, c_out, kk, n, 1.0, dy, n, cdata, n, 1.0, w.grad().data(), kk);
    }
    if (b.requires_grad()) {
      Tensor& gb = b.grad();
      for (int o = 0; o < c_out; ++o) {
        double s = 0.0;
        const double* row = dy + static_cast<std::size_t>(o) * n;
        for (int i = 0; i < n; ++i) s += row[i];
        gb[o] += s;
      }
    }
    if (x.requires_grad()) {
      if (direct) {
        gemm(true, false, kk, n, c_out, 1.0, w.value().data(), kk, dy, n, 1.0, x.grad().data(), n);
      } else {
        std::vector<double> dcol(static_cast<std::size_t>(kk) * n);
        gemm(true, false, kk, n, c_out, 1.0, w.value().data(), kk, dy, n, 0.0, dcol.data(), n);
        detail::col2im_add(dcol.data(), k, stride, pad, ho, wo, x.grad());
      }
    }
  });
}

inline Var relu(const Var& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& x) {
  return detail::unary(
      x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline double softplus_value(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

inline Var softplus(const Var& x) {
  return detail::unary(x, softplus_value, [](double v, double) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
}

inline double sigmoid_value(double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

// exp(lo + (hi - lo) * sigmoid(x)): a smooth map onto [e^lo, e^hi].
inline Var exp_bounded(const Var& x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::exp(lo + (hi - lo) * sigmoid_value(v)); },
      [lo, hi](double v, double y) {
        const double s = sigmoid_value(v);
        return y * (hi - lo) * s * (1.0 - s);
      });
}

inline Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ConfigError("add: shape mismatch " + Tensor::shape_string(a.value().shape()) + " vs " +
                      Tensor::shape_string(b.value().shape()));
  }
  Tensor out = a.value();
  out += b.value();
  return detail::tape_of(a).record(std::move(out), a.requires_grad() || b.requires_grad(), [a, b](Node& self) {
    if (a.requires_grad()) a.grad() += self.grad;
    if (b.requires_grad()) b.grad() += self.grad;
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return detail::tape_of(a).record(std::move(out), a.requires_grad(), [a, s](Node& self) {
    a.grad().axpy(s, self.grad);
  });
}

// Sum of weighted scalars.
inline Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) throw InvalidInput("weighted_sum: bad term list");
  double total = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw InvalidInput("weighted_sum: terms must be scalars");
    total += weights[i] * terms[i].value()[0];
    rg = rg || terms[i].requires_grad();
  }
  return detail::tape_of(terms[0]).record(Tensor({1}, total), rg, [terms, weights](Node& self) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].requires_grad()) terms[i].grad()[0] += weights[i] * self.grad[0];
    }
  });
}

// x {C,H,W} scaled per channel by s {C}.
inline Var channel_scale(const Var& x, const Var& s) {
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "channel_scale");
  const int c = X.dim(0);
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  if (s.value().size() != static_cast<std::size_t>(c)) throw ConfigError("channel_scale: size mismatch");
  Tensor out = X;
  for (int ch = 0; ch < c; ++ch) {
    const double f = s.value()[ch];
    double* p = out.data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] *= f;
  }
  return detail::tape_of(x).record(std::move(out), x.requires_grad() || s.requires_grad(),
                                   [x, s, c, plane](Node& self) {
                                     const double* dy = self.grad.data();
                                     if (x.requires_grad()) {
                                       double* gx = x.grad().data();
                                       for (int ch = 0; ch < c; ++ch) {
                                         const double f = s.value()[ch];
                                         for (std::size_t i = 0; i < plane; ++i) gx[ch * plane + i] += dy[ch * plane + i] * f;
                                       }
                                     }
                                     if (s.requires_grad()) {
                                       Tensor& gs = s.grad();
                                       const double* xv = x.value().data();
                                       for (int ch = 0; ch < c; ++ch) {
                                         double acc = 0.0;
                                         for (std::size_t i = 0; i < plane; ++i) acc += dy[ch * plane + i] * xv[ch * plane + i];
                                         gs[ch] += acc;
                                       }
                                     }
                                   });
}

// x {C,H,W} plus a per-channel vector v {C} broadcast over space.
inline Var channel_add(const Var& x, const Var& v) {
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "channel_add");
  const int c = X.dim(0);
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  if (v.value().size() != static_cast<std::size_t>(c)) throw ConfigError("channel_add: size mismatch");
  Tensor out = X;
  for (int ch = 0; ch < c; ++ch) {
    double* p = out.data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += v.value()[ch];
  }
  return detail::tape_of(x).record(std::move(out), x.requires_grad() || v.requires_grad(),
                                   [x, v, c, plane](Node& self) {
                                     if (x.requires_grad()) x.grad() += self.grad;
                                     if (v.requires_grad()) {
                                       Tensor& gv = v.grad();
                                       for (int ch = 0; ch < c; ++ch) {
                                         double acc = 0.0;
                                         for (std::size_t i = 0; i < plane; ++i) acc += self.grad[ch * plane + i];
                                         gv[ch] += acc;
                                       }
                                     }
                                   });
}

// {C,H,W} -> {C}
inline Var mean_spatial(const Var& x) {
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "mean_spatial");
  const int c = X.dim(0);
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += X[ch * plane + i];
    out[ch] = acc / static_cast<double>(plane);
  }
  return detail::tape_of(x).record(std::move(out), x.requires_grad(), [x, c, plane](Node& self) {
    double* gx = x.grad().data();
    for (int ch = 0; ch < c; ++ch) {
      const double g = self.grad[ch] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[ch * plane + i] += g;
    }
  });
}

// y = W x + b; x {I}, W {O,I}, b {O}
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  detail::expect_rank(Wt, 2, "linear weight");
  const int o = Wt.dim(0), in = Wt.dim(1);
  if (X.size() != static_cast<std::size_t>(in) || b.value().size() != static_cast<std::size_t>(o)) {
    throw ConfigError("linear: shape mismatch, weight " + Tensor::shape_string(Wt.shape()) + " input " +
                      Tensor::shape_string(X.shape()));
  }
  Tensor out({o});
  for (int r = 0; r < o; ++r) {
    double acc = b.value()[r];
    const double* row = Wt.data() + static_cast<std::size_t>(r) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * X[i];
    out[r] = acc;
  }
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return detail::tape_of(x).record(std::move(out), rg, [x, w, b, o, in](Node& self) {
    const double* dy = self.grad.data();
    if (x.requires_grad()) {
      Tensor& gx = x.grad();
      for (int r = 0; r < o; ++r) {
        const double* row = w.value().data() + static_cast<std::size_t>(r) * in;
        for (int i = 0; i < in; ++i) gx[i] += row[i] * dy[r];
      }
    }
    if (w.requires_grad()) {
      double* gw = w.grad().data();
      for (int r = 0; r < o; ++r) {
        for (int i = 0; i < in; ++i) gw[static_cast<std::size_t>(r) * in + i] += dy[r] * x.value()[i];
      }
    }
    if (b.requires_grad()) {
      Tensor& gb = b.grad();
      for (int r = 0; r < o; ++r) gb[r] += dy[r];
    }
  });
}

// Nearest-neighbour 2x upsampling of {C,H,W}.
inline Var upsample2(const Var& x) {
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "upsample2");
  const int c = X.dim(0), h = X.dim(1), w = X.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = X.at(ch, y / 2, xx / 2);
  return detail::tape_of(x).record(std::move(out), x.requires_grad(), [x, c, h, w](Node& self) {
    Tensor& gx = x.grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) gx.at(ch, y / 2, xx / 2) += self.grad.at(ch, y, xx);
  });
}

// Single-query attention pooling: out = q + sum_s softmax_s(q.k_s / sqrt(D)) v_s.
inline Var attend(const Var& q, const std::vector<Var>& keys, const std::vector<Var>& vals) {
  const std::size_t d = q.value().size();
  const std::size_t m = keys.size();
  if (m == 0 || vals.size() != m) throw ConfigError("attend: need matching non-empty keys and values");
  for (std::size_t s = 0; s < m; ++s) {
    if (keys[s].value().size() != d || vals[s].value().size() != d) throw ConfigError("attend: width mismatch");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> score(m);
  double mx = -1e300;
  for (std::size_t s = 0; s < m; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += q.value()[i] * keys[s].value()[i];
    score[s] = acc * inv;
    mx = std::max(mx, score[s]);
  }
  auto attn = std::make_shared<std::vector<double>>(m);
  double z = 0.0;
  for (std::size_t s = 0; s < m; ++s) z += ((*attn)[s] = std::exp(score[s] - mx));
  for (auto& a : *attn) a /= z;

  Tensor out = q.value();
  for (std::size_t s = 0; s < m; ++s) out.axpy((*attn)[s], vals[s].value());

  bool rg = q.requires_grad();
  for (std::size_t s = 0; s < m; ++s) rg = rg || keys[s].requires_grad() || vals[s].requires_grad();
  return detail::tape_of(q).record(std::move(out), rg, [=](Node& self) {
    const Tensor& dy = self.grad;
    std::vector<double> da(m);
    double mean_da = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += dy[i] * vals[s].value()[i];
      da[s] = acc;
      mean_da += (*attn)[s] * acc;
    }
    if (q.requires_grad()) q.grad() += dy;
    for (std::size_t s = 0; s < m; ++s) {
      const double ds = (*attn)[s] * (da[s] - mean_da) * inv;
      if (vals[s].requires_grad()) vals[s].grad().axpy((*attn)[s], dy);
      if (keys[s].requires_grad()) keys[s].grad().axpy(ds, q.value());
      if (q.requires_grad()) q.grad().axpy(ds, keys[s].value());
    }
  });
}

inline constexpr double kGroupNormEps = 1e-5;

// Group normalisation of x {C,H,W} over `groups` channel groups, then gamma {C} * xhat + beta {C}.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups) {
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "group_norm");
  const int c = X.dim(0);
  if (groups < 1 || c % groups != 0) throw ConfigError("group_norm: channels not divisible by groups");
  if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c)) {
    throw ConfigError("group_norm: affine size mismatch");
  }
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  const int cpg = c / groups;
  const std::size_t gsize = plane * cpg;
  auto xhat = std::make_shared<Tensor>(Tensor::zeros_like(X));
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  Tensor out = Tensor::zeros_like(X);
  for (int g = 0; g < groups; ++g) {
    const double* src = X.data() + g * gsize;
    double mean = 0.0;
    for (std::size_t i = 0; i < gsize; ++i) mean += src[i];
    mean /= static_cast<double>(gsize);
    double var = 0.0;
    for (std::size_t i = 0; i < gsize; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(gsize);
    const double is = 1.0 / std::sqrt(var + kGroupNormEps);
    (*inv_std)[g] = is;
    double* xh = xhat->data() + g * gsize;
    for (std::size_t i = 0; i < gsize; ++i) xh[i] = (src[i] - mean) * is;
  }
  for (int ch = 0; ch < c; ++ch) {
    const double ga = gamma.value()[ch], be = beta.value()[ch];
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = ga * (*xhat)[ch * plane + i] + be;
  }
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return detail::tape_of(x).record(std::move(out), rg, [x, gamma, beta, xhat, inv_std, c, plane, cpg, gsize,
                                                        groups](Node& self) {
    const Tensor& dy = self.grad;
    if (gamma.requires_grad() || beta.requires_grad()) {
      for (int ch = 0; ch < c; ++ch) {
        double sg = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          sg += dy[ch * plane + i] * (*xhat)[ch * plane + i];
          sb += dy[ch * plane + i];
        }
        if (gamma.requires_grad()) gamma.grad()[ch] += sg;
        if (beta.requires_grad()) beta.grad()[ch] += sb;
      }
    }
    if (!x.requires_grad()) return;
    Tensor& gx = x.grad();
    std::vector<double> dxh(gsize);
    for (int g = 0; g < groups; ++g) {
      double m1 = 0.0, m2 = 0.0;
      for (int k = 0; k < cpg; ++k) {
        const int ch = g * cpg + k;
        const double ga = gamma.value()[ch];
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t at = ch * plane + i;
          const double d = dy[at] * ga;
          dxh[k * plane + i] = d;
          m1 += d;
          m2 += d * (*xhat)[at];
        }
      }
      m1 /= static_cast<double>(gsize);
      m2 /= static_cast<double>(gsize);
      const double is = (*inv_std)[g];
      for (std::size_t i = 0; i < gsize; ++i) {
        const std::size_t at = g * gsize + i;
        gx[at] += is * (dxh[i] - m1 - (*xhat)[at] * m2);
      }
    }
  });
}

inline constexpr double kNormalizeEps = 1e-12;

// v / sqrt(|v|^2 + eps)
inline Var l2_normalize(const Var& v) {
  const Tensor& V = v.value();
  double sq = 0.0;
  for (double e : V.storage()) sq += e * e;
  const double n = std::sqrt(sq + kNormalizeEps);
  Tensor out = V;
  for (auto& e : out.storage()) e /= n;
  return detail::tape_of(v).record(std::move(out), v.requires_grad(), [v, n](Node& self) {
    double dot = 0.0;
    for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.value[i] * self.grad[i];
    Tensor& gv = v.grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) gv[i] += (self.grad[i] - self.value[i] * dot) / n;
  });
}

// Identity forward; backward multiplies the incoming gradient by -mu.
inline Var grad_reverse(const Var& x, double mu) {
  return detail::tape_of(x).record(x.value(), x.requires_grad(), [x, mu](Node& self) {
    x.grad().axpy(-mu, self.grad);
  });
}

// Blocks gradient flow.
inline Var detach(const Var& x) { return detail::tape_of(x).leaf(x.value(), false); }

// Scalar node whose value and input gradients were computed outside the tape.
inline Var external_scalar(Tape& tape, const std::vector<Var>& inputs, double value, std::vector<Tensor> grads) {
  if (grads.size() != inputs.size()) throw InvalidInput("external_scalar: one gradient per input required");
  bool rg = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!grads[i].empty() && grads[i].size() != inputs[i].value().size()) {
      throw InvalidInput("external_scalar: gradient size mismatch for input " + std::to_string(i));
    }
    rg = rg || (inputs[i].requires_grad() && !grads[i].empty());
  }
  auto g = std::make_shared<std::vector<Tensor>>(std::move(grads));
  return tape.record(Tensor({1}, value), rg, [inputs, g](Node& self) {
    const double up = self.grad[0];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad() && !(*g)[i].empty()) {
        Tensor& gi = inputs[i].grad();
        const Tensor& src = (*g)[i];
        for (std::size_t j = 0; j < src.size(); ++j) gi[j] += up * src[j];
      }
    }
  });
}

}  // namespace bicross::ag
