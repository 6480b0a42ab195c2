// Copyright 2026 The flasep Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLASEP_ATTENTION_HPP_
#define FLASEP_ATTENTION_HPP_

// Softmax attention, kernelized linear attention, focused linear attention
// with a depthwise-convolution term on V, the multi-head wrapper and the
// gated pre-norm block that hosts them.
//
// Model-level functions are templates over the value type: with T = Tensor
// they are pure inference code, with T = Var they record onto a Tape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flasep/autodiff.hpp"
#include "flasep/error.hpp"
#include "flasep/ops.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

inline constexpr double kAttentionEps = 1e-12;

enum class AttentionKind { kSoftmax, kVla, kFla };

enum class GateActivation { kSilu, kSigmoid };

struct AttentionMode {
  AttentionKind kind = AttentionKind::kFla;
  bool gated = true;

  friend bool operator==(const AttentionMode&, const AttentionMode&) = default;
};

inline std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kSoftmax:
      return "softmax";
    case AttentionKind::kVla:
      return "vla";
    case AttentionKind::kFla:
      return "fla";
  }
  return "?";
}

// "softmax", "vla" and "fla" are gated; a "-nogate" suffix disables the gate.
inline std::string to_string(const AttentionMode& mode) {
  return to_string(mode.kind) + (mode.gated ? "" : "-nogate");
}

inline AttentionMode parse_attention_mode(std::string_view text) {
  AttentionMode mode;
  constexpr std::string_view kNoGate = "-nogate";
  if (text.size() > kNoGate.size() && text.ends_with(kNoGate)) {
    mode.gated = false;
    text.remove_suffix(kNoGate.size());
  }
  if (text == "softmax") {
    mode.kind = AttentionKind::kSoftmax;
  } else if (text == "vla") {
    mode.kind = AttentionKind::kVla;
  } else if (text == "fla") {
    mode.kind = AttentionKind::kFla;
  } else {
    throw ConfigError("unknown attention mode '" + std::string(text) + "'");
  }
  return mode;
}

// ---------------------------------------------------------------------------
// Focused feature map: phi_p(x) = (|r| / |r^p|) r^p with r = ReLU(x), per row.
//
// Rows are divided by their max entry before the power. The map is
// homogeneous of degree one in r, so this leaves the value unchanged while
// keeping |(r/max)^p| >= 1; eps then only guards the denominator and large p
// cannot underflow or overflow. Rows with no positive entry map to zero.

namespace detail {

inline void check_focus(double p) {
  if (!(p > 0.0) || !std::isfinite(p)) {
    throw ConfigError("focus factor p must be positive, got " +
                      std::to_string(p));
  }
}

inline double focus_pow(double base, double p) {
  if (p == 1.0) return base;
  if (p == 2.0) return base * base;
  if (p == 3.0) return base * base * base;
  return std::pow(base, p);
}

}  // namespace detail

inline Tensor focused_feature_map(const Tensor& x, double p,
                                  double eps = kAttentionEps) {
  detail::check_focus(p);
  detail::require_matrix(x, "focused_feature_map");
  const std::size_t d = x.cols();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    double mx = 0.0, a2 = 0.0;
    for (double v : xr) {
      if (v > 0.0) {
        mx = std::max(mx, v);
        a2 += v * v;
      }
    }
    if (mx == 0.0) continue;
    double b2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double w = xr[j] > 0.0 ? detail::focus_pow(xr[j] / mx, p) : 0.0;
      yr[j] = w;
      b2 += w * w;
    }
    const double s = std::sqrt(a2) / (std::sqrt(b2) + eps);
    for (double& v : yr) v *= s;
  }
  return detail::finite_or_throw(std::move(y), "focused_feature_map");
}

// The row max is treated as a constant in the backward pass; the value
// depends on it only through eps.
inline Var focused_feature_map(const Var& x, double p,
                               double eps = kAttentionEps) {
  return x.tape()->record(
      focused_feature_map(x.value(), p, eps), {x},
      [x, p, eps](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        const Tensor& xv = x.value();
        const std::size_t d = xv.cols();
        Tensor dx(xv.shape());
        std::vector<double> w(d);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
          auto xr = xv.row(i);
          auto gr = g.row(i);
          double mx = 0.0, a2 = 0.0;
          for (double v : xr) {
            if (v > 0.0) {
              mx = std::max(mx, v);
              a2 += v * v;
            }
          }
          if (mx == 0.0) continue;
          double b2 = 0.0, gw_dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            w[j] = xr[j] > 0.0 ? detail::focus_pow(xr[j] / mx, p) : 0.0;
            b2 += w[j] * w[j];
            gw_dot += gr[j] * w[j];
          }
          const double a = std::sqrt(a2), b = std::sqrt(b2);
          const double den = b + eps;
          const double ga = gw_dot / den;
          const double coef = gw_dot * a / (den * den * b);
          auto dr = dx.row(i);
          for (std::size_t j = 0; j < d; ++j) {
            if (!(xr[j] > 0.0)) continue;
            const double gw = a * gr[j] / den - coef * w[j];
            const double q = xr[j] / mx;
            const double dwdr = p * detail::focus_pow(q, p - 1.0) / mx;
            dr[j] = gw * dwdr + ga * xr[j] / a;
          }
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

// ---------------------------------------------------------------------------
// Kernelized (linear) attention on precomputed nonnegative features.
//
//   O_i = phi(Q_i) (sum_j phi(K_j)^T V_j) / (phi(Q_i) . sum_j phi(K_j) + eps)
//
// kLinear computes the bracket first and never forms an N x N matrix.
// kQuadratic forms the row-normalized N x N weights; it exists as the
// reference ordering. Rows whose raw denominator is below eps become zero
// rows and are counted in *degenerate_rows.

enum class LinearOrder { kQuadratic, kLinear };

namespace detail {

inline void check_attention_shapes(const Tensor& q, const Tensor& k,
                                   const Tensor& v, const char* op) {
  require_matrix(q, op);
  require_matrix(k, op);
  require_matrix(v, op);
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DimensionError(std::string(op) + ": incompatible Q " +
                         shape_string(q.shape()) + ", K " +
                         shape_string(k.shape()) + ", V " +
                         shape_string(v.shape()));
  }
}

inline Tensor key_sums(const Tensor& phi_k) {
  Tensor z(Shape{phi_k.cols()});
  for (std::size_t j = 0; j < phi_k.rows(); ++j) {
    auto r = phi_k.row(j);
    for (std::size_t c = 0; c < r.size(); ++c) z[c] += r[c];
  }
  return z;
}

}  // namespace detail

// Row-normalized weights phi(Q) phi(K)^T / rowsum, [N x M]. Degenerate rows
// are zero.
inline Tensor linear_attention_weights(const Tensor& phi_q,
                                       const Tensor& phi_k,
                                       double eps = kAttentionEps) {
  Tensor w = matmul_nt(phi_q, phi_k);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto r = w.row(i);
    double s = 0.0;
    for (double v : r) s += v;
    const double inv = s < eps ? 0.0 : 1.0 / (s + eps);
    for (double& v : r) v *= inv;
  }
  return w;
}

inline Tensor linear_attention(const Tensor& phi_q, const Tensor& phi_k,
                               const Tensor& v,
                               LinearOrder order = LinearOrder::kLinear,
                               double eps = kAttentionEps,
                               std::size_t* degenerate_rows = nullptr) {
  detail::check_attention_shapes(phi_q, phi_k, v, "linear_attention");
  const std::size_t n = phi_q.rows(), dv = v.cols();
  std::size_t degenerate = 0;
  Tensor out(Shape{n, dv});
  if (order == LinearOrder::kQuadratic) {
    const Tensor sim = matmul_nt(phi_q, phi_k);
    Tensor num = matmul(sim, v);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (double w : sim.row(i)) s += w;
      auto o = out.row(i);
      if (s < eps) {
        ++degenerate;
        continue;
      }
      const double inv = 1.0 / (s + eps);
      auto nr = num.row(i);
      for (std::size_t c = 0; c < dv; ++c) o[c] = nr[c] * inv;
    }
  } else {
    const Tensor kv = matmul_tn(phi_k, v);
    const Tensor z = detail::key_sums(phi_k);
    out = matmul(phi_q, kv);
    for (std::size_t i = 0; i < n; ++i) {
      auto qr = phi_q.row(i);
      double s = 0.0;
      for (std::size_t c = 0; c < qr.size(); ++c) s += qr[c] * z[c];
      auto o = out.row(i);
      if (s < eps) {
        ++degenerate;
        std::fill(o.begin(), o.end(), 0.0);
        continue;
      }
      const double inv = 1.0 / (s + eps);
      for (double& val : o) val *= inv;
    }
  }
  if (degenerate_rows) *degenerate_rows = degenerate;
  return detail::finite_or_throw(std::move(out), "linear_attention");
}

// Linear-order kernelized attention on the tape.
inline Var linear_attention(const Var& phi_q, const Var& phi_k, const Var& v,
                            double eps = kAttentionEps) {
  return phi_q.tape()->record(
      linear_attention(phi_q.value(), phi_k.value(), v.value(),
                       LinearOrder::kLinear, eps),
      {phi_q, phi_k, v},
      [phi_q, phi_k, v, eps](const Tensor& g, const Tensor& out,
                             const std::vector<bool>& needs) {
        const Tensor& a = phi_q.value();
        const Tensor& b = phi_k.value();
        const Tensor& vv = v.value();
        const std::size_t n = a.rows(), d = a.cols(), dv = vv.cols();
        const Tensor kv = matmul_tn(b, vv);
        const Tensor z = detail::key_sums(b);
        // gn = dL/dnum, gden = dL/dden per row.
        Tensor gn(Shape{n, dv});
        Tensor gden(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
          auto ar = a.row(i);
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += ar[c] * z[c];
          if (s < eps) continue;
          const double den = s + eps;
          auto gr = g.row(i);
          auto orow = out.row(i);
          double dot = 0.0;
          for (std::size_t c = 0; c < dv; ++c) {
            gn(i, c) = gr[c] / den;
            dot += gr[c] * orow[c];
          }
          gden(i, 0) = -dot / den;
        }
        std::vector<Tensor> r(3);
        Tensor gkv;
        if (needs[1] || needs[2]) gkv = matmul_tn(a, gn);
        if (needs[0]) {
          Tensor ga = matmul_nt(gn, kv);
          for (std::size_t i = 0; i < n; ++i) {
            const double gd = gden(i, 0);
            if (gd == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) ga(i, c) += gd * z[c];
          }
          r[0] = std::move(ga);
        }
        if (needs[1]) {
          Tensor gb = matmul_nt(vv, gkv);
          const Tensor gz = matmul_tn(gden, a);  // [1 x d]
          for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < d; ++c) gb(j, c) += gz(0, c);
          }
          r[1] = std::move(gb);
        }
        if (needs[2]) r[2] = matmul(b, gkv);
        return r;
      });
}

using FeatureMap = std::function<Tensor(const Tensor&)>;

inline Tensor vanilla_linear_attention(const Tensor& q, const Tensor& k,
                                       const Tensor& v,
                                       const FeatureMap& kernel,
                                       LinearOrder order = LinearOrder::kLinear,
                                       double eps = kAttentionEps,
                                       std::size_t* degenerate_rows = nullptr) {
  detail::check_attention_shapes(q, k, v, "vanilla_linear_attention");
  return linear_attention(kernel(q), kernel(k), v, order, eps,
                          degenerate_rows);
}

// softmax(Q K^T / sqrt(d)) V. Materializes the N x M weight matrix.
inline Tensor softmax_attention(const Tensor& q, const Tensor& k,
                                const Tensor& v) {
  detail::check_attention_shapes(q, k, v, "softmax_attention");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor weights = softmax_rows(matmul_nt(scale(q, inv_sqrt_d), k));
  return matmul(weights, v);
}

inline Var softmax_attention(const Var& q, const Var& k, const Var& v) {
  detail::check_attention_shapes(q.value(), k.value(), v.value(),
                                 "softmax_attention");
  const double inv_sqrt_d =
      1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  return matmul(softmax_rows(matmul_nt(scale(q, inv_sqrt_d), k)), v);
}

// Focused linear attention: kernelized attention with phi_p plus a
// depthwise convolution of V that lifts the rank of the effective map.
template <class T>
T focused_linear_attention(const T& q, const T& k, const T& v, double p,
                           const T& dwc_kernel) {
  return add(linear_attention(focused_feature_map(q, p),
                              focused_feature_map(k, p), v),
             depthwise_conv1d(v, dwc_kernel));
}

// ---------------------------------------------------------------------------
// Block parameters.

template <class T>
struct FlaWeights {
  T wq, wk, wv;    // [d x d] input projections
  T wo;            // [d x d] output projection
  T dwc_kernel;    // [d x k], one row per channel
  T wg;            // [d x d] gate projection, bias-free
  T norm_gain;     // [d]
  T norm_bias;     // [d]

  template <class F>
  void visit(F&& f) {
    f("wq", wq);
    f("wk", wk);
    f("wv", wv);
    f("wo", wo);
    f("dwc_kernel", dwc_kernel);
    f("wg", wg);
    f("norm_gain", norm_gain);
    f("norm_bias", norm_bias);
  }
};

struct FlaHyper {
  double p = 3.0;
  std::size_t kernel_size = 7;
  std::size_t heads = 1;
  GateActivation activation = GateActivation::kSilu;

  void validate(std::size_t d) const {
    detail::check_focus(p);
    require_odd_kernel(kernel_size, "FlaHyper");
    if (heads == 0 || d % heads != 0) {
      throw ConfigError("channel width " + std::to_string(d) +
                        " is not divisible by " + std::to_string(heads) +
                        " heads");
    }
  }
};

struct FlaParams {
  FlaWeights<Tensor> weights;
  FlaHyper hyper;

  std::size_t dim() const { return weights.wq.rows(); }

  void validate() const {
    const std::size_t d = weights.wq.empty() ? 0 : dim();
    hyper.validate(d);
    const Shape sq{d, d};
    for (const Tensor* t : {&weights.wq, &weights.wk, &weights.wv, &weights.wo,
                            &weights.wg}) {
      if (t->shape() != sq) {
        throw DimensionError("projection has shape " +
                             shape_string(t->shape()) + ", expected " +
                             shape_string(sq));
      }
    }
    if (weights.dwc_kernel.shape() != Shape{d, hyper.kernel_size}) {
      throw DimensionError("dwc_kernel has shape " +
                           shape_string(weights.dwc_kernel.shape()));
    }
    if (weights.norm_gain.shape() != Shape{d} ||
        weights.norm_bias.shape() != Shape{d}) {
      throw DimensionError("norm gain/bias must have shape [d]");
    }
  }

  // Projections ~ N(0, 1/d); DWC kernel = centered delta + N(0, 0.02^2);
  // unit norm gain, zero bias.
  static FlaParams init(std::size_t d, const FlaHyper& hyper,
                        std::mt19937_64& rng) {
    hyper.validate(d);
    FlaParams params;
    params.hyper = hyper;
    const double std_proj = 1.0 / std::sqrt(static_cast<double>(d));
    auto& w = params.weights;
    w.wq = Tensor::randn({d, d}, rng, std_proj);
    w.wk = Tensor::randn({d, d}, rng, std_proj);
    w.wv = Tensor::randn({d, d}, rng, std_proj);
    w.wo = Tensor::randn({d, d}, rng, std_proj);
    w.dwc_kernel = Tensor::randn({d, hyper.kernel_size}, rng, 0.02);
    for (std::size_t c = 0; c < d; ++c) {
      w.dwc_kernel(c, hyper.kernel_size / 2) += 1.0;
    }
    w.wg = Tensor::randn({d, d}, rng, std_proj);
    w.norm_gain = Tensor(Shape{d}, 1.0);
    w.norm_bias = Tensor(Shape{d}, 0.0);
    return params;
  }
};

// Registers every weight as a named tape parameter "<prefix><field>".
inline FlaWeights<Var> bind_params(Tape& tape, const FlaWeights<Tensor>& w,
                            const std::string& prefix) {
  auto param = [&](const char* name, const Tensor& t) {
    return tape.parameter(prefix + name, t);
  };
  FlaWeights<Var> out;
  out.wq = param("wq", w.wq);
  out.wk = param("wk", w.wk);
  out.wv = param("wv", w.wv);
  out.wo = param("wo", w.wo);
  out.dwc_kernel = param("dwc_kernel", w.dwc_kernel);
  out.wg = param("wg", w.wg);
  out.norm_gain = param("norm_gain", w.norm_gain);
  out.norm_bias = param("norm_bias", w.norm_bias);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-head attention and the gated block.

template <class T>
T gate_activation(const T& x, GateActivation act) {
  switch (act) {
    case GateActivation::kSigmoid:
      return sigmoid(x);
    case GateActivation::kSilu:
    default:
      return silu(x);
  }
}

// Q = Z Wq, K = Z Wk, V = Z Wv, split into `heads` contiguous channel
// blocks. Each head runs the selected attention core; heads are concatenated
// and projected by Wo. In FLA mode each channel of V is also convolved with
// its own row of dwc_kernel, which is the per-head DWC term applied to all
// heads at once.
template <class T>
T multi_head_attention(const T& z, const FlaWeights<T>& w,
                       const FlaHyper& hyper, AttentionKind kind) {
  const std::size_t d = w.wq.shape().at(0);
  hyper.validate(d);
  const std::size_t heads = hyper.heads, dh = d / heads;
  const T q = matmul(z, w.wq);
  const T k = matmul(z, w.wk);
  const T v = matmul(z, w.wv);
  std::vector<T> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    const T qh = heads == 1 ? q : slice_cols(q, b, e);
    const T kh = heads == 1 ? k : slice_cols(k, b, e);
    const T vh = heads == 1 ? v : slice_cols(v, b, e);
    switch (kind) {
      case AttentionKind::kSoftmax:
        outs.push_back(softmax_attention(qh, kh, vh));
        break;
      case AttentionKind::kVla:
        outs.push_back(linear_attention(relu(qh), relu(kh), vh));
        break;
      case AttentionKind::kFla:
        outs.push_back(linear_attention(focused_feature_map(qh, hyper.p),
                                        focused_feature_map(kh, hyper.p), vh));
        break;
    }
  }
  T merged = heads == 1 ? outs[0] : concat_cols(std::span<const T>(outs));
  outs.clear();
  if (kind == AttentionKind::kFla) {
    merged = add(merged, depthwise_conv1d(v, w.dwc_kernel));
  }
  return matmul(merged, w.wo);
}

template <class T>
T multi_head_fla(const T& x, const FlaWeights<T>& w, const FlaHyper& hyper) {
  return multi_head_attention(x, w, hyper, AttentionKind::kFla);
}

inline Tensor multi_head_fla(const Tensor& x, const FlaParams& params) {
  return multi_head_fla(x, params.weights, params.hyper);
}

// Pre-norm gated attention block:
//   Z = LayerNorm(X); A = MHA(Z); G = act(Z Wg); Y = X + G * A.
// With gated == false the gate branch is skipped: Y = X + A.
template <class T>
T gated_attention_block(const T& x, const FlaWeights<T>& w,
                        const FlaHyper& hyper, AttentionMode mode) {
  const T z = layer_norm(x, w.norm_gain, w.norm_bias);
  T attn = multi_head_attention(z, w, hyper, mode.kind);
  if (mode.gated) {
    attn = hadamard(gate_activation(matmul(z, w.wg), hyper.activation), attn);
  }
  return add(x, attn);
}

inline Tensor gated_fla(const Tensor& x, const FlaParams& params,
                        bool gated = true) {
  return gated_attention_block(x, params.weights, params.hyper,
                               AttentionMode{AttentionKind::kFla, gated});
}

inline Var gated_fla(const Var& x, const FlaWeights<Var>& w,
                     const FlaHyper& hyper, bool gated = true) {
  return gated_attention_block(x, w, hyper,
                               AttentionMode{AttentionKind::kFla, gated});
}

}  // namespace flasep

#endif  // FLASEP_ATTENTION_HPP_
