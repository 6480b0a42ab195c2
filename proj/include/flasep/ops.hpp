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

#ifndef FLASEP_OPS_HPP_
#define FLASEP_OPS_HPP_

// Elementary tensor operations on plain (untracked) values. Every function is
// pure. The autodiff layer in autodiff.hpp wraps the same kernels.

#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <string>

#include "flasep/error.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

namespace detail {

inline Tensor finite_or_throw(Tensor t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  return t;
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_string(t.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]. The inner loop runs over contiguous rows
// of B and C so it vectorizes without reassociating sums.
inline void gemm_accumulate(const double* a, const double* b, double* c,
                            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double s = ai[l];
      if (s == 0.0) continue;
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bl[j];
    }
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor c(Shape{a.rows(), b.cols()});
  detail::gemm_accumulate(a.data(), b.data(), c.data(), a.rows(), a.cols(),
                          b.cols());
  return detail::finite_or_throw(std::move(c), "matmul");
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  Tensor t(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

// A^T * B without materializing A^T.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row counts disagree, " +
                         shape_string(a.shape()) + "^T * " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.cols(), n = b.cols();
  Tensor c(Shape{m, n});
  for (std::size_t l = 0; l < a.rows(); ++l) {
    const double* al = a.data() + l * m;
    const double* bl = b.data() + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = al[i];
      if (s == 0.0) continue;
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bl[j];
    }
  }
  return detail::finite_or_throw(std::move(c), "matmul_tn");
}

// A * B^T.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column counts disagree, " +
                         shape_string(a.shape()) + " * " +
                         shape_string(b.shape()) + "^T");
  }
  return matmul(a, transpose(b));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return detail::finite_or_throw(std::move(c), "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return detail::finite_or_throw(std::move(c), "sub");
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return detail::finite_or_throw(std::move(c), "hadamard");
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (double& v : c.values()) v *= s;
  return detail::finite_or_throw(std::move(c), "scale");
}

// a += s * b
inline void axpy_inplace(Tensor& a, const Tensor& b, double s = 1.0) {
  detail::require_same_shape(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::scalar(s);
}

inline Tensor relu(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.values()) v = v > 0.0 ? v : 0.0;
  return c;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.values()) v = detail::stable_sigmoid(v);
  return c;
}

inline Tensor silu(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.values()) v = v * detail::stable_sigmoid(v);
  return c;
}

// Normalizes over the last axis, then applies gain * x + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) +
                         " / bias " + shape_string(bias.shape()) +
                         " do not match last axis of " +
                         shape_string(x.shape()));
  }
  Tensor y(x.shape());
  const std::size_t rows = d ? x.size() / d : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double* yr = y.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = gain[j] * (xr[j] - mean) * rstd + bias[j];
    }
  }
  return detail::finite_or_throw(std::move(y), "layer_norm");
}

// Row-wise softmax with per-row max subtraction, in place.
inline Tensor softmax_rows(Tensor s) {
  detail::require_matrix(s, "softmax_rows");
  const std::size_t m = s.cols();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto r = s.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      z += v;
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < m; ++j) r[j] *= inv;
  }
  return detail::finite_or_throw(std::move(s), "softmax_rows");
}

inline void require_odd_kernel(std::size_t k, const char* op) {
  if (k == 0 || k % 2 == 0) {
    throw ConfigError(std::string(op) + ": kernel size must be odd, got " +
                      std::to_string(k));
  }
}

// Depthwise 1-D convolution along time with zero "same" padding.
// X is [N x C], kernel is [C x k]; channel c only sees kernel row c:
//   Y[t][c] = sum_j kernel[c][j] * X[t + j - (k-1)/2][c].
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
  detail::require_matrix(x, "depthwise_conv1d");
  detail::require_matrix(kernel, "depthwise_conv1d");
  const std::size_t n = x.rows(), c = x.cols(), k = kernel.cols();
  require_odd_kernel(k, "depthwise_conv1d");
  if (kernel.rows() != c) {
    throw DimensionError("depthwise_conv1d: kernel " +
                         shape_string(kernel.shape()) +
                         " does not match channels of " +
                         shape_string(x.shape()));
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  Tensor y(Shape{n, c});
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - half;
    const std::size_t t0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
    const std::size_t t1 =
        off > 0 ? (n > static_cast<std::size_t>(off) ? n - off : 0) : n;
    for (std::size_t t = t0; t < t1; ++t) {
      const double* xs = x.data() + (t + off) * c;
      double* yt = y.data() + t * c;
      for (std::size_t ch = 0; ch < c; ++ch) yt[ch] += kernel(ch, j) * xs[ch];
    }
  }
  return detail::finite_or_throw(std::move(y), "depthwise_conv1d");
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_cols");
  if (begin > end || end > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of range for " +
                         shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor y(Shape{x.rows(), w});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::copy_n(x.data() + i * x.cols() + begin, w, y.data() + i * w);
  }
  return y;
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row counts disagree, " +
                           shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    total += p.cols();
  }
  Tensor y(Shape{n, total});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(p.data() + i * p.cols(), p.cols(), y.data() + i * total + off);
    }
    off += p.cols();
  }
  return y;
}

inline std::size_t frame_count(std::size_t length, std::size_t kernel,
                               std::size_t stride) {
  if (length < kernel) {
    throw InputTooShortError("signal of " + std::to_string(length) +
                             " samples is shorter than the " +
                             std::to_string(kernel) + "-sample frame");
  }
  return (length - kernel) / stride + 1;
}

// Slices a waveform [L] into strided frames [N' x K].
inline Tensor frame(const Tensor& wave, std::size_t kernel,
                    std::size_t stride) {
  wave.require_rank(1);
  const std::size_t n = frame_count(wave.size(), kernel, stride);
  Tensor f(Shape{n, kernel});
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(wave.data() + t * stride, kernel, f.data() + t * kernel);
  }
  return f;
}

// Number of frames covering each output sample; zero past the last frame.
inline std::vector<double> overlap_counts(std::size_t frames,
                                          std::size_t kernel,
                                          std::size_t stride,
                                          std::size_t length) {
  std::vector<double> count(length, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < kernel && t * stride + j < length; ++j) {
      count[t * stride + j] += 1.0;
    }
  }
  return count;
}

// Rectangular-window overlap-add of [N' x K] frames into a length-L signal,
// normalized by the per-sample overlap count. Samples no frame reaches are 0.
inline Tensor overlap_add(const Tensor& frames, std::size_t stride,
                          std::size_t length) {
  detail::require_matrix(frames, "overlap_add");
  const std::size_t n = frames.rows(), k = frames.cols();
  const auto count = overlap_counts(n, k, stride, length);
  Tensor y(Shape{length});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < k && t * stride + j < length; ++j) {
      y[t * stride + j] += frames(t, j);
    }
  }
  for (std::size_t i = 0; i < length; ++i) {
    if (count[i] > 0.0) y[i] /= count[i];
  }
  return y;
}

}  // namespace flasep

#endif  // FLASEP_OPS_HPP_
