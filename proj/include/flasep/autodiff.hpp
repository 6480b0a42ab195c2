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

#ifndef FLASEP_AUTODIFF_HPP_
#define FLASEP_AUTODIFF_HPP_

// Minimal tape-based reverse-mode differentiation.
//
// Every differentiable op appends a node holding its forward value and a
// closure that maps the output gradient to input gradients. Nodes are stored
// in creation order, which is a topological order, so backward() walks the
// tape once in reverse. Parameters are named leaves; backward() returns
// their gradients keyed by name.
//
// A Tape is single-owner. Do not record onto it from more than one thread.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flasep/error.hpp"
#include "flasep/ops.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using GradMap = std::map<std::string, Tensor>;

class Tape {
 public:
  // Receives the gradient of the loss w.r.t. the node output and the output
  // value; returns one gradient per input, in input order. An empty Tensor
  // means "no contribution". needs[i] is false when input i does not lead to
  // a parameter, so its gradient may be skipped.
  using BackwardFn = std::function<std::vector<Tensor>(
      const Tensor& grad_out, const Tensor& out,
      const std::vector<bool>& needs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(std::string name, Tensor value) {
    if (name.empty()) throw ContractError("parameter name must be nonempty");
    for (const Node& n : nodes_) {
      if (n.param_name == name) {
        throw ContractError("duplicate parameter name '" + name + "'");
      }
    }
    Node node;
    node.value = std::move(value);
    node.param_name = std::move(name);
    node.requires_grad = true;
    return push(std::move(node));
  }

  Var constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    return push(std::move(node));
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(),
                                                         inputs.size()),
                  std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    for (const Var& v : inputs) {
      if (v.tape_ != this) {
        throw ContractError("op input belongs to a different tape");
      }
      node.inputs.push_back(v.id_);
      node.requires_grad = node.requires_grad || nodes_[v.id_].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const {
    return nodes_.at(id).requires_grad;
  }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const {
    return nodes_.at(id).inputs;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() loss w.r.t. node v, or nullptr when the
  // node was not reached.
  const Tensor* grad(const Var& v) const {
    if (v.id_ >= grads_.size() || grads_[v.id_].empty()) return nullptr;
    return &grads_[v.id_];
  }

  // Number of nodes whose backward closure ran during the last backward().
  std::size_t visited_count() const noexcept { return visited_; }

  friend GradMap backward(Tape& tape, const Var& loss);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string param_name;
    bool requires_grad = false;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::size_t visited_ = 0;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

inline bool Var::requires_grad() const {
  return tape_ && tape_->requires_grad(id_);
}

// Reverse sweep from a scalar loss. Returns a gradient for every parameter
// leaf on the tape (zeros for parameters the loss does not depend on).
inline GradMap backward(Tape& tape, const Var& loss) {
  if (loss.tape() != &tape) {
    throw ContractError("backward: loss belongs to a different tape");
  }
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(loss.shape()));
  }
  auto& nodes = tape.nodes_;
  auto& grads = tape.grads_;
  grads.assign(nodes.size(), Tensor());
  tape.visited_ = 0;
  grads[loss.id()] = Tensor(loss.shape(), 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    auto& node = nodes[id];
    if (grads[id].empty() || !node.backward) continue;
    std::vector<bool> needs(node.inputs.size());
    for (std::size_t i = 0; i < needs.size(); ++i) {
      needs[i] = nodes[node.inputs[i]].requires_grad;
    }
    std::vector<Tensor> in_grads = node.backward(grads[id], node.value, needs);
    ++tape.visited_;
    for (std::size_t i = 0; i < node.inputs.size() && i < in_grads.size();
         ++i) {
      if (!needs[i] || in_grads[i].empty()) continue;
      const std::size_t src = node.inputs[i];
      if (in_grads[i].shape() != nodes[src].value.shape()) {
        throw ContractError("backward: gradient shape " +
                            shape_string(in_grads[i].shape()) +
                            " does not match input " +
                            shape_string(nodes[src].value.shape()));
      }
      if (grads[src].empty()) {
        grads[src] = std::move(in_grads[i]);
      } else {
        axpy_inplace(grads[src], in_grads[i]);
      }
    }
  }

  GradMap out;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (nodes[id].param_name.empty()) continue;
    out.emplace(nodes[id].param_name, grads[id].empty()
                                          ? Tensor(nodes[id].value.shape())
                                          : grads[id]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable overloads of the elementary ops.

inline Var matmul(const Var& a, const Var& b) {
  return a.tape()->record(
      matmul(a.value(), b.value()), {a, b},
      [a, b](const Tensor& g, const Tensor&, const std::vector<bool>& needs) {
        std::vector<Tensor> r(2);
        if (needs[0]) r[0] = matmul_nt(g, b.value());
        if (needs[1]) r[1] = matmul_tn(a.value(), g);
        return r;
      });
}

inline Var matmul_nt(const Var& a, const Var& b) {
  return a.tape()->record(
      matmul_nt(a.value(), b.value()), {a, b},
      [a, b](const Tensor& g, const Tensor&, const std::vector<bool>& needs) {
        std::vector<Tensor> r(2);
        if (needs[0]) r[0] = matmul(g, b.value());
        if (needs[1]) r[1] = matmul_tn(g, a.value());
        return r;
      });
}

inline Var transpose(const Var& a) {
  return a.tape()->record(
      transpose(a.value()), {a},
      [](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        return std::vector<Tensor>{transpose(g)};
      });
}

inline Var add(const Var& a, const Var& b) {
  return a.tape()->record(
      add(a.value(), b.value()), {a, b},
      [](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        return std::vector<Tensor>{g, g};
      });
}

inline Var sub(const Var& a, const Var& b) {
  return a.tape()->record(
      sub(a.value(), b.value()), {a, b},
      [](const Tensor& g, const Tensor&, const std::vector<bool>& needs) {
        std::vector<Tensor> r(2);
        if (needs[0]) r[0] = g;
        if (needs[1]) r[1] = scale(g, -1.0);
        return r;
      });
}

inline Var hadamard(const Var& a, const Var& b) {
  return a.tape()->record(
      hadamard(a.value(), b.value()), {a, b},
      [a, b](const Tensor& g, const Tensor&, const std::vector<bool>& needs) {
        std::vector<Tensor> r(2);
        if (needs[0]) r[0] = hadamard(g, b.value());
        if (needs[1]) r[1] = hadamard(g, a.value());
        return r;
      });
}

inline Var scale(const Var& a, double s) {
  return a.tape()->record(
      scale(a.value(), s), {a},
      [s](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        return std::vector<Tensor>{scale(g, s)};
      });
}

inline Var sum(const Var& a) {
  return a.tape()->record(
      sum(a.value()), {a},
      [a](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        return std::vector<Tensor>{Tensor(a.shape(), g.item())};
      });
}

inline Var relu(const Var& a) {
  return a.tape()->record(
      relu(a.value()), {a},
      [a](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        Tensor dx = g;
        const Tensor& x = a.value();
        // Subgradient at 0 is 0.
        for (std::size_t i = 0; i < dx.size(); ++i) {
          if (!(x[i] > 0.0)) dx[i] = 0.0;
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var sigmoid(const Var& a) {
  return a.tape()->record(
      sigmoid(a.value()), {a},
      [](const Tensor& g, const Tensor& y, const std::vector<bool>&) {
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) {
          dx[i] *= y[i] * (1.0 - y[i]);
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var silu(const Var& a) {
  return a.tape()->record(
      silu(a.value()), {a},
      [a](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        Tensor dx = g;
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double s = detail::stable_sigmoid(x[i]);
          dx[i] *= s + x[i] * s * (1.0 - s);
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var layer_norm(const Var& x, const Var& gain, const Var& bias,
                      double eps = 1e-5) {
  return x.tape()->record(
      layer_norm(x.value(), gain.value(), bias.value(), eps), {x, gain, bias},
      [x, gain, eps](const Tensor& g, const Tensor&,
                     const std::vector<bool>& needs) {
        const Tensor& xv = x.value();
        const Tensor& gv = gain.value();
        const std::size_t d = xv.shape().back();
        const std::size_t rows = d ? xv.size() / d : 0;
        Tensor dx(xv.shape()), dgain(gv.shape()), dbias(gv.shape());
        std::vector<double> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = xv.data() + r * d;
          const double* gr = g.data() + r * d;
          double mean = 0.0;
          for (std::size_t j = 0; j < d; ++j) mean += xr[j];
          mean /= static_cast<double>(d);
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            var += (xr[j] - mean) * (xr[j] - mean);
          }
          var /= static_cast<double>(d);
          const double rstd = 1.0 / std::sqrt(var + eps);
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - mean) * rstd;
            dxhat[j] = gr[j] * gv[j];
            dgain[j] += gr[j] * xhat[j];
            dbias[j] += gr[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          double* dr = dx.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            dr[j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
          }
        }
        std::vector<Tensor> out(3);
        if (needs[0]) out[0] = std::move(dx);
        if (needs[1]) out[1] = std::move(dgain);
        if (needs[2]) out[2] = std::move(dbias);
        return out;
      });
}

inline Var softmax_rows(const Var& s) {
  return s.tape()->record(
      softmax_rows(s.value()), {s},
      [](const Tensor& g, const Tensor& y, const std::vector<bool>&) {
        Tensor dx(y.shape());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          auto yr = y.row(i);
          auto gr = g.row(i);
          double dot = 0.0;
          for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
          auto dr = dx.row(i);
          for (std::size_t j = 0; j < yr.size(); ++j) {
            dr[j] = yr[j] * (gr[j] - dot);
          }
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var depthwise_conv1d(const Var& x, const Var& kernel) {
  return x.tape()->record(
      depthwise_conv1d(x.value(), kernel.value()), {x, kernel},
      [x, kernel](const Tensor& g, const Tensor&,
                  const std::vector<bool>& needs) {
        const Tensor& xv = x.value();
        const Tensor& kv = kernel.value();
        const std::size_t n = xv.rows(), c = xv.cols(), k = kv.cols();
        const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
        Tensor dx(xv.shape()), dk(kv.shape());
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - half;
          for (std::size_t t = 0; t < n; ++t) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + off;
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(n)) continue;
            const double* gt = g.data() + t * c;
            const double* xs = xv.data() + s * c;
            double* dxs = dx.data() + s * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              dxs[ch] += kv(ch, j) * gt[ch];
              dk(ch, j) += gt[ch] * xs[ch];
            }
          }
        }
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = std::move(dx);
        if (needs[1]) out[1] = std::move(dk);
        return out;
      });
}

inline Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  return x.tape()->record(
      slice_cols(x.value(), begin, end), {x},
      [x, begin, end](const Tensor& g, const Tensor&,
                      const std::vector<bool>&) {
        Tensor dx(x.shape());
        const std::size_t w = end - begin, c = dx.cols();
        for (std::size_t i = 0; i < dx.rows(); ++i) {
          std::copy_n(g.data() + i * w, w, dx.data() + i * c + begin);
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    values.push_back(p.value());
    widths.push_back(p.value().cols());
  }
  Tensor y = concat_cols(values);
  values.clear();
  return parts[0].tape()->record(
      std::move(y), parts,
      [widths](const Tensor& g, const Tensor&,
               const std::vector<bool>& needs) {
        std::vector<Tensor> out(widths.size());
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          if (needs[i]) out[i] = slice_cols(g, off, off + widths[i]);
          off += widths[i];
        }
        return out;
      });
}

inline Var frame(const Var& wave, std::size_t kernel, std::size_t stride) {
  return wave.tape()->record(
      frame(wave.value(), kernel, stride), {wave},
      [wave, kernel, stride](const Tensor& g, const Tensor&,
                             const std::vector<bool>&) {
        Tensor dw(wave.shape());
        for (std::size_t t = 0; t < g.rows(); ++t) {
          for (std::size_t j = 0; j < kernel; ++j) {
            dw[t * stride + j] += g(t, j);
          }
        }
        return std::vector<Tensor>{std::move(dw)};
      });
}

inline Var overlap_add(const Var& frames, std::size_t stride,
                       std::size_t length) {
  return frames.tape()->record(
      overlap_add(frames.value(), stride, length), {frames},
      [frames, stride, length](const Tensor& g, const Tensor&,
                               const std::vector<bool>&) {
        const std::size_t n = frames.value().rows(), k = frames.value().cols();
        const auto count = overlap_counts(n, k, stride, length);
        Tensor df(frames.shape());
        for (std::size_t t = 0; t < n; ++t) {
          for (std::size_t j = 0; j < k && t * stride + j < length; ++j) {
            const std::size_t i = t * stride + j;
            df(t, j) = g[i] / count[i];
          }
        }
        return std::vector<Tensor>{std::move(df)};
      });
}

}  // namespace flasep

#endif  // FLASEP_AUTODIFF_HPP_
