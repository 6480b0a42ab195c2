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

#ifndef FLASEP_CHECKS_HPP_
#define FLASEP_CHECKS_HPP_

// Canned gradient checks for the attention ops and the separator, shared by
// the `gradcheck` CLI command and the test suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flasep/attention.hpp"
#include "flasep/gradcheck.hpp"
#include "flasep/sepnet.hpp"

namespace flasep {

struct GradCheckCase {
  std::string name;
  double tolerance = 1e-4;
  GradCheckReport report;

  bool passed() const { return report.max_relative_error < tolerance; }
};

inline TensorMap to_tensor_map(SepNetWeights<Tensor> w) {
  TensorMap m;
  w.visit([&](const std::string& name, Tensor& t) { m.emplace(name, t); });
  return m;
}

inline SepNetWeights<Var> weights_from(const VarMap& vars,
                                       std::size_t blocks) {
  SepNetWeights<Var> w;
  w.blocks.resize(blocks);
  w.visit([&](const std::string& name, Var& v) { v = vars.at(name); });
  return w;
}

inline FlaWeights<Var> fla_weights_from(const VarMap& vars) {
  FlaWeights<Var> w;
  w.visit([&](const char* name, Var& v) { v = vars.at(name); });
  return w;
}

inline TensorMap to_tensor_map(FlaWeights<Tensor> w) {
  TensorMap m;
  w.visit([&](const char* name, Tensor& t) { m.emplace(name, t); });
  return m;
}

// Reduces a matrix-valued op to a scalar with fixed random weights so every
// output coordinate contributes a distinct gradient.
inline Var weighted_sum(Tape& tape, const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Var w = tape.constant(Tensor::randn(y.shape(), rng));
  return sum(hadamard(y, w));
}

inline std::vector<GradCheckCase> attention_gradient_checks(
    std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  const std::size_t n = 6, d = 4, k = 3;
  std::vector<GradCheckCase> cases;
  auto run = [&](std::string name, const MultiScalarFn& f, TensorMap point) {
    GradCheckCase c;
    c.name = std::move(name);
    c.report = grad_check(f, point);
    cases.push_back(std::move(c));
  };

  const TensorMap qkv = {{"q", Tensor::randn({n, d}, rng)},
                         {"k", Tensor::randn({n, d}, rng)},
                         {"v", Tensor::randn({n, d}, rng)}};
  // Features strictly positive so the attention denominators are not near
  // the degenerate-row threshold.
  const TensorMap feats = {{"q", Tensor::uniform({n, d}, rng, 0.1, 1.0)},
                           {"k", Tensor::uniform({n, d}, rng, 0.1, 1.0)},
                           {"v", Tensor::randn({n, d}, rng)}};

  for (double p : {1.0, 2.0, 3.0, 4.0}) {
    run("focused_feature_map p=" + std::to_string(static_cast<int>(p)),
        [p](Tape& t, const VarMap& v) {
          return weighted_sum(t, focused_feature_map(v.at("q"), p), 1);
        },
        {{"q", qkv.at("q")}});
  }
  run("linear_attention",
      [](Tape& t, const VarMap& v) {
        return weighted_sum(
            t, linear_attention(v.at("q"), v.at("k"), v.at("v")), 2);
      },
      feats);
  run("softmax_attention",
      [](Tape& t, const VarMap& v) {
        return weighted_sum(
            t, softmax_attention(v.at("q"), v.at("k"), v.at("v")), 3);
      },
      qkv);

  // A row of phi_p(Q) with a single positive entry only varies in scale,
  // and the attention output is scale-invariant up to eps, so its gradient
  // is ~1e-12 and below finite-difference resolution. Force two positive
  // entries per row; the rest keep random signs.
  TensorMap fla_point = qkv;
  for (const char* name : {"q", "k"}) {
    Tensor& t = fla_point.at(name);
    for (std::size_t i = 0; i < n; ++i) {
      t(i, 0) = std::abs(t(i, 0));
      t(i, 1) = std::abs(t(i, 1));
    }
  }
  fla_point.emplace("dwc", Tensor::randn({d, k}, rng));
  run("focused_linear_attention",
      [](Tape& t, const VarMap& v) {
        return weighted_sum(t,
                            focused_linear_attention(v.at("q"), v.at("k"),
                                                     v.at("v"), 3.0,
                                                     v.at("dwc")),
                            4);
      },
      fla_point);

  FlaHyper hyper;
  hyper.p = 3.0;
  hyper.kernel_size = k;
  hyper.heads = 2;
  FlaParams params = FlaParams::init(d, hyper, rng);
  // Move the norm and kernel off their initial values so their gradients
  // are exercised away from the identity.
  params.weights.norm_gain = Tensor::uniform({d}, rng, 0.5, 1.5);
  params.weights.norm_bias = Tensor::randn({d}, rng, 0.1);
  params.weights.dwc_kernel = Tensor::randn({d, k}, rng, 0.5);
  TensorMap block_point = to_tensor_map(params.weights);
  block_point.emplace("x", Tensor::randn({n, d}, rng));

  run("multi_head_fla",
      [hyper](Tape& t, const VarMap& v) {
        return weighted_sum(
            t, multi_head_fla(v.at("x"), fla_weights_from(v), hyper), 5);
      },
      block_point);
  for (bool gated : {true, false}) {
    run(gated ? "gated_fla" : "gated_fla (gate removed)",
        [hyper, gated](Tape& t, const VarMap& v) {
          return weighted_sum(
              t, gated_fla(v.at("x"), fla_weights_from(v), hyper, gated), 6);
        },
        block_point);
  }
  for (AttentionKind kind : {AttentionKind::kSoftmax, AttentionKind::kVla}) {
    run("gated block, " + to_string(kind) + " core",
        [hyper, kind](Tape& t, const VarMap& v) {
          return weighted_sum(
              t,
              gated_attention_block(v.at("x"), fla_weights_from(v), hyper,
                                    AttentionMode{kind, true}),
              7);
        },
        block_point);
  }
  return cases;
}

// PIT loss of the separator on one synthetic mixture, checked over every
// network parameter.
inline GradCheckCase sepnet_gradient_check(
    const SepNetConfig& cfg = SepNetConfig::tiny(), std::size_t length = 256,
    std::uint64_t seed = 3) {
  const SepNet net = SepNet::init(cfg, seed);
  const MixtureSample sample = synth_mixture(seed, length, cfg.sample_rate);
  const MultiScalarFn f = [&](Tape& tape, const VarMap& vars) {
    const auto w = weights_from(vars, cfg.blocks);
    const auto ests = separate(tape.constant(sample.mixture), w, cfg);
    return pit_loss(ests, sample.sources).loss;
  };
  GradCheckCase c;
  c.name = "separator PIT SI-SNR loss";
  c.tolerance = 1e-3;
  c.report = grad_check(f, to_tensor_map(net.weights));
  return c;
}

}  // namespace flasep

#endif  // FLASEP_CHECKS_HPP_
