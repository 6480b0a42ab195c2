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

#ifndef FLASEP_SEPNET_HPP_
#define FLASEP_SEPNET_HPP_

// A single-path, two-speaker, time-domain masking separator whose global
// modeling blocks are gated focused-linear-attention blocks:
//
//   mixture -> strided framing -> linear basis -> ReLU      (latent, N' x d)
//           -> M gated FLA blocks
//           -> split projection (d -> 2d) -> sigmoid masks
//           -> mask * latent -> per-speaker linear basis -> overlap-add
//
// Training uses utterance-level permutation-invariant SI-SNR.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "flasep/attention.hpp"
#include "flasep/autodiff.hpp"
#include "flasep/error.hpp"
#include "flasep/ops.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

inline constexpr std::size_t kSpeakers = 2;
inline constexpr double kSiSnrCapDb = 60.0;

struct SepNetConfig {
  std::size_t enc_kernel = 16;  // samples per frame
  std::size_t enc_stride = 8;   // samples
  std::size_t channels = 32;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  double p = 3.0;
  std::size_t dwc_kernel = 7;
  std::size_t speakers = kSpeakers;
  std::uint32_t sample_rate = 8000;
  bool gated = true;
  GateActivation activation = GateActivation::kSilu;

  FlaHyper hyper() const { return FlaHyper{p, dwc_kernel, heads, activation}; }

  void validate() const {
    if (enc_kernel == 0 || enc_stride == 0 || enc_stride > enc_kernel) {
      throw ConfigError("encoder stride must be in [1, kernel]");
    }
    if (blocks < 1) throw ConfigError("at least one attention block required");
    if (speakers != kSpeakers) throw ConfigError("only two speakers supported");
    if (channels == 0) throw ConfigError("channel width must be positive");
    hyper().validate(channels);
  }

  // L=256, K=16, S=8, d=8, M=1: small enough for exhaustive gradient checks.
  static SepNetConfig tiny() {
    SepNetConfig c;
    c.channels = 8;
    c.blocks = 1;
    c.heads = 2;
    return c;
  }
};

template <class T>
struct SepNetWeights {
  T encoder;                     // [K x d]
  std::vector<FlaWeights<T>> blocks;
  T split;                       // [d x 2d]
  std::array<T, kSpeakers> decoder;  // each [d x K]

  template <class F>
  void visit(F&& f) {
    f("encoder", encoder);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string prefix = "block" + std::to_string(b) + ".";
      blocks[b].visit([&](const char* name, T& t) { f(prefix + name, t); });
    }
    f("split", split);
    for (std::size_t s = 0; s < kSpeakers; ++s) {
      f("decoder" + std::to_string(s), decoder[s]);
    }
  }
};

struct SepNet {
  SepNetConfig config;
  SepNetWeights<Tensor> weights;

  static SepNet init(const SepNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    SepNet net;
    net.config = cfg;
    const std::size_t k = cfg.enc_kernel, d = cfg.channels;
    auto& w = net.weights;
    w.encoder = Tensor::randn({k, d}, rng, 1.0 / std::sqrt(double(k)));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      w.blocks.push_back(FlaParams::init(d, cfg.hyper(), rng).weights);
    }
    w.split = Tensor::randn({d, 2 * d}, rng, 1.0 / std::sqrt(double(d)));
    for (auto& dec : w.decoder) {
      dec = Tensor::randn({d, k}, rng, 1.0 / std::sqrt(double(d)));
    }
    return net;
  }

  template <class F>
  void visit(F&& f) {
    weights.visit(std::forward<F>(f));
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
  }

  void validate() {
    config.validate();
    const std::size_t k = config.enc_kernel, d = config.channels;
    if (weights.blocks.size() != config.blocks) {
      throw DimensionError("block count does not match config");
    }
    auto expect = [](const Tensor& t, const Shape& s, const char* what) {
      if (t.shape() != s) {
        throw DimensionError(std::string(what) + " has shape " +
                             shape_string(t.shape()) + ", expected " +
                             shape_string(s));
      }
    };
    expect(weights.encoder, {k, d}, "encoder");
    expect(weights.split, {d, 2 * d}, "split");
    for (const auto& dec : weights.decoder) expect(dec, {d, k}, "decoder");
    for (const auto& blk : weights.blocks) {
      FlaParams{blk, config.hyper()}.validate();
    }
  }
};

inline SepNetWeights<Var> bind_params(Tape& tape, const SepNetWeights<Tensor>& w) {
  SepNetWeights<Var> out;
  out.encoder = tape.parameter("encoder", w.encoder);
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    out.blocks.push_back(
        bind_params(tape, w.blocks[b], "block" + std::to_string(b) + "."));
  }
  out.split = tape.parameter("split", w.split);
  for (std::size_t s = 0; s < kSpeakers; ++s) {
    out.decoder[s] = tape.parameter("decoder" + std::to_string(s), w.decoder[s]);
  }
  return out;
}

// Frame t = ReLU(wave[tS : tS+K] * basis); N' = floor((L-K)/S) + 1.
template <class T>
T encode(const T& wave, const T& basis, const SepNetConfig& cfg) {
  return relu(matmul(frame(wave, cfg.enc_kernel, cfg.enc_stride), basis));
}

inline Tensor encode(const Tensor& wave, const SepNet& net) {
  return encode(wave, net.weights.encoder, net.config);
}

template <class T>
std::array<T, kSpeakers> separate(const T& mixture,
                                  const SepNetWeights<T>& w,
                                  const SepNetConfig& cfg) {
  const std::size_t length = mixture.shape().at(0);
  const std::size_t d = cfg.channels;
  const T latent = encode(mixture, w.encoder, cfg);
  T h = latent;
  const FlaHyper hyper = cfg.hyper();
  const AttentionMode mode{AttentionKind::kFla, cfg.gated};
  for (const auto& blk : w.blocks) {
    h = gated_attention_block(h, blk, hyper, mode);
  }
  const T logits = matmul(h, w.split);
  std::array<T, kSpeakers> out;
  for (std::size_t s = 0; s < kSpeakers; ++s) {
    const T mask = sigmoid(slice_cols(logits, s * d, (s + 1) * d));
    const T frames = matmul(hadamard(mask, latent), w.decoder[s]);
    out[s] = overlap_add(frames, cfg.enc_stride, length);
  }
  return out;
}

inline std::array<Tensor, kSpeakers> separate(const Tensor& mixture,
                                              const SepNet& net) {
  mixture.require_rank(1);
  return separate(mixture, net.weights, net.config);
}

// ---------------------------------------------------------------------------
// Scale-invariant SNR.
//
// Both signals are made zero-mean. s_t = (<est,ref>/|ref|^2) ref,
// e = est - s_t, value = min(10 log10(|s_t|^2 / (|e|^2 + 1e-12)), cap).

namespace detail {

struct SiSnrParts {
  std::vector<double> s;  // centered estimate
  std::vector<double> r;  // centered reference
  double dot = 0.0, rr = 0.0, target = 0.0, noise = 0.0, value = 0.0;
};

inline SiSnrParts si_snr_parts(const Tensor& est, const Tensor& ref,
                               double cap) {
  if (est.shape() != ref.shape()) {
    throw DimensionError("si_snr: " + shape_string(est.shape()) + " vs " +
                         shape_string(ref.shape()));
  }
  const std::size_t n = est.size();
  if (n == 0) throw DimensionError("si_snr: empty signal");
  SiSnrParts p;
  p.s.assign(est.values().begin(), est.values().end());
  p.r.assign(ref.values().begin(), ref.values().end());
  auto center = [n](std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(n);
    for (double& x : v) x -= m;
  };
  center(p.s);
  center(p.r);
  for (std::size_t i = 0; i < n; ++i) {
    p.dot += p.s[i] * p.r[i];
    p.rr += p.r[i] * p.r[i];
  }
  if (p.rr == 0.0) {
    throw UndefinedReferenceError("si_snr: reference is identically zero");
  }
  const double alpha = p.dot / p.rr;
  for (std::size_t i = 0; i < n; ++i) {
    const double st = alpha * p.r[i];
    const double e = p.s[i] - st;
    p.target += st * st;
    p.noise += e * e;
  }
  p.value = std::min(10.0 * std::log10(p.target / (p.noise + 1e-12)), cap);
  return p;
}

}  // namespace detail

inline double si_snr(const Tensor& est, const Tensor& ref,
                     double cap = kSiSnrCapDb) {
  return detail::si_snr_parts(est, ref, cap).value;
}

// Differentiable in `est`; the reference is a constant. Gradient is zero
// where the cap is active.
inline Var si_snr(const Var& est, const Tensor& ref, double cap = kSiSnrCapDb) {
  const double value = si_snr(est.value(), ref, cap);
  return est.tape()->record(
      Tensor::scalar(value), {est},
      [est, ref, cap](const Tensor& g, const Tensor&, const std::vector<bool>&) {
        const auto p = detail::si_snr_parts(est.value(), ref, cap);
        const std::size_t n = p.s.size();
        Tensor grad(est.shape());
        if (p.value >= cap) return std::vector<Tensor>{std::move(grad)};
        // d/ds [10 log10 P - 10 log10 (E + delta)] with dP/ds = 2 s_t and
        // dE/ds = 2 e, followed by the centering projection.
        const double k = 10.0 / std::numbers::ln10;
        const double alpha = p.dot / p.rr;
        const double cp = 2.0 * k / p.target;
        const double ce = 2.0 * k / (p.noise + 1e-12);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double st = alpha * p.r[i];
          const double e = p.s[i] - st;
          grad[i] = g.item() * (cp * st - ce * e);
          mean += grad[i];
        }
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) grad[i] -= mean;
        return std::vector<Tensor>{std::move(grad)};
      });
}

template <class T>
struct PitResult {
  T loss;                              // scalar: -mean SI-SNR, best perm
  std::array<std::size_t, kSpeakers> perm;  // est i is matched to ref perm[i]
};

// Utterance-level PIT over the two assignments.
template <class T>
PitResult<T> pit_loss(const std::array<T, kSpeakers>& ests,
                      const std::array<Tensor, kSpeakers>& refs,
                      double cap = kSiSnrCapDb) {
  auto value_of = [](const T& t) -> const Tensor& {
    if constexpr (std::is_same_v<T, Var>) {
      return t.value();
    } else {
      return t;
    }
  };
  const double keep = si_snr(value_of(ests[0]), refs[0], cap) +
                      si_snr(value_of(ests[1]), refs[1], cap);
  const double swap = si_snr(value_of(ests[0]), refs[1], cap) +
                      si_snr(value_of(ests[1]), refs[0], cap);
  PitResult<T> out;
  out.perm = swap > keep ? std::array<std::size_t, 2>{1, 0}
                         : std::array<std::size_t, 2>{0, 1};
  if constexpr (std::is_same_v<T, Var>) {
    out.loss = scale(add(si_snr(ests[0], refs[out.perm[0]], cap),
                         si_snr(ests[1], refs[out.perm[1]], cap)),
                     -0.5);
  } else {
    out.loss = Tensor::scalar(-0.5 * std::max(keep, swap));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic two-source mixtures.

struct MixtureSample {
  Tensor mixture;
  std::array<Tensor, kSpeakers> sources;
  std::uint64_t seed = 0;
};

namespace detail {

// Rounds to a multiple of 2^-30 so that sums of two samples and the
// differences back are exact in double precision.
inline double quantize(double v) {
  return std::ldexp(std::round(std::ldexp(v, 30)), -30);
}

inline void peak_normalize(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m == 0.0) return;
  for (double& v : x) v = quantize(v * peak / m);
}

}  // namespace detail

inline constexpr std::size_t kNoiseSmoothing = 3;

// Source 0: three sinusoids, frequencies in [80, 400] Hz, random phases.
// Source 1: white noise smoothed by a kNoiseSmoothing-tap moving average and
// amplitude-modulated by 0.5 (1 + sin(2 pi f t + phi)), f in [2, 8] Hz.
// Both are peak-normalized to 0.7; the mixture is their exact sum.
inline MixtureSample synth_mixture(std::uint64_t seed, std::size_t length,
                                   std::uint32_t sample_rate = 8000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(80.0, 400.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> mod_rate(2.0, 8.0);
  std::normal_distribution<double> white(0.0, 1.0);
  const double sr = static_cast<double>(sample_rate);
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> tones(length, 0.0);
  for (int c = 0; c < 3; ++c) {
    const double f = freq(rng), ph = phase(rng);
    for (std::size_t t = 0; t < length; ++t) {
      tones[t] += std::sin(two_pi * f * static_cast<double>(t) / sr + ph);
    }
  }

  std::vector<double> raw(length + kNoiseSmoothing - 1);
  for (double& v : raw) v = white(rng);
  const double fm = mod_rate(rng), phm = phase(rng);
  std::vector<double> noise(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kNoiseSmoothing; ++j) acc += raw[t + j];
    const double env =
        0.5 * (1.0 + std::sin(two_pi * fm * static_cast<double>(t) / sr + phm));
    noise[t] = env * acc / static_cast<double>(kNoiseSmoothing);
  }

  detail::peak_normalize(tones, 0.7);
  detail::peak_normalize(noise, 0.7);

  MixtureSample sample;
  sample.seed = seed;
  sample.sources[0] = Tensor(Shape{length}, tones);
  sample.sources[1] = Tensor(Shape{length}, noise);
  sample.mixture = add(sample.sources[0], sample.sources[1]);
  return sample;
}

// Mean over speakers of si_snr(est, src) - si_snr(mixture, src), with
// estimates matched to sources by the PIT-optimal permutation.
inline double si_snr_improvement(const std::array<Tensor, kSpeakers>& ests,
                                 const MixtureSample& sample) {
  const auto pit = pit_loss(ests, sample.sources);
  double total = 0.0;
  for (std::size_t i = 0; i < kSpeakers; ++i) {
    const Tensor& src = sample.sources[pit.perm[i]];
    total += si_snr(ests[i], src) - si_snr(sample.mixture, src);
  }
  return total / static_cast<double>(kSpeakers);
}

inline double si_snr_improvement(const SepNet& net,
                                 const MixtureSample& sample) {
  return si_snr_improvement(separate(sample.mixture, net), sample);
}

// ---------------------------------------------------------------------------
// Training.

enum class Optimizer { kSgd, kAdam };

struct TrainOptions {
  double weight_decay = 0.01;  // decoupled, scaled by lr
  double clip_norm = 5.0;      // global L2 norm
  Optimizer optimizer = Optimizer::kSgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t init_seed = 0;
  // Called after every step with (step, loss). Optional.
  std::function<void(long, double)> on_step;
};

struct TrainResult {
  SepNet net;
  std::vector<double> loss_history;
};

// Mean PIT loss over the dataset, recorded on `tape`.
inline Var dataset_loss(Tape& tape, const SepNetWeights<Var>& w,
                        const SepNetConfig& cfg,
                        std::span<const MixtureSample> dataset) {
  Var total;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Var mix = tape.constant(dataset[i].mixture);
    const auto ests = separate(mix, w, cfg);
    const Var loss = pit_loss(ests, dataset[i].sources).loss;
    total = i == 0 ? loss : add(total, loss);
  }
  return scale(total, 1.0 / static_cast<double>(dataset.size()));
}

// Full-batch gradient descent on the mean PIT loss with global-norm
// clipping and decoupled weight decay:
//   theta <- theta - lr * (update(clip(g)) + weight_decay * theta)
// where update is the clipped gradient (kSgd) or the Adam direction.
inline TrainResult train_toy(const SepNet& initial,
                             std::span<const MixtureSample> dataset, long steps,
                             double lr, const TrainOptions& options = {}) {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (dataset.empty()) throw ConfigError("dataset is empty");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  TrainResult result{initial, {}};
  SepNet& net = result.net;
  net.validate();
  result.loss_history.reserve(static_cast<std::size_t>(steps));

  std::map<std::string, Tensor> m1, m2;
  for (long step = 0; step < steps; ++step) {
    GradMap grads;
    double loss_value = 0.0;
    try {
      Tape tape;
      const auto w = bind_params(tape, net.weights);
      const Var loss = dataset_loss(tape, w, net.config, dataset);
      loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss");
      }
      grads = backward(tape, loss);
    } catch (const NumericError& e) {
      throw TrainingDivergedError("training diverged at step " +
                                      std::to_string(step) + ": " + e.what(),
                                  step);
    }
    double norm2 = 0.0;
    for (const auto& [name, g] : grads) {
      for (double v : g.values()) norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) {
      throw TrainingDivergedError(
          "non-finite gradient at step " + std::to_string(step), step);
    }
    const double clip =
        norm > options.clip_norm ? options.clip_norm / norm : 1.0;
    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(options.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(options.adam_beta2, t);
    net.visit([&](const std::string& name, Tensor& param) {
      const Tensor& g = grads.at(name);
      if (options.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          param[i] -= lr * (clip * g[i] + options.weight_decay * param[i]);
        }
        return;
      }
      auto [it1, fresh] = m1.try_emplace(name, param.shape());
      Tensor& mom = it1->second;
      Tensor& vel = m2.try_emplace(name, param.shape()).first->second;
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double gi = clip * g[i];
        mom[i] = options.adam_beta1 * mom[i] + (1.0 - options.adam_beta1) * gi;
        vel[i] =
            options.adam_beta2 * vel[i] + (1.0 - options.adam_beta2) * gi * gi;
        const double dir =
            (mom[i] / bc1) / (std::sqrt(vel[i] / bc2) + options.adam_eps);
        param[i] -= lr * (dir + options.weight_decay * param[i]);
      }
    });
    result.loss_history.push_back(loss_value);
    if (options.on_step) options.on_step(step, loss_value);
  }
  return result;
}

inline TrainResult train_toy(const SepNetConfig& cfg,
                             std::span<const MixtureSample> dataset, long steps,
                             double lr, const TrainOptions& options = {}) {
  return train_toy(SepNet::init(cfg, options.init_seed), dataset, steps, lr,
                   options);
}

}  // namespace flasep

#endif  // FLASEP_SEPNET_HPP_
