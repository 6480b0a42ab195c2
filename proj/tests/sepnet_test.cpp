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

#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "flasep/checks.hpp"
#include "flasep/sepnet.hpp"

namespace flasep {
namespace {

const SepNet& tiny_net() {
  static const SepNet net = SepNet::init(SepNetConfig::tiny(), 1);
  return net;
}

// ---------------------------------------------------------------------------
// Config.

TEST(SepNetConfig, DefaultIsValid) { EXPECT_NO_THROW(SepNetConfig{}.validate()); }

TEST(SepNetConfig, InvariantsRejected) {
  SepNetConfig c;
  c.enc_stride = 17;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SepNetConfig{};
  c.blocks = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SepNetConfig{};
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SepNetConfig{};
  c.speakers = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SepNetConfig{};
  c.dwc_kernel = 6;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SepNet, InitShapesAreConsistent) {
  SepNet net = SepNet::init(SepNetConfig{}, 0);
  EXPECT_NO_THROW(net.validate());
  EXPECT_EQ(net.weights.blocks.size(), 4u);
  EXPECT_EQ(net.weights.encoder.shape(), (Shape{16, 32}));
  EXPECT_EQ(net.weights.split.shape(), (Shape{32, 64}));
  EXPECT_EQ(net.weights.decoder[1].shape(), (Shape{32, 16}));
  net.weights.split = Tensor(Shape{32, 32});
  EXPECT_THROW(net.validate(), DimensionError);
}

// ---------------------------------------------------------------------------
// Encoder and framing.

TEST(Encode, FrameCountArithmetic) {
  const SepNet net = SepNet::init(SepNetConfig{}, 0);
  EXPECT_EQ(encode(Tensor(Shape{8000}), net).shape(), (Shape{999, 32}));
  EXPECT_EQ(encode(Tensor(Shape{16}), net).rows(), 1u);
  EXPECT_THROW(encode(Tensor(Shape{15}), net), InputTooShortError);
}

TEST(Encode, SingleFrameWhenLengthEqualsKernelForAnyStride) {
  for (std::size_t s : {1u, 5u, 16u}) {
    EXPECT_EQ(frame_count(16, 16, s), 1u);
  }
}

TEST(Encode, MatchesPerFrameDefinition) {
  std::mt19937_64 rng(2);
  const SepNet& net = tiny_net();
  const Tensor wave = Tensor::randn({40}, rng);
  const Tensor z = encode(wave, net);
  ASSERT_EQ(z.rows(), 4u);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    for (std::size_t c = 0; c < z.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 16; ++j) {
        acc += wave[t * 8 + j] * net.weights.encoder(j, c);
      }
      EXPECT_NEAR(z(t, c), std::max(acc, 0.0), 1e-12);
    }
  }
}

TEST(OverlapAdd, ReconstructsFramedSignal) {
  std::mt19937_64 rng(3);
  for (std::size_t len : {32u, 37u, 41u}) {
    const Tensor wave = Tensor::randn({len}, rng);
    const Tensor frames = frame(wave, 8, 4);
    const Tensor back = overlap_add(frames, 4, len);
    const std::size_t covered = (frames.rows() - 1) * 4 + 8;
    for (std::size_t i = 0; i < len; ++i) {
      EXPECT_NEAR(back[i], i < covered ? wave[i] : 0.0, 1e-14);
    }
  }
}

// ---------------------------------------------------------------------------
// Separation.

TEST(Separate, ZeroMixtureGivesZeroOutputs) {
  const auto out = separate(Tensor(Shape{256}), tiny_net());
  for (const Tensor& t : out) {
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Separate, OutputShapesMatchInput) {
  const SepNet net = SepNet::init(SepNetConfig{}, 0);
  for (std::size_t len : {4000u, 8000u, 8001u}) {
    const auto out = separate(synth_mixture(1, len).mixture, net);
    for (const Tensor& t : out) EXPECT_EQ(t.shape(), (Shape{len}));
  }
}

TEST(Separate, IsDeterministic) {
  const Tensor mix = synth_mixture(4, 512).mixture;
  const auto a = separate(mix, tiny_net());
  const auto b = separate(mix, tiny_net());
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[1], b[1]);
}

TEST(Separate, TapeAndTensorPathsAgree) {
  const Tensor mix = synth_mixture(5, 256).mixture;
  const SepNet& net = tiny_net();
  Tape tape;
  const auto vars = separate(tape.constant(mix), bind_params(tape, net.weights),
                             net.config);
  const auto plain = separate(mix, net);
  for (std::size_t s = 0; s < kSpeakers; ++s) {
    EXPECT_LT(max_abs_diff(vars[s].value(), plain[s]), 1e-13);
  }
}

TEST(Separate, ShortInputIsError) {
  EXPECT_THROW(separate(Tensor(Shape{10}), tiny_net()), InputTooShortError);
}

TEST(Separate, ParallelCallsAgree) {
  const Tensor mix = synth_mixture(6, 512).mixture;
  const auto serial = separate(mix, tiny_net());
  std::array<std::array<Tensor, kSpeakers>, 4> results;
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < results.size(); ++i) {
    threads.emplace_back([&, i] { results[i] = separate(mix, tiny_net()); });
  }
  for (auto& t : threads) t.join();
  for (const auto& r : results) EXPECT_EQ(r[0], serial[0]);
}

// ---------------------------------------------------------------------------
// SI-SNR.

TEST(SiSnr, IdenticalSignalsHitCap) {
  const Tensor x = Tensor::vector({0.3, -1.0, 2.0, 0.1});
  EXPECT_EQ(si_snr(x, x), kSiSnrCapDb);
}

TEST(SiSnr, EqualTargetAndErrorEnergyIsZeroDb) {
  // Zero-mean pair with |s_t| = |e| after projection.
  EXPECT_NEAR(si_snr(Tensor::vector({1, -1, 1, -1}), Tensor::vector({1, -1, 0, 0})),
              0.0, 1e-9);
}

TEST(SiSnr, ConstantOffsetIsRemoved) {
  const Tensor ref = Tensor::vector({1, -1, 0, 0});
  EXPECT_NEAR(si_snr(Tensor::vector({6, 4, 6, 4}), ref),
              si_snr(Tensor::vector({1, -1, 1, -1}), ref), 1e-12);
}

TEST(SiSnr, ZeroReferenceIsError) {
  EXPECT_THROW(si_snr(Tensor::vector({1, 2}), Tensor::vector({0, 0})),
               UndefinedReferenceError);
  EXPECT_THROW(si_snr(Tensor::vector({1, 2}), Tensor::vector({3, 3})),
               UndefinedReferenceError);
}

TEST(SiSnr, LengthMismatchIsDimensionError) {
  EXPECT_THROW(si_snr(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})),
               DimensionError);
}

TEST(SiSnr, ScaleInvarianceProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor ref = Tensor::randn({64}, rng);
    const Tensor est = add(ref, Tensor::randn({64}, rng, 0.5));
    const double base = si_snr(est, ref);
    // The 1e-12 noise floor breaks invariance once alpha^2 |e|^2 nears it.
    for (double alpha : {0.1, 0.5, 3.0, 1e4}) {
      EXPECT_NEAR(si_snr(scale(est, alpha), ref), base, 1e-9);
    }
    for (double beta : {-2.0, 0.01, 7.0}) {
      EXPECT_NEAR(si_snr(est, scale(ref, beta)), base, 1e-9);
    }
  }
}

TEST(SiSnr, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Tensor ref = Tensor::randn({20}, rng);
  const Tensor est = add(ref, Tensor::randn({20}, rng));
  EXPECT_LT(grad_check([&](Tape&, const Var& x) { return si_snr(x, ref); }, est),
            1e-5);
}

TEST(SiSnr, GradientIsZeroAtCap) {
  const Tensor ref = Tensor::vector({1, 2, -3, 0.5});
  Tape tape;
  const Var x = tape.parameter("x", ref);
  const GradMap g = backward(tape, si_snr(x, ref));
  for (double v : g.at("x").values()) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// PIT.

TEST(PitLoss, PerfectIdentityAndSwap) {
  const MixtureSample s = synth_mixture(9, 300);
  const auto keep = pit_loss<Tensor>({s.sources[0], s.sources[1]}, s.sources);
  EXPECT_EQ(keep.perm, (std::array<std::size_t, 2>{0, 1}));
  EXPECT_EQ(keep.loss.item(), -kSiSnrCapDb);
  const auto swap = pit_loss<Tensor>({s.sources[1], s.sources[0]}, s.sources);
  EXPECT_EQ(swap.perm, (std::array<std::size_t, 2>{1, 0}));
  EXPECT_EQ(swap.loss.item(), -kSiSnrCapDb);
}

TEST(PitLoss, SymmetryProperties) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = Tensor::randn({50}, rng);
    const Tensor b = Tensor::randn({50}, rng);
    const std::array<Tensor, 2> refs = {Tensor::randn({50}, rng),
                                        Tensor::randn({50}, rng)};
    const std::array<Tensor, 2> refs_swapped = {refs[1], refs[0]};
    const double ab = pit_loss<Tensor>({a, b}, refs).loss.item();
    const double ba = pit_loss<Tensor>({b, a}, refs).loss.item();
    const double both = pit_loss<Tensor>({b, a}, refs_swapped).loss.item();
    EXPECT_EQ(ab, ba);
    EXPECT_EQ(ab, both);
  }
}

TEST(PitLoss, TapeLossMatchesValueAndFollowsSelectedPermutation) {
  std::mt19937_64 rng(11);
  const MixtureSample s = synth_mixture(12, 200);
  const Tensor e0 = add(s.sources[1], Tensor::randn({200}, rng, 0.1));
  const Tensor e1 = add(s.sources[0], Tensor::randn({200}, rng, 0.1));
  Tape tape;
  const Var v0 = tape.parameter("e0", e0);
  const Var v1 = tape.parameter("e1", e1);
  const auto pit = pit_loss<Var>({v0, v1}, s.sources);
  EXPECT_EQ(pit.perm, (std::array<std::size_t, 2>{1, 0}));
  EXPECT_NEAR(pit.loss.value().item(),
              pit_loss<Tensor>({e0, e1}, s.sources).loss.item(), 1e-12);
}

TEST(PitLoss, FullModelGradientCheck) {
  const GradCheckCase c = sepnet_gradient_check();
  EXPECT_TRUE(c.passed()) << c.report.max_relative_error << " at "
                          << c.report.worst_param << "[" << c.report.worst_index
                          << "]";
}

// ---------------------------------------------------------------------------
// Synthetic data.

TEST(SynthMixture, SameSeedIsBitIdentical) {
  const MixtureSample a = synth_mixture(42, 4000);
  const MixtureSample b = synth_mixture(42, 4000);
  EXPECT_EQ(a.mixture, b.mixture);
  EXPECT_EQ(a.sources[0], b.sources[0]);
  EXPECT_EQ(a.sources[1], b.sources[1]);
}

TEST(SynthMixture, MixtureIsExactSum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MixtureSample s = synth_mixture(seed, 8000);
    for (std::size_t i = 0; i < 8000; ++i) {
      EXPECT_EQ(s.mixture[i] - s.sources[0][i] - s.sources[1][i], 0.0);
    }
  }
}

TEST(SynthMixture, DifferentSeedsDiffer) {
  EXPECT_GT(max_abs_diff(synth_mixture(0, 8000).mixture,
                         synth_mixture(1, 8000).mixture),
            0.01);
}

TEST(SynthMixture, SourcesArePeakNormalized) {
  const MixtureSample s = synth_mixture(3, 8000);
  EXPECT_NEAR(max_abs(s.sources[0]), 0.7, 1e-9);
  EXPECT_NEAR(max_abs(s.sources[1]), 0.7, 1e-9);
  EXPECT_EQ(s.seed, 3u);
}

TEST(SynthMixture, ToneSourceIsBandLimited) {
  // Energy of the first difference relative to the signal bounds the
  // dominant frequency: for a 400 Hz tone at 8 kHz the ratio is
  // 4 sin^2(pi 400 / 8000) ~ 0.098.
  const MixtureSample s = synth_mixture(13, 8000);
  double e = 0.0, de = 0.0;
  for (std::size_t i = 1; i < 8000; ++i) {
    e += s.sources[0][i] * s.sources[0][i];
    const double d = s.sources[0][i] - s.sources[0][i - 1];
    de += d * d;
  }
  EXPECT_LT(de / e, 0.1);
}

// ---------------------------------------------------------------------------
// Training.

std::vector<MixtureSample> tiny_dataset() {
  return {synth_mixture(0, 256), synth_mixture(1, 256)};
}

TEST(TrainToy, SingleStepHistory) {
  const auto data = tiny_dataset();
  const TrainResult r = train_toy(SepNetConfig::tiny(), data, 1, 0.05);
  EXPECT_EQ(r.loss_history.size(), 1u);
}

TEST(TrainToy, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = tiny_dataset();
  const SepNet init = SepNet::init(SepNetConfig::tiny(), 0);
  TrainResult r = train_toy(init, data, 3, 0.0);
  SepNet copy = init;
  std::vector<Tensor> before;
  copy.visit([&](const std::string&, Tensor& t) { before.push_back(t); });
  std::size_t i = 0;
  r.net.visit([&](const std::string& name, Tensor& t) {
    EXPECT_EQ(t, before[i++]) << name;
  });
  EXPECT_EQ(r.loss_history[0], r.loss_history[2]);
}

TEST(TrainToy, LossDecreasesOnOverfitSuite) {
  const auto data = tiny_dataset();
  const TrainResult r = train_toy(SepNetConfig::tiny(), data, 60, 0.1);
  ASSERT_EQ(r.loss_history.size(), 60u);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(TrainToy, IsDeterministic) {
  const auto data = tiny_dataset();
  const TrainResult a = train_toy(SepNetConfig::tiny(), data, 5, 0.1);
  const TrainResult b = train_toy(SepNetConfig::tiny(), data, 5, 0.1);
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(TrainToy, AdamOptionTrains) {
  const auto data = tiny_dataset();
  TrainOptions opts;
  opts.optimizer = Optimizer::kAdam;
  const TrainResult r = train_toy(SepNetConfig::tiny(), data, 30, 3e-3, opts);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(TrainToy, StepCallbackSeesEveryStep) {
  const auto data = tiny_dataset();
  TrainOptions opts;
  std::vector<long> steps;
  opts.on_step = [&](long s, double) { steps.push_back(s); };
  train_toy(SepNetConfig::tiny(), data, 4, 0.1, opts);
  EXPECT_EQ(steps, (std::vector<long>{0, 1, 2, 3}));
}

TEST(TrainToy, PreconditionsAreConfigErrors) {
  const auto data = tiny_dataset();
  EXPECT_THROW(train_toy(SepNetConfig::tiny(), data, 0, 0.1), ConfigError);
  EXPECT_THROW(train_toy(SepNetConfig::tiny(), std::span<const MixtureSample>{},
                         1, 0.1),
               ConfigError);
  EXPECT_THROW(train_toy(SepNetConfig::tiny(), data, 1, -1.0), ConfigError);
}

TEST(TrainToy, DivergenceReportsStep) {
  const auto data = tiny_dataset();
  SepNet net = SepNet::init(SepNetConfig::tiny(), 0);
  net.weights.encoder[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_toy(net, data, 3, 0.1);
    FAIL() << "expected TrainingDivergedError";
  } catch (const TrainingDivergedError& e) {
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(SiSnrImprovement, PerfectEstimatesGiveCapMinusMixtureScore) {
  const MixtureSample s = synth_mixture(14, 1000);
  const double expected =
      0.5 * ((kSiSnrCapDb - si_snr(s.mixture, s.sources[0])) +
             (kSiSnrCapDb - si_snr(s.mixture, s.sources[1])));
  EXPECT_NEAR(si_snr_improvement({s.sources[1], s.sources[0]}, s), expected,
              1e-12);
}

}  // namespace
}  // namespace flasep
