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

// Command-line front end: benchmarks, toy training, separation and
// gradient self-checks.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flasep/flasep.hpp"

namespace {

using namespace flasep;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int bench_run(const std::string& modes, const std::string& lens,
              std::size_t dim, std::size_t heads, std::size_t reps,
              std::uint64_t seed, std::int64_t max_elements,
              const std::string& out_path) {
  BenchConfig cfg;
  cfg.modes.clear();
  for (const auto& m : split_list(modes)) {
    cfg.modes.push_back(parse_attention_mode(m));
  }
  cfg.lens.clear();
  for (const auto& l : split_list(lens)) cfg.lens.push_back(std::stoul(l));
  cfg.dim = dim;
  cfg.heads = heads;
  cfg.reps = reps;
  cfg.seed = seed;
  cfg.element_limit = max_elements;

  std::cerr << kBenchCsvHeader << "\n";
  const BenchSuite suite = run_suite(cfg, [](const BenchRecord& r) {
    std::cerr << to_csv_row(r) << std::endl;
  });
  const std::string csv = to_csv(suite);
  if (out_path.empty() || out_path == "-") {
    std::cout << csv;
  } else {
    std::ofstream os(out_path);
    if (!os) throw FormatError("cannot open '" + out_path + "'");
    os << csv;
    for (const auto& f : suite.fits) std::cerr << to_csv_row(f) << "\n";
  }
  return suite.all_ok() ? 0 : 1;
}

int bench_slope(const std::string& in_path) {
  std::ifstream is(in_path);
  if (!is) throw FormatError("cannot open '" + in_path + "'");
  const auto records = read_bench_csv(is);
  for (const auto& f : fit_modes(records)) {
    std::cout << to_csv_row(f) << "\n";
  }
  return 0;
}

int train_toy_cmd(std::size_t items, long steps, double lr,
                  std::size_t length, bool no_gate, const std::string& opt,
                  std::uint64_t seed, const std::string& out_path) {
  SepNetConfig cfg;
  cfg.gated = !no_gate;
  std::vector<MixtureSample> data;
  for (std::size_t i = 0; i < items; ++i) {
    data.push_back(synth_mixture(seed + i, length, cfg.sample_rate));
  }
  TrainOptions options;
  options.init_seed = seed;
  if (opt == "adam") {
    options.optimizer = Optimizer::kAdam;
  } else if (opt != "sgd") {
    throw ConfigError("unknown optimizer '" + opt + "'");
  }
  const auto t0 = std::chrono::steady_clock::now();
  options.on_step = [&](long step, double loss) {
    if (step % 100 == 0 || step + 1 == steps) {
      const double el = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      std::fprintf(stderr, "step %6ld  loss %9.4f  (%.1f s)\n", step, loss,
                   el);
    }
  };
  const TrainResult result = train_toy(cfg, data, steps, lr, options);
  double mean = 0.0;
  for (const auto& s : data) {
    const double v = si_snr_improvement(result.net, s);
    std::printf("item seed=%llu  SI-SNRi %.2f dB\n",
                static_cast<unsigned long long>(s.seed), v);
    mean += v;
  }
  std::printf("mean SI-SNRi %.2f dB over %zu items\n",
              mean / static_cast<double>(data.size()), data.size());
  if (!out_path.empty()) save_model(out_path, result.net);
  return 0;
}

int separate_cmd(const std::string& model_path, const std::string& in,
                 const std::string& out1, const std::string& out2) {
  const SepNet net = load_model(model_path);
  const Tensor mix = load_f32le(in);
  const auto outs = separate(mix, net);
  save_f32le(out1, outs[0]);
  save_f32le(out2, outs[1]);
  return 0;
}

int synth_cmd(std::uint64_t seed, std::size_t length, const std::string& out,
              const std::string& src1, const std::string& src2) {
  const MixtureSample s = synth_mixture(seed, length);
  save_f32le(out, s.mixture);
  if (!src1.empty()) save_f32le(src1, s.sources[0]);
  if (!src2.empty()) save_f32le(src2, s.sources[1]);
  return 0;
}

int gradcheck_cmd(const std::string& config) {
  if (config != "tiny") throw ConfigError("unknown config '" + config + "'");
  bool ok = true;
  auto print = [&](const GradCheckCase& c) {
    std::printf("%-4s %-40s max rel err %.3e (tol %.0e)\n",
                c.passed() ? "PASS" : "FAIL", c.name.c_str(),
                c.report.max_relative_error, c.tolerance);
    ok = ok && c.passed();
  };
  for (const auto& c : attention_gradient_checks()) print(c);
  print(sepnet_gradient_check());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Focused linear attention: benchmarks and toy separation"};
  app.require_subcommand(1);

  auto* bench = app.add_subcommand("bench", "attention scaling benchmarks");
  bench->require_subcommand(1);

  auto* run = bench->add_subcommand("run", "time forward passes, emit CSV");
  std::string modes = "softmax,vla,fla";
  std::string lens = "1024,2048,4096,8192,16384,32768,65536";
  std::size_t dim = 32, heads = 4, reps = 10;
  std::uint64_t seed = 7;
  std::int64_t max_elements = kDefaultBenchElementLimit;
  std::string out_csv;
  run->add_option("--modes", modes, "comma-separated: softmax,vla,fla")
      ->capture_default_str();
  run->add_option("--lens", lens, "comma-separated sequence lengths")
      ->capture_default_str();
  run->add_option("--dim", dim)->capture_default_str();
  run->add_option("--heads", heads)->capture_default_str();
  run->add_option("--reps", reps)->capture_default_str();
  run->add_option("--seed", seed)->capture_default_str();
  run->add_option("--max-elements", max_elements,
                  "live-element budget; larger cells fail as out_of_memory")
      ->capture_default_str();
  run->add_option("--out", out_csv, "output CSV (default stdout)");

  auto* slope = bench->add_subcommand("slope", "fit scaling exponents");
  std::string in_csv;
  slope->add_option("--in", in_csv)->required();

  auto* train = app.add_subcommand("train-toy", "train on synthetic mixtures");
  std::size_t items = 4, length = 8000;
  long steps = 5000;
  double lr = 0.1;
  bool no_gate = false;
  std::string optimizer = "sgd";
  std::uint64_t train_seed = 0;
  std::string model_out;
  train->add_option("--items", items)->capture_default_str();
  train->add_option("--steps", steps)->capture_default_str();
  train->add_option("--lr", lr)->capture_default_str();
  train->add_option("--length", length, "samples per mixture")
      ->capture_default_str();
  train->add_option("--optimizer", optimizer, "sgd or adam")
      ->capture_default_str();
  train->add_option("--seed", train_seed)->capture_default_str();
  train->add_flag("--no-gate", no_gate, "remove the gate branch");
  train->add_option("--out", model_out, "model file to write");

  auto* sep = app.add_subcommand("separate", "separate a raw f32 mixture");
  std::string model_in, mix_in, out1, out2;
  sep->add_option("--model", model_in)->required();
  sep->add_option("--in", mix_in)->required();
  sep->add_option("--out1", out1)->required();
  sep->add_option("--out2", out2)->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic mixture");
  std::uint64_t synth_seed = 0;
  std::size_t synth_len = 8000;
  std::string synth_out, synth_s1, synth_s2;
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--length", synth_len)->capture_default_str();
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--src1", synth_s1);
  synth->add_option("--src2", synth_s2);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference self-check");
  std::string gc_config = "tiny";
  gc->add_option("--config", gc_config)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      return bench_run(modes, lens, dim, heads, reps, seed, max_elements,
                       out_csv);
    }
    if (*slope) return bench_slope(in_csv);
    if (*train) {
      return train_toy_cmd(items, steps, lr, length, no_gate, optimizer,
                           train_seed, model_out);
    }
    if (*sep) return separate_cmd(model_in, mix_in, out1, out2);
    if (*synth) {
      return synth_cmd(synth_seed, synth_len, synth_out, synth_s1, synth_s2);
    }
    if (*gc) return gradcheck_cmd(gc_config);
  } catch (const flasep::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
