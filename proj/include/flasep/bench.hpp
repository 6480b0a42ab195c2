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

#ifndef FLASEP_BENCH_HPP_
#define FLASEP_BENCH_HPP_

// Forward-pass time and peak live-element benchmarks across sequence
// lengths and attention modes, with log-log slope fits.
//
// CSV layout:
//   mode,N,d,heads,reps,median_seconds,peak_elements
//   <mode>,<N>,<d>,<heads>,<reps>,<seconds>,<elements>      measured cell
//   <mode>,<N>,<d>,<heads>,<reps>,FAIL,<reason>             failed cell
//   <mode>,SLOPE,<exponent>,<r2>                            per-mode fit
// A fit over fewer than three successful cells prints NA for both values.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flasep/attention.hpp"
#include "flasep/error.hpp"
#include "flasep/memory.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

// 400M live doubles (3.2 GB).
inline constexpr std::int64_t kDefaultBenchElementLimit = 400'000'000;

struct BenchRecord {
  AttentionMode mode;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t heads = 0;
  std::size_t reps = 0;
  double median_seconds = 0.0;
  std::int64_t peak_elements = 0;
  bool ok = true;
  std::string failure;  // reason token when !ok
};

struct SlopeFit {
  double exponent = 0.0;
  double intercept = 0.0;  // log-seconds at N = 1
  double r2 = 0.0;
};

// Least-squares line through (log N, log seconds).
inline SlopeFit fit_slope(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) {
    throw ContractError("fit_slope needs at least 3 points, got " +
                        std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].first > 0.0) || !(points[i].second > 0.0)) {
      throw DomainError("fit_slope: N and seconds must be positive");
    }
    if (i && !(points[i].first > points[i - 1].first)) {
      throw ContractError("fit_slope: N must be strictly increasing");
    }
  }
  const double m = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [n, t] : points) {
    mx += std::log(n);
    my += std::log(t);
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [n, t] : points) {
    const double dx = std::log(n) - mx, dy = std::log(t) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  SlopeFit fit;
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  double ss_res = 0.0;
  for (const auto& [n, t] : points) {
    const double r = std::log(t) - (fit.intercept + fit.exponent * std::log(n));
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return fit;
}

struct BenchConfig {
  std::vector<AttentionMode> modes = {{AttentionKind::kSoftmax, true},
                                      {AttentionKind::kVla, true},
                                      {AttentionKind::kFla, true}};
  std::vector<std::size_t> lens = {1024, 2048, 4096, 8192, 16384, 32768, 65536};
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t reps = 10;
  std::uint64_t seed = 7;
  std::int64_t element_limit = kDefaultBenchElementLimit;
};

// Times one forward pass of the gated attention block (softmax, VLA or FLA
// core behind the same projections, norm and gate). One warmup run, then the
// median of `reps` runs. peak_elements is the live-element high-water mark
// of the measured runs, including the input and parameters.
inline BenchRecord time_forward(AttentionMode mode, std::size_t n,
                                std::size_t d, std::size_t heads,
                                std::size_t reps, std::uint64_t seed = 7,
                                std::int64_t element_limit =
                                    kDefaultBenchElementLimit) {
  if (reps < 3) {
    throw ConfigError("reps must be >= 3, got " + std::to_string(reps));
  }
  if (n == 0) throw ConfigError("sequence length must be positive");
  BenchRecord rec;
  rec.mode = mode;
  rec.n = n;
  rec.d = d;
  rec.heads = heads;
  rec.reps = reps;
  FlaHyper hyper;
  hyper.heads = heads;
  hyper.validate(d);
  try {
    memory::ScopedElementLimit limit(element_limit);
    std::mt19937_64 rng(seed);
    const Tensor x = Tensor::randn({n, d}, rng);
    const FlaParams params = FlaParams::init(d, hyper, rng);
    auto run = [&] {
      return gated_attention_block(x, params.weights, hyper, mode);
    };
    (void)run();  // warmup
    std::vector<double> seconds;
    seconds.reserve(reps);
    std::int64_t peak = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      memory::reset_peak();
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor y = run();
      const auto t1 = std::chrono::steady_clock::now();
      peak = std::max(peak, memory::peak_elements());
      seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::nth_element(seconds.begin(), seconds.begin() + reps / 2,
                     seconds.end());
    double median = seconds[reps / 2];
    if (reps % 2 == 0) {
      median = 0.5 * (median + *std::max_element(seconds.begin(),
                                                 seconds.begin() + reps / 2));
    }
    rec.median_seconds = median;
    rec.peak_elements = peak;
  } catch (const OutOfMemoryError&) {
    rec.ok = false;
    rec.failure = "out_of_memory";
  } catch (const NumericError&) {
    rec.ok = false;
    rec.failure = "non_finite";
  }
  return rec;
}

struct ModeFit {
  AttentionMode mode;
  std::optional<SlopeFit> fit;
};

struct BenchSuite {
  std::vector<BenchRecord> records;
  std::vector<ModeFit> fits;

  bool all_ok() const {
    return std::all_of(records.begin(), records.end(),
                       [](const BenchRecord& r) { return r.ok; });
  }

  const BenchRecord* find(AttentionMode mode, std::size_t n) const {
    for (const auto& r : records) {
      if (r.mode == mode && r.n == n) return &r;
    }
    return nullptr;
  }
};

inline std::vector<ModeFit> fit_modes(std::span<const BenchRecord> records) {
  std::vector<ModeFit> fits;
  for (const auto& r : records) {
    if (std::none_of(fits.begin(), fits.end(),
                     [&](const ModeFit& f) { return f.mode == r.mode; })) {
      fits.push_back({r.mode, std::nullopt});
    }
  }
  for (auto& f : fits) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : records) {
      if (r.mode == f.mode && r.ok) {
        pts.emplace_back(static_cast<double>(r.n), r.median_seconds);
      }
    }
    std::sort(pts.begin(), pts.end());
    if (pts.size() >= 3) f.fit = fit_slope(pts);
  }
  return fits;
}

// Runs every (mode, N) cell sequentially. Failed cells are recorded and the
// suite continues.
inline BenchSuite run_suite(
    const BenchConfig& config,
    const std::function<void(const BenchRecord&)>& on_record = {}) {
  if (config.modes.empty() || config.lens.empty()) {
    throw ConfigError("benchmark needs at least one mode and one length");
  }
  BenchSuite suite;
  for (const AttentionMode& mode : config.modes) {
    for (std::size_t n : config.lens) {
      suite.records.push_back(time_forward(mode, n, config.dim, config.heads,
                                           config.reps, config.seed,
                                           config.element_limit));
      if (on_record) on_record(suite.records.back());
    }
  }
  suite.fits = fit_modes(suite.records);
  return suite;
}

inline constexpr const char* kBenchCsvHeader =
    "mode,N,d,heads,reps,median_seconds,peak_elements";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string to_csv_row(const BenchRecord& r) {
  std::string row = to_string(r.mode) + "," + std::to_string(r.n) + "," +
                    std::to_string(r.d) + "," + std::to_string(r.heads) + "," +
                    std::to_string(r.reps) + ",";
  if (r.ok) {
    row += format_double(r.median_seconds) + "," +
           std::to_string(r.peak_elements);
  } else {
    row += "FAIL," + r.failure;
  }
  return row;
}

inline std::string to_csv_row(const ModeFit& f) {
  std::string row = to_string(f.mode) + ",SLOPE,";
  if (f.fit) {
    row += format_double(f.fit->exponent) + "," + format_double(f.fit->r2);
  } else {
    row += "NA,NA";
  }
  return row;
}

inline std::string to_csv(const BenchSuite& suite) {
  std::string out = std::string(kBenchCsvHeader) + "\n";
  for (const auto& r : suite.records) out += to_csv_row(r) + "\n";
  for (const auto& f : suite.fits) out += to_csv_row(f) + "\n";
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::size_t parse_size(const std::string& s, const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw FormatError(std::string("bad ") + what + " '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

// Reads the measurement rows of a benchmark CSV; SLOPE rows are skipped.
inline std::vector<BenchRecord> read_bench_csv(std::istream& is) {
  std::vector<BenchRecord> records;
  std::string line;
  if (!std::getline(is, line) || line != kBenchCsvHeader) {
    throw FormatError("benchmark CSV must start with '" +
                      std::string(kBenchCsvHeader) + "'");
  }
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() >= 2 && cells[1] == "SLOPE") continue;
    if (cells.size() != 7) throw FormatError("bad CSV row '" + line + "'");
    BenchRecord r;
    try {
      r.mode = parse_attention_mode(cells[0]);
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    r.n = detail::parse_size(cells[1], "N");
    r.d = detail::parse_size(cells[2], "d");
    r.heads = detail::parse_size(cells[3], "heads");
    r.reps = detail::parse_size(cells[4], "reps");
    if (cells[5] == "FAIL") {
      r.ok = false;
      r.failure = cells[6];
    } else {
      try {
        r.median_seconds = std::stod(cells[5]);
      } catch (const std::exception&) {
        throw FormatError("bad median_seconds '" + cells[5] + "'");
      }
      r.peak_elements =
          static_cast<std::int64_t>(detail::parse_size(cells[6], "peak"));
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace flasep

#endif  // FLASEP_BENCH_HPP_
