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

#ifndef FLASEP_SERIALIZE_HPP_
#define FLASEP_SERIALIZE_HPP_

// Model files and raw audio streams.
//
// Model file layout (all integers and floats little-endian):
//
//   char[8]  magic "FLASEPNT"
//   u32      format version (1)
//   config:  u32 enc_kernel, u32 enc_stride, u32 channels, u32 blocks,
//            u32 heads, u32 dwc_kernel, u32 speakers, u32 sample_rate,
//            f64 p, u8 gated, u8 activation (0 = SiLU, 1 = sigmoid)
//   u32      tensor count
//   per tensor:
//            u32 name length, name bytes, u32 rank, u64 dims[rank],
//            f64 values[prod(dims)]
//
// Raw audio is headerless mono 32-bit little-endian float PCM.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "flasep/error.hpp"
#include "flasep/sepnet.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

inline constexpr std::array<char, 8> kModelMagic = {'F', 'L', 'A', 'S',
                                                    'E', 'P', 'N', 'T'};
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint64_t kMaxTensorElements = std::uint64_t{1} << 32;

namespace detail {

template <class U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>(value >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw FormatError("unexpected end of stream");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(buf[i]) << (8 * i);
  }
  return value;
}

inline void put_f64(std::ostream& os, double v) {
  put_le(os, std::bit_cast<std::uint64_t>(v));
}
inline double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is));
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw FormatError(std::string(what) + " too large");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline void write_model(std::ostream& os, const SepNet& net) {
  SepNet copy = net;
  copy.validate();
  const SepNetConfig& c = copy.config;
  os.write(kModelMagic.data(), kModelMagic.size());
  detail::put_le<std::uint32_t>(os, kModelVersion);
  for (std::size_t v : {c.enc_kernel, c.enc_stride, c.channels, c.blocks,
                        c.heads, c.dwc_kernel, c.speakers}) {
    detail::put_le<std::uint32_t>(os, detail::checked_u32(v, "config field"));
  }
  detail::put_le<std::uint32_t>(os, c.sample_rate);
  detail::put_f64(os, c.p);
  detail::put_le<std::uint8_t>(os, c.gated ? 1 : 0);
  detail::put_le<std::uint8_t>(
      os, c.activation == GateActivation::kSigmoid ? 1 : 0);

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  copy.visit([&](const std::string& name, Tensor& t) {
    tensors.emplace_back(name, &t);
  });
  detail::put_le<std::uint32_t>(os,
                                detail::checked_u32(tensors.size(), "count"));
  for (const auto& [name, t] : tensors) {
    detail::put_le<std::uint32_t>(os, detail::checked_u32(name.size(), "name"));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, detail::checked_u32(t->rank(), "rank"));
    for (std::size_t d : t->shape()) {
      detail::put_le<std::uint64_t>(os, d);
    }
    for (double v : t->values()) detail::put_f64(os, v);
  }
  if (!os) throw FormatError("failed writing model");
}

inline SepNet read_model(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kModelMagic) {
    throw FormatError("not a flasep model file (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kModelVersion) {
    throw FormatError("unsupported model format version " +
                      std::to_string(version));
  }
  SepNetConfig c;
  c.enc_kernel = detail::get_le<std::uint32_t>(is);
  c.enc_stride = detail::get_le<std::uint32_t>(is);
  c.channels = detail::get_le<std::uint32_t>(is);
  c.blocks = detail::get_le<std::uint32_t>(is);
  c.heads = detail::get_le<std::uint32_t>(is);
  c.dwc_kernel = detail::get_le<std::uint32_t>(is);
  c.speakers = detail::get_le<std::uint32_t>(is);
  c.sample_rate = detail::get_le<std::uint32_t>(is);
  c.p = detail::get_f64(is);
  c.gated = detail::get_le<std::uint8_t>(is) != 0;
  const auto act = detail::get_le<std::uint8_t>(is);
  if (act > 1) throw FormatError("unknown gate activation code");
  c.activation = act == 1 ? GateActivation::kSigmoid : GateActivation::kSilu;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model config: ") + e.what());
  }

  std::map<std::string, Tensor> loaded;
  const auto count = detail::get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_le<std::uint32_t>(is);
    if (name_len > 4096) throw FormatError("tensor name too long");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated name");
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank > 8) throw FormatError("tensor rank too large");
    Shape shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      d = detail::get_le<std::uint64_t>(is);
      if (d != 0 && elements > kMaxTensorElements / d) {
        throw FormatError("tensor '" + name + "' is implausibly large");
      }
      elements *= d;
    }
    Tensor t(shape);
    for (double& v : t.values()) v = detail::get_f64(is);
    if (!loaded.emplace(name, std::move(t)).second) {
      throw FormatError("duplicate tensor '" + name + "'");
    }
  }

  SepNet net = SepNet::init(c, 0);
  net.visit([&](const std::string& name, Tensor& t) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw FormatError("missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " +
                        shape_string(it->second.shape()) + ", expected " +
                        shape_string(t.shape()));
    }
    t = std::move(it->second);
    loaded.erase(it);
  });
  if (!loaded.empty()) {
    throw FormatError("unexpected tensor '" + loaded.begin()->first + "'");
  }
  return net;
}

inline void save_model(const std::string& path, const SepNet& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_model(os, net);
}

inline SepNet load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_model(is);
}

inline Tensor read_f32le(std::istream& is) {
  std::vector<double> samples;
  unsigned char buf[4];
  while (is.read(reinterpret_cast<char*>(buf), 4)) {
    const std::uint32_t bits = std::uint32_t{buf[0]} |
                               (std::uint32_t{buf[1]} << 8) |
                               (std::uint32_t{buf[2]} << 16) |
                               (std::uint32_t{buf[3]} << 24);
    samples.push_back(static_cast<double>(std::bit_cast<float>(bits)));
  }
  if (is.gcount() != 0) {
    throw FormatError("raw audio length is not a multiple of 4 bytes");
  }
  return Tensor(Shape{samples.size()}, samples);
}

inline void write_f32le(std::ostream& os, const Tensor& wave) {
  for (double v : wave.values()) {
    detail::put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!os) throw FormatError("failed writing raw audio");
}

inline Tensor load_f32le(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_f32le(is);
}

inline void save_f32le(const std::string& path, const Tensor& wave) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_f32le(os, wave);
}

}  // namespace flasep

#endif  // FLASEP_SERIALIZE_HPP_
