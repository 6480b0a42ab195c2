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

#ifndef FLASEP_MEMORY_HPP_
#define FLASEP_MEMORY_HPP_

// Process-wide accounting of live tensor elements.
//
// Every Tensor buffer is allocated through TrackedAllocator, which keeps a
// count of currently-live elements and a high-water mark. The benchmark reads
// the high-water mark as its memory metric, so it is exact and deterministic
// for a given call sequence. An optional element limit turns allocations that
// would exceed it into OutOfMemoryError.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <new>
#include <string>

#include "flasep/error.hpp"

namespace flasep::memory {

namespace detail {

inline std::atomic<std::int64_t> g_live{0};
inline std::atomic<std::int64_t> g_peak{0};
inline std::atomic<std::int64_t> g_limit{
    std::numeric_limits<std::int64_t>::max()};

inline void raise_peak(std::int64_t candidate) noexcept {
  std::int64_t cur = g_peak.load(std::memory_order_relaxed);
  while (candidate > cur &&
         !g_peak.compare_exchange_weak(cur, candidate,
                                       std::memory_order_relaxed)) {
  }
}

inline void acquire(std::int64_t n) {
  const std::int64_t now = g_live.fetch_add(n, std::memory_order_relaxed) + n;
  if (now > g_limit.load(std::memory_order_relaxed)) {
    g_live.fetch_sub(n, std::memory_order_relaxed);
    throw OutOfMemoryError("tensor allocation of " + std::to_string(n) +
                           " elements exceeds live-element limit of " +
                           std::to_string(g_limit.load()));
  }
  raise_peak(now);
}

inline void release(std::int64_t n) noexcept {
  g_live.fetch_sub(n, std::memory_order_relaxed);
}

}  // namespace detail

inline std::int64_t live_elements() noexcept {
  return detail::g_live.load(std::memory_order_relaxed);
}

inline std::int64_t peak_elements() noexcept {
  return detail::g_peak.load(std::memory_order_relaxed);
}

// Sets the high-water mark to the current live count.
inline void reset_peak() noexcept {
  detail::g_peak.store(live_elements(), std::memory_order_relaxed);
}

inline std::int64_t element_limit() noexcept {
  return detail::g_limit.load(std::memory_order_relaxed);
}

inline void set_element_limit(std::int64_t limit) noexcept {
  detail::g_limit.store(limit, std::memory_order_relaxed);
}

inline void clear_element_limit() noexcept {
  set_element_limit(std::numeric_limits<std::int64_t>::max());
}

// Restores the previous limit on scope exit.
class ScopedElementLimit {
 public:
  explicit ScopedElementLimit(std::int64_t limit) : saved_(element_limit()) {
    set_element_limit(limit);
  }
  ~ScopedElementLimit() { set_element_limit(saved_); }
  ScopedElementLimit(const ScopedElementLimit&) = delete;
  ScopedElementLimit& operator=(const ScopedElementLimit&) = delete;

 private:
  std::int64_t saved_;
};

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    detail::acquire(static_cast<std::int64_t>(n));
    try {
      return std::allocator<T>{}.allocate(n);
    } catch (const std::bad_alloc&) {
      detail::release(static_cast<std::int64_t>(n));
      throw OutOfMemoryError("system allocation of " + std::to_string(n) +
                             " elements failed");
    }
  }

  void deallocate(T* p, std::size_t n) noexcept {
    std::allocator<T>{}.deallocate(p, n);
    detail::release(static_cast<std::int64_t>(n));
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace flasep::memory

#endif  // FLASEP_MEMORY_HPP_
