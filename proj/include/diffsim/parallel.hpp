// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace diffsim {

// Runs fn(0..n-1) across `jobs` threads in contiguous chunks. Callers own
// result placement by index, so output is schedule-independent; the first
// worker exception is rethrown.
inline void parallel_indexed(std::size_t n, int jobs,
                             const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const auto nj = static_cast<std::size_t>(jobs);
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(nj);
  const std::size_t per = (n + nj - 1) / nj;
  for (std::size_t w = 0; w < nj; ++w) {
    workers.emplace_back([&, w]() {
      const std::size_t begin = w * per;
      const std::size_t end = std::min(n, begin + per);
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace diffsim
