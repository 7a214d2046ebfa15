// Copyright 2026 The GPTM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
/// \file
/// \brief Minimal fork-join loop used by the E-step and kernel construction.

#ifndef GPTM__PARALLEL_HPP_
#define GPTM__PARALLEL_HPP_

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace gptm
{

/// Calls fn(i) for every i in [0, n) using at most `threads` workers.
/// Each index is visited exactly once; callers write results into
/// per-index slots so output never depends on the thread count.
/// The first exception thrown by any worker is rethrown.
template<typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn && fn)
{
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back(
      [&, t]() {
        try {
          for (std::size_t i = t; i < n; i += threads) {
            fn(i);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
  }
  for (auto & th : pool) {
    th.join();
  }
  for (auto & e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace gptm

#endif  // GPTM__PARALLEL_HPP_
