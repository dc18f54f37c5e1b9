// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "tedsim/types.hpp"

namespace tedsim {

// Runs fn(rank) for every rank on its own thread and joins. Collectives
// inside fn rendezvous through the fabric. If any rank throws, the first
// exception in rank order is rethrown after all threads have finished.
inline void run_ranks(int world_size, const std::function<void(RankId)>& fn) {
  if (world_size == 1) {
    fn(0);
    return;
  }
  std::vector<std::exception_ptr> errors(world_size);
  std::vector<std::thread> threads;
  threads.reserve(world_size);
  for (RankId r = 0; r < world_size; ++r) {
    threads.emplace_back([&, r] {
      try {
        fn(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace tedsim
