// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

#include "proxel/linalg.hpp"

namespace proxel {

/// Process-wide worker count for data-parallel loops (1 = serial).
void set_thread_count(int threads);
int thread_count();

/// Runs fn(i) for i in [0, n). Each index must write only its own output
/// slot; reductions happen after the loop in index order, so results do not
/// depend on the worker count.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace proxel
