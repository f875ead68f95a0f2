// SPDX-License-Identifier: Apache-2.0
#include "proxel/threads.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace proxel {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int threads) {
  if (threads < 1) threads = 1;
  g_threads.store(threads, std::memory_order_relaxed);
}

int thread_count() { return g_threads.load(std::memory_order_relaxed); }

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const int workers = std::min<Index>(thread_count(), n) > 1 ? static_cast<int>(std::min<Index>(thread_count(), n)) : 1;
  if (workers == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<Index> cursor{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_lock;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const Index i = cursor.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> hold(error_lock);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace proxel
