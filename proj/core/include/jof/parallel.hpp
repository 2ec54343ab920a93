#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace jof {

// Global worker cap, set once by the CLI --threads flag. 1 = fully serial.
inline std::atomic<int>& max_threads() {
    static std::atomic<int> n{static_cast<int>(std::thread::hardware_concurrency())};
    return n;
}

inline void set_max_threads(int n) { max_threads() = std::max(1, n); }

// Runs fn(i) for i in [0,n). Work is split into fixed-size blocks so results
// written to per-index slots are identical for any thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = std::min<std::size_t>(std::max(1, max_threads().load()), n);
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    const std::size_t block = std::max<std::size_t>(1, n / (static_cast<std::size_t>(workers) * 8));
    auto run = [&] {
        for (;;) {
            const std::size_t begin = next.fetch_add(block);
            if (begin >= n) break;
            const std::size_t end = std::min(n, begin + block);
            for (std::size_t i = begin; i < end; ++i) fn(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
}

} // namespace jof
