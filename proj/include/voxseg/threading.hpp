#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace voxseg {

// Global cap on worker threads (CLI --threads). Every parallel_for gives each
// index to exactly one worker and all per-index accumulation is sequential,
// so results are bit-identical for any thread count.
inline int& max_threads() {
    static int n = []() {
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : int(hc);
    }();
    return n;
}

inline void set_max_threads(int n) { max_threads() = n < 1 ? 1 : n; }

template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
    const int threads = max_threads();
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const size_t t = std::min<size_t>(size_t(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (size_t w = 0; w < t; ++w)
        pool.emplace_back([&, w]() {
            for (size_t i = w; i < n; i += t) fn(i);
        });
    for (auto& th : pool) th.join();
}

} // namespace voxseg
