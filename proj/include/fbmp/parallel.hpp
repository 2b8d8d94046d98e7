#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace fbmp {

/// Worker count from an explicit request, then FBMP_THREADS, then 1.
inline unsigned resolve_threads(unsigned requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("FBMP_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return 1;
}

/// Runs fn(begin, end) over a static partition of [0, n).  Outputs must be
/// written to per-item slots; the partition never affects results.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, threads);
    if (threads == 1 || n < 2) {
        if (n > 0) fn(std::size_t{0}, n);
        return;
    }
    std::size_t t = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(t);
    for (std::size_t w = 0; w < t; ++w) {
        std::size_t b = n * w / t, e = n * (w + 1) / t;
        pool.emplace_back([&, w, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    // Lowest failing chunk wins, so the reported error is deterministic.
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace fbmp
