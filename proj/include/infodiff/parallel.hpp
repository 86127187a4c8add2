#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace infodiff {

namespace detail {
inline std::atomic<std::size_t>& worker_count() {
    static std::atomic<std::size_t> count{1};
    return count;
}
}  // namespace detail

inline void set_worker_threads(std::size_t n) { detail::worker_count() = std::max<std::size_t>(1, n); }
inline std::size_t worker_threads() { return detail::worker_count(); }

// Runs body(k) for k in [0, n) over contiguous blocks. Results must be written to
// per-index slots so the outcome does not depend on the thread count. The
// exception from the lowest failing block is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t threads = std::min(worker_threads(), n);
    if (threads <= 1) {
        for (std::size_t k = 0; k < n; ++k) body(k);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        const std::size_t begin = n * w / threads, end = n * (w + 1) / threads;
        pool.emplace_back([&, w, begin, end] {
            try {
                for (std::size_t k = begin; k < end; ++k) body(k);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace infodiff
