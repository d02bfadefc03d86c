#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace rainex {

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Splits [0, n) into contiguous chunks, one per worker; runs inline when threads <= 1.
/// `fn(begin, end, worker)` must only touch its own range. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        fn(std::size_t(0), n, 0u);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        std::size_t b = std::min(n, t * chunk), e = std::min(n, b + chunk);
        pool.emplace_back([&, b, e, t] {
            try {
                fn(b, e, t);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

/// Runs fn(i) for each i in [0, n) on a pool of workers pulling indices in order.
template <typename Fn>
void parallel_each(std::size_t n, unsigned threads, Fn&& fn) {
    parallel_for(n, threads, [&](std::size_t b, std::size_t e, unsigned) {
        for (std::size_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace rainex
