#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace harvest {

/// Process-wide worker cap. Purely an execution knob: all parallel loops
/// write to disjoint, preallocated slots, so results never depend on it.
inline unsigned& max_threads_ref() {
    static unsigned n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}
inline void set_max_threads(unsigned n) { max_threads_ref() = n == 0 ? std::max(1u, std::thread::hardware_concurrency()) : n; }
inline unsigned max_threads() { return max_threads_ref(); }

/// Runs fn(i) for i in [0, n). Work is claimed via an atomic counter; fn must
/// only touch slot i of its outputs.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    unsigned workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mutex;
    auto work = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

/// Block version for grid sweeps: fn(begin, end) on contiguous ranges.
template <class Fn>
void parallel_for_blocks(std::size_t n, Fn&& fn) {
    unsigned workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1) {
        if (n) fn(std::size_t(0), n);
        return;
    }
    std::size_t chunk = (n + workers - 1) / workers;
    std::exception_ptr err;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        std::size_t b = std::min<std::size_t>(t * chunk, n);
        std::size_t e = std::min<std::size_t>(b + chunk, n);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e, &err, &err_mutex] {
            try {
                fn(b, e);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace harvest
