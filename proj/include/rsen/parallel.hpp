#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rsen {

namespace detail {
inline std::atomic<std::size_t>& thread_override() {
    static std::atomic<std::size_t> value{0};
    return value;
}
} // namespace detail

/// Worker count for internal parallel loops.
///
/// `RSEN_THREADS` caps it (0 or unset means hardware concurrency);
/// set_thread_count() overrides the environment.
inline std::size_t thread_count() {
    if (const std::size_t forced = detail::thread_override().load(); forced > 0) return forced;
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("RSEN_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
    }
    return hw;
}

inline void set_thread_count(std::size_t n) { detail::thread_override().store(n); }

/// Runs fn(i) for i in [0, count).
///
/// Each index is processed by exactly one worker, so callers that write
/// per-index results and reduce them in index order stay bitwise
/// deterministic regardless of the worker count.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const std::size_t workers = std::min(thread_count(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    pool.clear();
    if (error) std::rethrow_exception(error);
}

} // namespace rsen
