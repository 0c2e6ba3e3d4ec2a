#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace latent_lens {

// Process-wide worker cap; 0 means hardware concurrency. Set from --threads.
int worker_limit();
void set_worker_limit(int threads);

// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots; callers reduce them afterwards in index order,
// which keeps outputs independent of the thread count.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body)
{
    if (threads <= 0) {
        threads = worker_limit();
    }
    const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

// Pairwise sum of parts[0..n) in a fixed tree shape. The result does not
// depend on which thread produced which part.
template <typename T, typename Add>
T tree_reduce(std::vector<T> parts, Add&& add)
{
    while (parts.size() > 1) {
        std::vector<T> next;
        next.reserve((parts.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
            next.push_back(add(std::move(parts[i]), parts[i + 1]));
        }
        if (parts.size() % 2 == 1) {
            next.push_back(std::move(parts.back()));
        }
        parts = std::move(next);
    }
    return std::move(parts.front());
}

} // namespace latent_lens
