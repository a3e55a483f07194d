// Deterministic chunked work distribution. Items are split into fixed-size
// chunks whose layout does not depend on the thread count; callers merge
// per-chunk results in chunk order, so results are identical for any number
// of workers.
#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace emhrnn {

inline std::size_t chunk_count(std::size_t n_items, std::size_t chunk_size) {
    return (n_items + chunk_size - 1) / chunk_size;
}

template <class Fn>
void run_chunks(std::size_t n_items, std::size_t chunk_size, int threads, Fn&& fn) {
    if (n_items == 0) return;
    const std::size_t chunks = chunk_count(n_items, chunk_size);
    auto process = [&](std::size_t c) {
        const std::size_t begin = c * chunk_size;
        const std::size_t end = std::min(begin + chunk_size, n_items);
        fn(c, begin, end);
    };
    if (threads <= 1 || chunks == 1) {
        for (std::size_t c = 0; c < chunks; ++c) process(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            process(c);
        }
    };
    const std::size_t n_workers = std::min<std::size_t>(threads, chunks);
    std::vector<std::thread> pool;
    pool.reserve(n_workers - 1);
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

}  // namespace emhrnn
