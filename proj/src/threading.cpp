#include "sasq/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "sasq/error.hpp"

namespace sasq {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) {
    if (n < 1) throw ConfigError("threads must be >= 1, got " + std::to_string(n));
    g_threads.store(n, std::memory_order_relaxed);
}

int threads() { return g_threads.load(std::memory_order_relaxed); }

void parallel_for_rows(size_t rows, size_t grain,
                       const std::function<void(size_t, size_t)>& fn) {
    if (rows == 0) return;
    const size_t max_workers = static_cast<size_t>(threads());
    size_t workers = std::min(max_workers, std::max<size_t>(1, rows / std::max<size_t>(1, grain)));
    if (workers <= 1) {
        fn(0, rows);
        return;
    }
    const size_t chunk = (rows + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (size_t w = 1; w < workers; ++w) {
        const size_t begin = w * chunk;
        if (begin >= rows) break;
        const size_t end = std::min(rows, begin + chunk);
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(0, std::min(rows, chunk));
    for (auto& t : pool) t.join();
}

}  // namespace sasq
