#include "gssplat/core.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace gssplat {

namespace {

std::atomic<int> g_threads{-1};  // -1 = unresolved

int resolve_auto() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("GSSPLAT_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) hw = std::min(hw, cap);
    }
    return hw;
}

}  // namespace

void set_worker_threads(int n) { g_threads.store(n <= 0 ? resolve_auto() : n); }

int worker_threads() {
    int n = g_threads.load();
    if (n <= 0) {
        n = resolve_auto();
        g_threads.store(n);
    }
    return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int threads = std::min<int64_t>(worker_threads(), n);
    if (threads <= 1) {
        fn(0, n);
        return;
    }
    int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (int t = 1; t < threads; ++t) {
        int64_t b = t * chunk;
        int64_t e = std::min<int64_t>(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, std::min<int64_t>(n, chunk));
    for (auto& th : pool) th.join();
}

}  // namespace gssplat
