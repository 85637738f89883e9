#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fedirl {

/// Worker count: explicit request, else FEDIRL_THREADS, else hardware.
inline int worker_count(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("FEDIRL_THREADS")) {
        const int parsed = std::atoi(env);
        if (parsed > 0) return parsed;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Runs fn(i) for i in [0, count). Each index is processed exactly once and
/// callers store results by index, so the reduction order stays deterministic
/// regardless of scheduling. The first exception is rethrown.
template <typename F>
void parallel_for(int count, F&& fn, int threads = 0) {
    const int workers = std::min(worker_count(threads), std::max(count, 1));
    if (count <= 0) return;
    if (workers <= 1 || count == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace fedirl
