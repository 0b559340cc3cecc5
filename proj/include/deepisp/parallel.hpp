#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace deepisp {

/// Static-partition parallel_for. Each index is processed by exactly one
/// worker with a fixed internal order, so results are bit-identical for any
/// thread count. Falls back to the calling thread for small ranges.
namespace detail {

class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    int workers() const { return static_cast<int>(threads_.size()); }

    // Runs fn(begin, end) on [0, n) split into one contiguous chunk per worker
    // plus one for the caller.
    void run(int n, const std::function<void(int, int)>& fn) {
        int parts = workers() + 1;
        std::unique_lock<std::mutex> lock(mutex_);
        job_ = &fn;
        job_n_ = n;
        job_parts_ = parts;
        next_part_ = 1;  // part 0 belongs to the caller
        pending_ = workers();
        ++generation_;
        lock.unlock();
        cv_.notify_all();

        run_part(fn, n, parts, 0);

        std::unique_lock<std::mutex> wait_lock(mutex_);
        done_cv_.wait(wait_lock, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

    static void run_part(const std::function<void(int, int)>& fn, int n, int parts, int part) {
        int chunk = (n + parts - 1) / parts;
        int begin = part * chunk;
        int end = std::min(n, begin + chunk);
        if (begin < end) fn(begin, end);
    }

private:
    Pool() {
        int n = 0;
        if (const char* env = std::getenv("DEEPISP_THREADS"))
            n = std::atoi(env);
        else
            n = static_cast<int>(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        for (int i = 0; i < n - 1; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lock(mutex_);
            cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            const std::function<void(int, int)>* fn = job_;
            int n = job_n_, parts = job_parts_;
            int part = next_part_++;
            lock.unlock();

            run_part(*fn, n, parts, part);

            lock.lock();
            if (--pending_ == 0) done_cv_.notify_one();
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int, int)>* job_ = nullptr;
    int job_n_ = 0, job_parts_ = 0, next_part_ = 0, pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace detail

namespace detail {
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

template <typename Fn>
void parallel_for(int n, int grain, Fn&& fn) {
    auto& pool = detail::Pool::instance();
    if (n <= 0) return;
    // Nested calls run serially; only leaf loops are parallelized.
    if (pool.workers() == 0 || n < 2 * grain || detail::in_parallel_region()) {
        fn(0, n);
        return;
    }
    detail::in_parallel_region() = true;
    std::function<void(int, int)> wrapped = [&fn](int b, int e) {
        detail::in_parallel_region() = true;
        fn(b, e);
    };
    pool.run(n, wrapped);
    detail::in_parallel_region() = false;
}

}  // namespace deepisp
