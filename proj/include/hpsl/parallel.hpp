#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hpsl {

// Work-sharing pool for loops whose iterations write disjoint outputs.
// Every reduction in the toolkit is arranged so each output slot is owned by
// exactly one iteration (rows of an activation, channels of a weight
// gradient), which makes results bit-identical for any worker count.
class ThreadPool {
public:
    explicit ThreadPool(std::size_t workers = 0) {
        if (workers == 0) {
            workers = std::thread::hardware_concurrency();
            if (workers == 0) workers = 1;
        }
        workers_ = workers;
        for (std::size_t i = 0; i + 1 < workers_; ++i)
            threads_.emplace_back([this] { worker_loop_(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    std::size_t workers() const { return workers_; }

    // Runs fn(i) for i in [0, n). Iterations are claimed one index at a time
    // from an atomic cursor; fn must not touch state shared with other
    // indices except through disjoint writes. Returns only after every worker
    // has left the job, so fn's captures may live on the caller's stack.
    void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
        if (n == 0) return;
        if (workers_ == 1 || n == 1) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        std::unique_lock<std::mutex> lk(mu_);
        job_ = &fn;
        job_size_ = n;
        cursor_.store(0, std::memory_order_relaxed);
        pending_ = n;
        ++generation_;
        cv_.notify_all();
        lk.unlock();

        run_available_();

        lk.lock();
        done_cv_.wait(lk, [this] { return pending_ == 0 && in_flight_ == 0; });
        job_ = nullptr;
    }

private:
    void run_available_() {
        std::size_t n = job_size_;
        const std::function<void(std::size_t)>* fn = job_;
        for (;;) {
            std::size_t i = cursor_.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) break;
            (*fn)(i);
            if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard<std::mutex> lk(mu_);
                done_cv_.notify_all();
            }
        }
    }

    void worker_loop_() {
        std::uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lk(mu_);
            cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            if (job_ == nullptr) continue;
            ++in_flight_;
            lk.unlock();
            run_available_();
            lk.lock();
            --in_flight_;
            done_cv_.notify_all();
        }
    }

    std::size_t workers_ = 1;
    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t)>* job_ = nullptr;
    std::size_t job_size_ = 0;
    std::atomic<std::size_t> cursor_{0};
    std::atomic<std::size_t> pending_{0};
    std::size_t in_flight_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

// Convenience: sequential fallback when no pool is supplied.
inline void parallel_for(ThreadPool* pool, std::size_t n,
                         const std::function<void(std::size_t)>& fn) {
    if (pool != nullptr) {
        pool->for_each_index(n, fn);
    } else {
        for (std::size_t i = 0; i < n; ++i) fn(i);
    }
}

}  // namespace hpsl
