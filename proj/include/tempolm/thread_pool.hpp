#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tempolm {

/// Fork-join worker pool used for data-parallel loops.
///
/// Work is always split by a static partition of the index range, so every
/// output element is computed by exactly one task in a fixed order and
/// results are bit-identical for any thread count (no cross-thread
/// floating-point reductions happen inside parallel_for).
class ThreadPool {
public:
    explicit ThreadPool(unsigned n_threads) { start(n_threads); }
    ~ThreadPool() { stop(); }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    unsigned size() const { return static_cast<unsigned>(workers_.size()) + 1; }

    /// Run fn(begin, end) over [0,n) split into contiguous chunks.
    /// The calling thread participates; returns when all chunks are done.
    void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        if (n == 0) return;
        const std::size_t parts = std::min<std::size_t>(size(), n);
        if (parts <= 1) {
            fn(0, n);
            return;
        }
        const std::size_t chunk = (n + parts - 1) / parts;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            job_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            next_part_ = 1; // part 0 runs on the caller
            parts_total_ = parts;
            parts_done_ = 0;
            ++generation_;
        }
        cv_work_.notify_all();
        fn(0, std::min(chunk, n));
        finish_part();
        std::unique_lock<std::mutex> lock(mutex_);
        cv_done_.wait(lock, [&] { return parts_done_ == parts_total_; });
        job_ = nullptr;
    }

private:
    void start(unsigned n_threads) {
        unsigned extra = n_threads > 1 ? n_threads - 1 : 0;
        workers_.reserve(extra);
        for (unsigned i = 0; i < extra; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void stop() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        cv_work_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t, std::size_t)>* job = nullptr;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_work_.wait(lock, [&] { return stopping_ || (job_ && generation_ != seen); });
                if (stopping_) return;
                seen = generation_;
                job = job_;
            }
            for (;;) {
                std::size_t part;
                {
                    std::unique_lock<std::mutex> lock(mutex_);
                    if (!job_ || generation_ != seen || next_part_ >= parts_total_) break;
                    part = next_part_++;
                }
                std::size_t lo = part * job_chunk_;
                std::size_t hi = std::min(lo + job_chunk_, job_n_);
                if (lo < hi) (*job)(lo, hi);
                finish_part();
            }
        }
    }

    void finish_part() {
        std::unique_lock<std::mutex> lock(mutex_);
        if (++parts_done_ == parts_total_) cv_done_.notify_all();
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
    std::size_t job_n_ = 0, job_chunk_ = 0;
    std::size_t next_part_ = 0, parts_total_ = 0, parts_done_ = 0;
    std::uint64_t generation_ = 0;
    bool stopping_ = false;
};

/// Process-wide pool. Thread count can be pinned before first use via
/// set_global_threads (or the TEMPOLM_THREADS environment variable read by
/// the CLI); defaults to the hardware concurrency.
ThreadPool& global_pool();

inline unsigned& global_thread_request() {
    static unsigned n = 0; // 0 = auto
    return n;
}

inline void set_global_threads(unsigned n) { global_thread_request() = n; }

inline ThreadPool& global_pool() {
    static ThreadPool pool([] {
        unsigned n = global_thread_request();
        if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
        return n;
    }());
    return pool;
}

/// Convenience wrapper over the global pool.
template <class Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
    const std::function<void(std::size_t, std::size_t)> f = std::forward<Fn>(fn);
    global_pool().parallel_for(n, f);
}

} // namespace tempolm
