#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sparsemask {

// Worker pool for data-parallel loops. Work is split by item index and any
// reduction happens in index order on the caller side, so results do not
// depend on the thread count. SPARSEMASK_THREADS caps the pool; the default
// is 1 (fully single-threaded).
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool(threads_from_env());
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(i) for i in [begin, end). Blocks until every item is done.
    void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
        const int count = end - begin;
        if (count <= 0) return;
        if (workers_.empty() || count == 1) {
            for (int i = begin; i < end; ++i) fn(i);
            return;
        }
        std::unique_lock<std::mutex> lock(mu_);
        job_ = &fn;
        job_begin_ = begin;
        job_end_ = end;
        next_ = begin;
        pending_ = count;
        ++generation_;
        lock.unlock();
        wake_.notify_all();

        // The caller participates as a worker.
        run_items();

        std::unique_lock<std::mutex> wait_lock(mu_);
        done_.wait(wait_lock, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
        }
        wake_.notify_all();
        for (auto& t : workers_) t.join();
    }

private:
    explicit ThreadPool(int threads) {
        for (int i = 1; i < threads; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    static int threads_from_env() {
        const char* env = std::getenv("SPARSEMASK_THREADS");
        if (!env) return 1;
        int v = std::atoi(env);
        if (v < 1) v = 1;
        const int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw > 0 && v > 4 * hw) v = 4 * hw;
        return v;
    }

    void run_items() {
        while (true) {
            int i;
            {
                std::lock_guard<std::mutex> lock(mu_);
                if (!job_ || next_ >= job_end_) return;
                i = next_++;
            }
            (*job_)(i);
            {
                std::lock_guard<std::mutex> lock(mu_);
                if (--pending_ == 0) done_.notify_all();
            }
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        while (true) {
            {
                std::unique_lock<std::mutex> lock(mu_);
                wake_.wait(lock, [this, seen] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            run_items();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable wake_;
    std::condition_variable done_;
    const std::function<void(int)>* job_ = nullptr;
    int job_begin_ = 0, job_end_ = 0, next_ = 0, pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

inline void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
    ThreadPool::instance().parallel_for(begin, end, fn);
}

}  // namespace sparsemask
