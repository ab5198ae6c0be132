#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace steglab {

// Shared worker pool for parallel_for. Every output element is produced by a
// single task with a fixed serial inner loop, so results are bit-identical
// for any worker count. STEGLAB_THREADS overrides the detected core count.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(i) for i in [begin, end), partitioned into contiguous chunks.
    void parallel_for(std::int64_t begin, std::int64_t end,
                      const std::function<void(std::int64_t)>& fn) {
        std::int64_t count = end - begin;
        if (count <= 0) return;
        int nthreads = size();
        if (nthreads == 1 || count == 1) {
            for (std::int64_t i = begin; i < end; ++i) fn(i);
            return;
        }
        int chunks = static_cast<int>(std::min<std::int64_t>(nthreads, count));
        std::int64_t base = count / chunks, rem = count % chunks;
        {
            std::unique_lock<std::mutex> lock(mu_);
            job_ = &fn;
            chunk_begin_.assign(chunks, 0);
            chunk_end_.assign(chunks, 0);
            std::int64_t pos = begin;
            for (int c = 0; c < chunks; ++c) {
                std::int64_t len = base + (c < rem ? 1 : 0);
                chunk_begin_[c] = pos;
                chunk_end_[c] = pos + len;
                pos += len;
            }
            next_chunk_ = 1;  // chunk 0 runs on the calling thread
            pending_ = chunks - 1;
            ++generation_;
        }
        cv_.notify_all();
        for (std::int64_t i = chunk_begin_[0]; i < chunk_end_[0]; ++i) fn(i);
        std::unique_lock<std::mutex> lock(mu_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

  private:
    ThreadPool() {
        int n = 0;
        if (const char* env = std::getenv("STEGLAB_THREADS")) n = std::atoi(env);
        if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        for (int i = 0; i < n - 1; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::int64_t)>* job = nullptr;
            std::int64_t b = 0, e = 0;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                while (true) {
                    if (next_chunk_ >= static_cast<int>(chunk_begin_.size())) break;
                    int c = next_chunk_++;
                    b = chunk_begin_[c];
                    e = chunk_end_[c];
                    job = job_;
                    lock.unlock();
                    for (std::int64_t i = b; i < e; ++i) (*job)(i);
                    lock.lock();
                    if (--pending_ == 0) done_cv_.notify_all();
                }
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(std::int64_t)>* job_ = nullptr;
    std::vector<std::int64_t> chunk_begin_, chunk_end_;
    int next_chunk_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

inline void parallel_for(std::int64_t begin, std::int64_t end,
                         const std::function<void(std::int64_t)>& fn) {
    ThreadPool::instance().parallel_for(begin, end, fn);
}

}  // namespace steglab
