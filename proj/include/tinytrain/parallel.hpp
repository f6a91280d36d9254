#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tinytrain {

// Work is always split into this fixed number of chunks, independent of how
// many worker threads exist. Reductions that combine per-chunk partials in
// chunk order therefore produce bit-identical results for any thread count.
inline constexpr std::size_t kParallelChunks = 8;

namespace detail {

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Runs fn(chunk) for chunk in [0, n_chunks); blocks until all complete.
  // Nested calls from inside a chunk run serially.
  void run(std::size_t n_chunks, const std::function<void(std::size_t)>& fn) {
    if (n_chunks == 0) return;
    if (workers_.empty() || busy_) {
      busy_ = true;
      for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
      busy_ = false;
      return;
    }
    busy_ = true;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      job_ = fn;
      next_ = 0;
      total_ = n_chunks;
      pending_ = n_chunks;
      ++generation_;
    }
    cv_.notify_all();
    work();
    {
      std::unique_lock<std::mutex> lock(mutex_);
      done_cv_.wait(lock, [this] { return pending_ == 0; });
      job_ = nullptr;
    }
    busy_ = false;
  }

 private:
  ThreadPool() {
    std::size_t n = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("TINYTRAIN_THREADS")) {
      long v = std::atol(env);
      if (v >= 1) n = static_cast<std::size_t>(v);
    }
    if (n == 0) n = 1;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      busy_ = true;
      work();
      busy_ = false;
    }
  }

  // Chunks are claimed under the mutex; a handful of claims per region makes
  // the contention irrelevant. job_ stays stable while any chunk is pending.
  void work() {
    for (;;) {
      std::size_t c;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        if (next_ >= total_) break;
        c = next_++;
      }
      job_(c);
      {
        std::unique_lock<std::mutex> lock(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::function<void(std::size_t)> job_;
  std::size_t next_ = 0;
  std::size_t total_ = 0;
  std::size_t pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  static thread_local bool busy_;
};

inline thread_local bool ThreadPool::busy_ = false;

}  // namespace detail

// Partitions [0, n_items) into kParallelChunks contiguous ranges and runs
// fn(chunk_index, begin, end) for each, possibly concurrently. Empty ranges
// are skipped. fn must write only chunk-owned state.
template <class Fn>
void parallel_chunks(std::size_t n_items, Fn&& fn) {
  if (n_items == 0) return;
  std::size_t per = (n_items + kParallelChunks - 1) / kParallelChunks;
  detail::ThreadPool::instance().run(kParallelChunks, [&](std::size_t c) {
    std::size_t begin = c * per;
    std::size_t end = begin + per < n_items ? begin + per : n_items;
    if (begin < end) fn(c, begin, end);
  });
}

}  // namespace tinytrain
