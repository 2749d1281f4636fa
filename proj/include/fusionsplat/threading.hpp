#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fsplat {

// Minimal persistent worker pool. Jobs are indexed 0..n-1 and may run in any
// order on any thread; callers that need determinism must write results into
// per-job slots and combine them in job order afterwards (see
// parallel_blocks). A pool with one thread runs everything on the caller.
class ThreadPool {
 public:
  explicit ThreadPool(int threads = 1);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int thread_count() const { return threads_; }

  // Runs fn(job) for job in [0, num_jobs), blocking until all complete.
  // The first exception thrown by any job is rethrown on the caller.
  void run(int num_jobs, const std::function<void(int)>& fn);

 private:
  void worker_loop();

  int threads_ = 1;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  const std::function<void(int)>* job_fn_ = nullptr;
  int next_job_ = 0;
  int total_jobs_ = 0;
  int pending_jobs_ = 0;
  std::exception_ptr first_error_;
  bool stopping_ = false;
};

// Splits [0, n) into fixed-size blocks and runs body(block_index, begin, end)
// for each, via the pool when given. The block layout depends only on n and
// block_size, never on the thread count, so per-block partial results can be
// reduced in block order to get bit-identical sums for any pool size.
void parallel_blocks(
    ThreadPool* pool, size_t n, size_t block_size,
    const std::function<void(size_t, size_t, size_t)>& body);

inline size_t block_count(size_t n, size_t block_size) {
  return (n + block_size - 1) / block_size;
}

}  // namespace fsplat
