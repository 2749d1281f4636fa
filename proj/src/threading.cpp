#include "fusionsplat/threading.hpp"

namespace fsplat {

ThreadPool::ThreadPool(int threads) : threads_(threads < 1 ? 1 : threads) {
  for (int i = 1; i < threads_; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stopping_ = true;
  }
  cv_work_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop() {
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    cv_work_.wait(lk, [this] { return stopping_ || next_job_ < total_jobs_; });
    if (stopping_ && next_job_ >= total_jobs_) return;
    while (next_job_ < total_jobs_) {
      int job = next_job_++;
      lk.unlock();
      try {
        (*job_fn_)(job);
      } catch (...) {
        lk.lock();
        if (!first_error_) first_error_ = std::current_exception();
        if (--pending_jobs_ == 0) cv_done_.notify_all();
        continue;
      }
      lk.lock();
      if (--pending_jobs_ == 0) cv_done_.notify_all();
    }
  }
}

void ThreadPool::run(int num_jobs, const std::function<void(int)>& fn) {
  if (num_jobs <= 0) return;
  if (workers_.empty()) {
    for (int j = 0; j < num_jobs; ++j) fn(j);
    return;
  }
  std::unique_lock<std::mutex> lk(mu_);
  job_fn_ = &fn;
  next_job_ = 0;
  total_jobs_ = num_jobs;
  pending_jobs_ = num_jobs;
  first_error_ = nullptr;
  cv_work_.notify_all();
  // The caller participates too.
  while (next_job_ < total_jobs_) {
    int job = next_job_++;
    lk.unlock();
    try {
      fn(job);
    } catch (...) {
      lk.lock();
      if (!first_error_) first_error_ = std::current_exception();
      if (--pending_jobs_ == 0) cv_done_.notify_all();
      continue;
    }
    lk.lock();
    if (--pending_jobs_ == 0) cv_done_.notify_all();
  }
  cv_done_.wait(lk, [this] { return pending_jobs_ == 0; });
  job_fn_ = nullptr;
  total_jobs_ = 0;
  if (first_error_) std::rethrow_exception(first_error_);
}

void parallel_blocks(
    ThreadPool* pool, size_t n, size_t block_size,
    const std::function<void(size_t, size_t, size_t)>& body) {
  if (n == 0) return;
  size_t blocks = block_count(n, block_size);
  auto run_block = [&](int b) {
    size_t begin = static_cast<size_t>(b) * block_size;
    size_t end = begin + block_size < n ? begin + block_size : n;
    body(static_cast<size_t>(b), begin, end);
  };
  if (pool == nullptr || pool->thread_count() == 1 || blocks == 1) {
    for (size_t b = 0; b < blocks; ++b) run_block(static_cast<int>(b));
    return;
  }
  pool->run(static_cast<int>(blocks), run_block);
}

}  // namespace fsplat
