#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace convkit {

// Minimal fork-join pool. parallel_for partitions [begin,end) into
// fixed per-worker blocks, so the partition depends only on the configured
// thread count, never on scheduling. threads()==1 runs inline.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int threads() const { return n_threads_; }

  void set_threads(int n) {
    std::lock_guard<std::mutex> api_lock(api_mu_);
    if (n < 1) n = 1;
    if (n == n_threads_) return;
    stop_workers();
    n_threads_ = n;
    if (n_threads_ > 1) start_workers(n_threads_ - 1);
  }

  void parallel_for(std::int64_t begin, std::int64_t end,
                    const std::function<void(std::int64_t, std::int64_t)>& fn) {
    std::int64_t count = end - begin;
    if (count <= 0) return;
    if (in_job()) {  // nested calls run inline
      fn(begin, end);
      return;
    }
    std::lock_guard<std::mutex> api_lock(api_mu_);
    int parts = n_threads_;
    if (parts <= 1 || count == 1) {
      fn(begin, end);
      return;
    }
    if (parts > count) parts = static_cast<int>(count);
    std::int64_t chunk = (count + parts - 1) / parts;
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_fn_ = &fn;
      job_begin_ = begin;
      job_end_ = end;
      job_chunk_ = chunk;
      job_parts_ = parts;
      pending_ = parts - 1;  // workers take parts 1..parts-1
      ++epoch_;
    }
    cv_.notify_all();
    in_job() = true;
    fn(begin, std::min(end, begin + chunk));  // part 0 on the caller
    in_job() = false;
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

  ~ThreadPool() { stop_workers(); }

 private:
  ThreadPool() = default;

  void start_workers(int n) {
    for (int w = 1; w <= n; ++w) {
      workers_.emplace_back([this, w] { worker_loop(w); });
    }
  }

  void stop_workers() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stopping_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    std::unique_lock<std::mutex> lk(mu_);
    stopping_ = false;
  }

  static bool& in_job() {
    thread_local bool flag = false;
    return flag;
  }

  void worker_loop(int part_index) {
    std::uint64_t seen = 0;
    while (true) {
      const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
      std::int64_t b = 0, e = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || epoch_ != seen; });
        seen = epoch_;
        if (stopping_) return;
        if (!job_fn_ || part_index >= job_parts_) continue;
        fn = job_fn_;
        b = job_begin_ + part_index * job_chunk_;
        e = std::min(job_end_, b + job_chunk_);
      }
      in_job() = true;
      if (b < e) (*fn)(b, e);
      in_job() = false;
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex api_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> workers_;
  int n_threads_ = 1;
  bool stopping_ = false;
  std::uint64_t epoch_ = 0;
  const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
  std::int64_t job_begin_ = 0, job_end_ = 0, job_chunk_ = 0;
  int job_parts_ = 1;
  int pending_ = 0;
};

inline void set_num_threads(int n) { ThreadPool::instance().set_threads(n); }
inline int num_threads() { return ThreadPool::instance().threads(); }

inline void parallel_for(std::int64_t begin, std::int64_t end,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
  ThreadPool::instance().parallel_for(begin, end, fn);
}

// Per-index convenience wrapper.
inline void parallel_for(std::int64_t begin, std::int64_t end,
                         const std::function<void(std::int64_t)>& fn) {
  ThreadPool::instance().parallel_for(begin, end,
                                      [&fn](std::int64_t b, std::int64_t e) {
                                        for (std::int64_t i = b; i < e; ++i) fn(i);
                                      });
}

}  // namespace convkit
