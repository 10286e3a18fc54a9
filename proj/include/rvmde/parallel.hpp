#ifndef RVMDE_PARALLEL_HPP
#define RVMDE_PARALLEL_HPP

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rvmde {

/// Static-partition parallel loop over [0, n). Every index is computed by
/// exactly one worker with a fixed inner order, so results are bit-identical
/// for any thread count; threading only affects wall time.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void set_threads(int n) {
    std::lock_guard<std::mutex> outer(api_mutex_);
    if (n < 1) n = 1;
    if (n == threads_requested_) return;
    stop_workers();
    threads_requested_ = n;
    start_workers();
  }

  int threads() const { return threads_requested_; }

  /// fn receives a contiguous index range [begin, end).
  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    std::lock_guard<std::mutex> outer(api_mutex_);
    const int workers = static_cast<int>(workers_.size());
    if (workers == 0 || n == 1) {
      fn(0, n);
      return;
    }
    const int parts = static_cast<int>(std::min<int64_t>(workers + 1, n));
    const int64_t chunk = (n + parts - 1) / parts;
    {
      std::lock_guard<std::mutex> lk(mutex_);
      job_fn_ = &fn;
      job_n_ = n;
      job_chunk_ = chunk;
      job_parts_ = parts;
      next_part_ = 1;  // part 0 runs on the calling thread
      pending_parts_ = parts - 1;
      ++generation_;
    }
    cv_.notify_all();
    fn(0, std::min<int64_t>(chunk, n));
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [&] { return pending_parts_ == 0; });
    job_fn_ = nullptr;
  }

  ~ThreadPool() { stop_workers(); }

 private:
  ThreadPool() {
    threads_requested_ = static_cast<int>(std::thread::hardware_concurrency());
    if (threads_requested_ < 1) threads_requested_ = 1;
    start_workers();
  }

  void start_workers() {
    stopping_ = false;
    for (int i = 0; i < threads_requested_ - 1; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stopping_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& w : workers_) {
      if (w.joinable()) w.join();
    }
    workers_.clear();
  }

  void worker_loop() {
    uint64_t seen_generation = 0;
    while (true) {
      const std::function<void(int64_t, int64_t)>* fn = nullptr;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [&] { return stopping_ || (job_fn_ != nullptr && generation_ != seen_generation); });
        if (stopping_) return;
        seen_generation = generation_;
        fn = job_fn_;
      }
      while (true) {
        int part;
        {
          std::lock_guard<std::mutex> lk(mutex_);
          if (job_fn_ != fn || next_part_ >= job_parts_) break;
          part = next_part_++;
        }
        const int64_t begin = static_cast<int64_t>(part) * job_chunk_;
        const int64_t end = std::min<int64_t>(begin + job_chunk_, job_n_);
        if (begin < end) (*fn)(begin, end);
        {
          std::lock_guard<std::mutex> lk(mutex_);
          if (--pending_parts_ == 0) done_cv_.notify_all();
        }
      }
    }
  }

  std::mutex api_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> workers_;
  int threads_requested_ = 1;
  bool stopping_ = false;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int64_t job_chunk_ = 0;
  int job_parts_ = 0;
  int next_part_ = 0;
  int pending_parts_ = 0;
  uint64_t generation_ = 0;
};

inline void set_num_threads(int n) { ThreadPool::instance().set_threads(n); }

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace rvmde

#endif  // RVMDE_PARALLEL_HPP
