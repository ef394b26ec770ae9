#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace streamnet {

/// Number of worker threads compute kernels may use. Resolved once from the
/// STREAMNET_THREADS environment variable; 0 or unset means one worker per
/// hardware thread.
inline std::size_t worker_count() {
  static const std::size_t count = [] {
    std::size_t n = 0;
    if (const char* env = std::getenv("STREAMNET_THREADS")) {
      n = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    }
    if (n == 0) {
      n = std::thread::hardware_concurrency();
      if (n == 0) n = 1;
    }
    return n;
  }();
  return count;
}

namespace detail {

/// Persistent pool running indexed tasks. Work is split into contiguous
/// index ranges, so any cross-task data must already be disjoint per index;
/// under that contract results do not depend on the worker count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(worker_count());
    return pool;
  }

  void run(std::size_t task_count, const std::function<void(std::size_t)>& task) {
    if (task_count == 0) return;
    // Nested parallel_for (a kernel inside an already-parallel task) runs
    // inline: the outer level owns the workers.
    if (threads_.empty() || task_count == 1 || inside_task()) {
      for (std::size_t i = 0; i < task_count; ++i) task(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mutex_);
      task_ = &task;
      task_count_ = task_count;
      next_index_.store(0, std::memory_order_relaxed);
      pending_ = threads_.size();
      ++generation_;
    }
    cv_.notify_all();
    work(task_count, task);  // the calling thread participates
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    task_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  explicit ThreadPool(std::size_t worker_total) {
    // worker_total includes the caller; spawn the rest.
    for (std::size_t i = 1; i < worker_total; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t)>* task = nullptr;
      std::size_t count = 0;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        task = task_;
        count = task_count_;
      }
      if (task) work(count, *task);
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  static bool& inside_task_flag() {
    thread_local bool flag = false;
    return flag;
  }

  static bool inside_task() { return inside_task_flag(); }

  void work(std::size_t count, const std::function<void(std::size_t)>& task) {
    inside_task_flag() = true;
    for (;;) {
      std::size_t i = next_index_.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) break;
      task(i);
    }
    inside_task_flag() = false;
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t task_count_ = 0;
  std::atomic<std::size_t> next_index_{0};
  std::size_t pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

/// Runs task(i) for i in [0, task_count). Tasks must write disjoint outputs;
/// reductions across tasks are the caller's job and must be ordered by index,
/// never by completion time.
inline void parallel_for(std::size_t task_count,
                         const std::function<void(std::size_t)>& task) {
  detail::ThreadPool::instance().run(task_count, task);
}

}  // namespace streamnet
