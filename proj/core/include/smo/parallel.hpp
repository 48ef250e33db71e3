#pragma once

#include <algorithm>
#include <condition_variable>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace smo {

// Runs `work(task, scratch, result)` for task = 0..n_tasks-1 over at most
// `width` worker threads and invokes `commit(task, result)` exactly once per
// task in ascending task order, regardless of width or scheduling. With a
// fixed task decomposition the floating-point reduction order is therefore
// identical for every width, including width == 1.
//
// Each worker owns one Scratch for its lifetime, and Result buffers are
// recycled once committed, so steady-state allocation is proportional to the
// worker count rather than the task count.
template <typename Result, typename Scratch>
void ordered_parallel_run(int n_tasks, int width,
                          const std::function<Scratch()>& make_scratch,
                          const std::function<void(int, Scratch&, Result&)>& work,
                          const std::function<void(int, Result&)>& commit) {
  if (n_tasks <= 0) return;
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  width = std::max(1, std::min({width, hw, n_tasks}));

  if (width == 1) {
    Scratch scratch = make_scratch();
    Result result{};
    for (int t = 0; t < n_tasks; ++t) {
      work(t, scratch, result);
      commit(t, result);
    }
    return;
  }

  std::mutex mu;
  std::condition_variable cv;
  std::map<int, std::unique_ptr<Result>> done;
  std::vector<std::unique_ptr<Result>> spare;
  int next_claim = 0;
  int next_commit = 0;
  std::exception_ptr error;
  const int max_inflight = std::max(2 * width, 4);

  auto worker = [&] {
    std::unique_ptr<Scratch> scratch;
    try {
      scratch = std::make_unique<Scratch>(make_scratch());
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu);
      if (!error) error = std::current_exception();
      cv.notify_all();
      return;
    }
    for (;;) {
      int task;
      std::unique_ptr<Result> result;
      {
        std::lock_guard<std::mutex> lk(mu);
        if (error || next_claim >= n_tasks) return;
        task = next_claim++;
        if (!spare.empty()) {
          result = std::move(spare.back());
          spare.pop_back();
        }
      }
      if (!result) result = std::make_unique<Result>();
      try {
        work(task, *scratch, *result);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!error) error = std::current_exception();
        cv.notify_all();
        return;
      }
      std::unique_lock<std::mutex> lk(mu);
      cv.wait(lk, [&] { return error || task < next_commit + max_inflight; });
      if (error) return;
      done.emplace(task, std::move(result));
      // Whoever deposited the next task in order drains the ready prefix.
      while (!done.empty() && done.begin()->first == next_commit) {
        auto node = done.extract(done.begin());
        try {
          commit(node.key(), *node.mapped());
        } catch (...) {
          if (!error) error = std::current_exception();
          cv.notify_all();
          return;
        }
        spare.push_back(std::move(node.mapped()));
        ++next_commit;
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(width);
  for (int i = 0; i < width; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace smo
