#include "xtf/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "xtf/errors.hpp"

namespace xtf {

int worker_count() {
  int n = 0;
  if (const char* env = std::getenv("XTF_THREADS"); env && *env) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("XTF_THREADS must be an integer, got '") + env + "'");
    }
    if (n < 0) throw ConfigError("XTF_THREADS must be >= 0");
  }
  if (n == 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(n, 1);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace xtf
