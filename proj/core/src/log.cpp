#include "smo/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace smo::log {
namespace {
std::atomic<int> g_verbosity{1};
std::mutex g_mu;
}  // namespace

void set_verbosity(int level) { g_verbosity.store(level); }
int verbosity() { return g_verbosity.load(); }

void warn(const std::string& msg) {
  if (g_verbosity.load() < 1) return;
  std::lock_guard<std::mutex> lk(g_mu);
  std::fprintf(stderr, "[smo] warning: %s\n", msg.c_str());
}

void info(const std::string& msg) {
  if (g_verbosity.load() < 2) return;
  std::lock_guard<std::mutex> lk(g_mu);
  std::fprintf(stderr, "[smo] %s\n", msg.c_str());
}

}  // namespace smo::log
