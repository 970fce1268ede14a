#include "pedsleep/parallel.hpp"

#include <atomic>

namespace pedsleep {

namespace {
std::atomic<int> g_workers{static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))};
}  // namespace

int worker_count() { return g_workers.load(); }
void set_worker_count(int n) { g_workers.store(std::max(1, n)); }

}  // namespace pedsleep
