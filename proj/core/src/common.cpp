#include "pcadv/common.hpp"

#include <algorithm>

namespace pcadv {

const char* to_string(Family f) { return f == Family::vision ? "vision" : "caption"; }
const char* to_string(Setting s) { return s == Setting::untargeted ? "untargeted" : "targeted"; }

Family family_from_string(const std::string& s) {
  if (s == "vision") return Family::vision;
  if (s == "caption") return Family::caption;
  throw std::invalid_argument("unknown attack family: " + s);
}

Setting setting_from_string(const std::string& s) {
  if (s == "untargeted") return Setting::untargeted;
  if (s == "targeted") return Setting::targeted;
  throw std::invalid_argument("unknown attack setting: " + s);
}

int default_thread_count() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(size_t n, int threads, const std::function<void(size_t, size_t)>& chunk_fn) {
  if (n == 0) return;
  threads = std::max(1, threads);
  size_t nchunks = std::min<size_t>(static_cast<size_t>(threads), n);
  if (nchunks <= 1) {
    chunk_fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nchunks);
  size_t base = n / nchunks, rem = n % nchunks, begin = 0;
  for (size_t c = 0; c < nchunks; ++c) {
    size_t len = base + (c < rem ? 1 : 0);
    pool.emplace_back(chunk_fn, begin, begin + len);
    begin += len;
  }
  for (auto& t : pool) t.join();
}

}  // namespace pcadv
