#include "massub/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace massub {

unsigned default_threads() noexcept {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = count;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

Dataset::Dataset(std::size_t p, std::vector<double> x, std::vector<double> y)
    : p_(p), x_(std::move(x)), y_(std::move(y)) {
  if (x_.size() != p_ * y_.size()) {
    throw InputError("Dataset: covariate buffer size does not match rows x p");
  }
}

std::size_t Dataset::block_count() const { return (size() + kBlockRows - 1) / kBlockRows; }

void Dataset::scan(const BlockVisitor& visit, unsigned threads) const {
  parallel_for(block_count(), threads, [&](std::size_t b) {
    RowBlock block;
    block.block_id = b;
    block.first_index = b * kBlockRows;
    block.count = std::min(kBlockRows, size() - block.first_index);
    block.p = p_;
    block.x = x_.data() + block.first_index * p_;
    block.y = y_.data() + block.first_index;
    visit(block);
  });
}

ExcludingSource::ExcludingSource(const RecordSource& base, std::vector<std::size_t> excluded_sorted)
    : base_(base), excluded_(std::move(excluded_sorted)) {
  if (!std::is_sorted(excluded_.begin(), excluded_.end()) ||
      std::adjacent_find(excluded_.begin(), excluded_.end()) != excluded_.end()) {
    throw InputError("ExcludingSource: excluded indices must be strictly increasing");
  }
  if (!excluded_.empty() && excluded_.back() >= base_.size()) {
    throw InputError("ExcludingSource: excluded index out of range");
  }
  const std::size_t n = base_.size();
  const std::size_t blocks = (n + kBlockRows - 1) / kBlockRows;
  first_segment_.reserve(blocks + 1);
  auto skip = excluded_.begin();
  for (std::size_t b = 0; b < blocks; ++b) {
    first_segment_.push_back(segments_.size());
    const std::size_t lo = b * kBlockRows;
    const std::size_t hi = std::min(n, lo + kBlockRows);
    std::size_t start = lo;
    for (; skip != excluded_.end() && *skip < hi; ++skip) {
      if (*skip > start) segments_.push_back({start - lo, *skip - lo});
      start = *skip + 1;
    }
    if (hi > start) segments_.push_back({start - lo, hi - lo});
  }
  first_segment_.push_back(segments_.size());
}

void ExcludingSource::scan(const BlockVisitor& visit, unsigned threads) const {
  base_.scan(
      [&](const RowBlock& block) {
        const std::size_t b = block.block_id;
        const std::size_t expected = std::min(kBlockRows, base_.size() - b * kBlockRows);
        if (b + 1 >= first_segment_.size() || block.indices != nullptr ||
            block.first_index != b * kBlockRows || block.count != expected) {
          throw InputError("ExcludingSource: base source does not use the standard block layout");
        }
        for (std::size_t s = first_segment_[b]; s < first_segment_[b + 1]; ++s) {
          const Segment& seg = segments_[s];
          RowBlock run;
          run.block_id = s;
          run.first_index = block.first_index + seg.begin;
          run.count = seg.end - seg.begin;
          run.p = block.p;
          run.x = block.x + seg.begin * block.p;
          run.y = block.y + seg.begin;
          visit(run);
        }
      },
      threads);
}

}  // namespace massub
