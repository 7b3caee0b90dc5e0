#pragma once

#include "massub/types.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace massub {

/// Rows per block. Fixed so that per-block reductions are independent of the thread count.
inline constexpr std::size_t kBlockRows = 4096;

/// A contiguous run of records. Covariates are row-major (count x p).
struct RowBlock {
  std::size_t block_id = 0;
  std::size_t first_index = 0;
  std::size_t count = 0;
  std::size_t p = 0;
  const double* x = nullptr;
  const double* y = nullptr;
  /// Record indices when the block is not a consecutive run; nullptr otherwise.
  const std::size_t* indices = nullptr;

  std::size_t index(std::size_t k) const noexcept {
    return indices != nullptr ? indices[k] : first_index + k;
  }
  Observation row(std::size_t k) const noexcept {
    return {std::span<const double>(x + k * p, p), y[k]};
  }
};

using BlockVisitor = std::function<void(const RowBlock&)>;

/// Re-scannable stream of records. Blocks carry dense, ordered ids in
/// [0, block_count()); a scan may deliver blocks concurrently when threads > 1,
/// and callers reduce per-block results in id order.
class RecordSource {
 public:
  virtual ~RecordSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t covariate_dim() const = 0;
  virtual std::size_t block_count() const = 0;
  virtual void scan(const BlockVisitor& visit, unsigned threads) const = 0;
};

/// Runs fn(i) for i in [0,count) across up to `threads` workers.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Default worker count: hardware concurrency, at least 1.
unsigned default_threads() noexcept;

/// In-memory dataset, row-major covariates.
class Dataset final : public RecordSource {
 public:
  Dataset() = default;
  Dataset(std::size_t p, std::vector<double> x, std::vector<double> y);

  std::size_t size() const override { return y_.size(); }
  std::size_t covariate_dim() const override { return p_; }
  std::size_t block_count() const override;
  void scan(const BlockVisitor& visit, unsigned threads) const override;

  Observation row(std::size_t i) const noexcept {
    return {std::span<const double>(x_.data() + i * p_, p_), y_[i]};
  }
  const std::vector<double>& x() const noexcept { return x_; }
  const std::vector<double>& y() const noexcept { return y_; }

 private:
  std::size_t p_ = 0;
  std::vector<double> x_;
  std::vector<double> y_;
};

/// View of a source with a sorted set of record indices removed. Each base block
/// is cut at the removed records into consecutive runs that point into the base
/// block's memory; every run is delivered as its own block with a dense id.
/// The base must deliver consecutive blocks of kBlockRows rows (the last may be short).
class ExcludingSource final : public RecordSource {
 public:
  ExcludingSource(const RecordSource& base, std::vector<std::size_t> excluded_sorted);

  std::size_t size() const override { return base_.size() - excluded_.size(); }
  std::size_t covariate_dim() const override { return base_.covariate_dim(); }
  std::size_t block_count() const override { return segments_.size(); }
  void scan(const BlockVisitor& visit, unsigned threads) const override;

  const std::vector<std::size_t>& excluded() const noexcept { return excluded_; }

 private:
  struct Segment {
    std::size_t begin = 0;  // offsets within the base block
    std::size_t end = 0;
  };

  const RecordSource& base_;
  std::vector<std::size_t> excluded_;
  std::vector<Segment> segments_;
  std::vector<std::size_t> first_segment_;  // per base block, size blocks + 1
};

}  // namespace massub
