#pragma once

#include "massub/dataset.hpp"
#include "massub/model.hpp"

#include <string>
#include <vector>

namespace massub {

/// Streaming CSV record source. The first line is a header; the response column
/// is named, every other column is a covariate in header order. Each scan re-reads
/// the file block by block, so memory does not grow with the row count.
///
/// Malformed rows (wrong field count, non-numeric or non-finite values, or a
/// response the model rejects) throw InputError with the line number.
class CsvSource final : public RecordSource {
 public:
  /// Reads the file once to validate it and count rows. `model` may be null.
  CsvSource(std::string path, const std::string& response, const ConditionalModel* model = nullptr);

  std::size_t size() const override { return rows_; }
  std::size_t covariate_dim() const override { return covariates_.size(); }
  std::size_t block_count() const override { return (rows_ + kBlockRows - 1) / kBlockRows; }
  /// Blocks are delivered in order on the calling thread.
  void scan(const BlockVisitor& visit, unsigned threads) const override;

  /// Covariate column names from the header alone; validates the response column.
  static std::vector<std::string> header_covariates(const std::string& path,
                                                    const std::string& response);

  const std::vector<std::string>& covariate_names() const noexcept { return covariates_; }
  /// Number of complete passes over the file so far, including the validating one.
  std::size_t passes() const noexcept { return passes_; }

 private:
  std::size_t read(const BlockVisitor* visit) const;

  std::string path_;
  const ConditionalModel* model_ = nullptr;
  std::size_t response_col_ = 0;
  std::size_t columns_ = 0;
  std::vector<std::string> covariates_;
  std::size_t rows_ = 0;
  mutable std::size_t passes_ = 0;
};

}  // namespace massub
