#include "massub/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

namespace massub {
namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail(const std::string& path, std::size_t line, const std::string& what) {
  throw InputError(path + ":" + std::to_string(line) + ": " + what);
}

double parse_field(std::string_view field, const std::string& path, std::size_t line) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    fail(path, line, "'" + std::string(field) + "' is not a number");
  }
  if (!std::isfinite(v)) fail(path, line, "non-finite value '" + std::string(field) + "'");
  return v;
}

}  // namespace

namespace {

struct Header {
  std::size_t columns = 0;
  std::size_t response_col = 0;
  std::vector<std::string> covariates;
};

Header parse_header(const std::string& path, const std::string& response) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": file is empty, expected a header line");
  const auto names = split(trim(line));
  Header h;
  h.columns = names.size();
  bool found = false;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const std::string name(trim(names[c]));
    if (name.empty()) fail(path, 1, "empty column name in header");
    if (name == response) {
      if (found) fail(path, 1, "response column '" + response + "' appears twice");
      h.response_col = c;
      found = true;
    } else {
      h.covariates.push_back(name);
    }
  }
  if (!found) throw InputError(path + ": response column '" + response + "' not found in header");
  return h;
}

}  // namespace

std::vector<std::string> CsvSource::header_covariates(const std::string& path,
                                                      const std::string& response) {
  return parse_header(path, response).covariates;
}

CsvSource::CsvSource(std::string path, const std::string& response, const ConditionalModel* model)
    : path_(std::move(path)), model_(model) {
  Header h = parse_header(path_, response);
  columns_ = h.columns;
  response_col_ = h.response_col;
  covariates_ = std::move(h.covariates);
  if (model_ != nullptr && covariates_.size() != model_->covariate_dim()) {
    throw InputError(path_ + ": " + std::to_string(covariates_.size()) +
                     " covariate columns, model expects " + std::to_string(model_->covariate_dim()));
  }
  rows_ = read(nullptr);
  if (rows_ == 0) throw InputError(path_ + ": no data rows");
}

void CsvSource::scan(const BlockVisitor& visit, unsigned /*threads*/) const {
  if (read(&visit) != rows_) throw InputError(path_ + ": file changed between passes");
}

std::size_t CsvSource::read(const BlockVisitor* visit) const {
  std::ifstream in(path_);
  if (!in) throw InputError("cannot reopen data file '" + path_ + "'");
  std::string line;
  std::getline(in, line);

  const std::size_t p = covariates_.size();
  std::vector<double> x(kBlockRows * p), y(kBlockRows);
  std::size_t fill = 0, block = 0, row = 0, lineno = 1;

  auto flush = [&] {
    if (visit != nullptr && fill > 0) {
      RowBlock b;
      b.block_id = block;
      b.first_index = block * kBlockRows;
      b.count = fill;
      b.p = p;
      b.x = x.data();
      b.y = y.data();
      (*visit)(b);
    }
    ++block;
    fill = 0;
  };

  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = trim(line);
    if (view.empty()) fail(path_, lineno, "empty row");
    const auto fields = split(view);
    if (fields.size() != columns_) {
      fail(path_, lineno, "expected " + std::to_string(columns_) + " fields, found " +
                              std::to_string(fields.size()));
    }
    double* xr = x.data() + fill * p;
    std::size_t j = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const double v = parse_field(fields[c], path_, lineno);
      if (c == response_col_) {
        y[fill] = v;
      } else {
        xr[j++] = v;
      }
    }
    if (model_ != nullptr) {
      try {
        model_->check_observation({std::span<const double>(xr, p), y[fill]});
      } catch (const InputError& e) {
        fail(path_, lineno, e.what());
      }
    }
    ++row;
    if (++fill == kBlockRows) flush();
  }
  if (in.bad()) throw InputError("read error on '" + path_ + "'");
  flush();
  ++passes_;
  return row;
}

}  // namespace massub
