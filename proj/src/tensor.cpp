#include "mpec/num/tensor.hpp"

#include <cmath>

#include "mpec/errors.hpp"

namespace mpec::num {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : shape_{rows, cols}, data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(n, 1, std::move(values));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Tensor(0, 0);
  Tensor t(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != t.cols()) throw ShapeError("ragged rows");
    for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) = rows[r][c];
  }
  return t;
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar " + shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  return "[" + std::to_string(shape_[0]) + "x" + std::to_string(shape_[1]) +
         "]";
}

}  // namespace mpec::num
