#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mpec::num {

// Dense row-major matrix of doubles. Every tensor in the library is rank 2;
// scalars are 1x1 and vectors are Nx1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> values);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }
  const double& operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double item() const;

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * shape_[1], shape_[1]};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_{0, 0};
  std::vector<double> data_;
};

}  // namespace mpec::num
