#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace qrec {

/// Dense row-major matrix of doubles. Copies share storage; mutation
/// detaches (copy-on-write), so values recorded on a tape stay stable
/// even when the caller keeps editing its own handle.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double v);
  static Tensor row(std::vector<double> v);
  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double at(std::size_t r, std::size_t c) const;
  void set(std::size_t r, std::size_t c, double v);
  double item() const;  // value of a 1x1 tensor

  std::span<const double> data() const;
  /// Mutable access; detaches from shared storage first.
  std::vector<double>& mutable_data();

  bool all_finite() const;
  bool bitwise_equal(const Tensor& o) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::shared_ptr<std::vector<double>> data_;
};

}  // namespace qrec
