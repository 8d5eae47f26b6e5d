#include "qrec/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace qrec {

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : rows_(rows),
      cols_(cols),
      data_(std::make_shared<std::vector<double>>(rows * cols, 0.0)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols) {
  if (data.size() != rows * cols) {
    throw std::invalid_argument("tensor data length does not match shape");
  }
  data_ = std::make_shared<std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double v) { return Tensor(1, 1, {v}); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor(rows, cols);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, v));
}

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(1, n, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  auto& d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows_ || c >= cols_) throw std::out_of_range("tensor index");
  return (*data_)[r * cols_ + c];
}

void Tensor::set(std::size_t r, std::size_t c, double v) {
  if (r >= rows_ || c >= cols_) throw std::out_of_range("tensor index");
  mutable_data()[r * cols_ + c] = v;
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
  return (*data_)[0];
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

std::vector<double>& Tensor::mutable_data() {
  if (!data_) data_ = std::make_shared<std::vector<double>>(rows_ * cols_, 0.0);
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return *data_;
}

bool Tensor::all_finite() const {
  for (double v : data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bitwise_equal(const Tensor& o) const {
  if (!same_shape(o)) return false;
  if (size() == 0) return true;
  return std::memcmp(data().data(), o.data().data(), size() * sizeof(double)) == 0;
}

}  // namespace qrec
