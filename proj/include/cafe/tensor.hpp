#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cafe/error.hpp"

namespace cafe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_numel(shape_), "tensor data size does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor reshaped(Shape s) const {
    require(shape_numel(s) == data_.size(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_shape(const Tensor& t, const Shape& want, const char* what) {
  if (t.shape() != want)
    throw Error(ErrorKind::InvalidArgument,
                std::string(what) + ": expected shape " + shape_str(want) + ", got " + shape_str(t.shape()));
}

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r)
    throw Error(ErrorKind::InvalidArgument,
                std::string(what) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
}

/// [B, R, C] -> [B, C, R]
inline Tensor transpose_last2(const Tensor& x) {
  require_rank(x, 3, "transpose_last2");
  const std::size_t B = x.dim(0), R = x.dim(1), C = x.dim(2);
  Tensor y({B, C, R});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) y[(b * C + c) * R + r] = x[(b * R + r) * C + c];
  return y;
}

inline void add_inplace(Tensor& a, const Tensor& b, double scale = 1.0) {
  require(a.shape() == b.shape(), "add_inplace: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

inline void scale_inplace(Tensor& a, double s) {
  for (double& v : a.vec()) v *= s;
}

}  // namespace cafe
