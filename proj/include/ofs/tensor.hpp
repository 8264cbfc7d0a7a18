#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ofs {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. Rank 0 holds a single scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("Tensor: shape " + shape_str(shape_) +
                                  " needs " + std::to_string(shape_numel(shape_)) +
                                  " values, got " + std::to_string(data_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    Tensor t = *this;
    if (shape_numel(shape) != t.size()) {
      throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_str(shape_) +
                                  " as " + shape_str(shape));
    }
    t.shape_ = std::move(shape);
    return t;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " +
                                std::to_string(rank) + ", got shape " + shape_str(t.shape()));
  }
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x < 0 ? -x : x);
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("max_abs_diff: shape " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    m = std::max(m, d < 0 ? -d : d);
  }
  return m;
}

// (out_channels, in_channels, s, s) weights with s odd.
class FilterBank {
 public:
  FilterBank() = default;
  FilterBank(std::size_t out_channels, std::size_t in_channels, std::size_t size)
      : weights_({out_channels, in_channels, size, size}) {
    validate();
  }
  explicit FilterBank(Tensor weights) : weights_(std::move(weights)) { validate(); }

  std::size_t out_channels() const { return weights_.dim(0); }
  std::size_t in_channels() const { return weights_.dim(1); }
  std::size_t size() const { return weights_.dim(2); }

  Tensor& weights() noexcept { return weights_; }
  const Tensor& weights() const noexcept { return weights_; }

  double& at(std::size_t o, std::size_t i, std::size_t r, std::size_t c) {
    return weights_.at(o, i, r, c);
  }
  double at(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const {
    return weights_.at(o, i, r, c);
  }

  bool operator==(const FilterBank&) const = default;

 private:
  void validate() const {
    require_rank(weights_, 4, "FilterBank");
    if (weights_.dim(2) != weights_.dim(3)) {
      throw std::invalid_argument("FilterBank: filters must be square, got " +
                                  shape_str(weights_.shape()));
    }
    if (weights_.dim(2) % 2 == 0) {
      throw std::invalid_argument("FilterBank: filter size must be odd and >= 1, got " +
                                  std::to_string(weights_.dim(2)));
    }
  }

  Tensor weights_{Shape{0, 0, 1, 1}};
};

// True for coordinates on the outer one-pixel border of an s x s filter.
inline bool on_ring(std::size_t r, std::size_t c, std::size_t s) {
  return r == 0 || c == 0 || r + 1 == s || c + 1 == s;
}

}  // namespace ofs
