#pragma once

#include <algorithm>
#include <cmath>
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

namespace newscap {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. `Scalar` is float for training and double for
/// gradient checking; nothing else is supported.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, Scalar fill = 0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Scalar> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor row(std::initializer_list<Scalar> values) {
    return Tensor({1, values.size()}, std::vector<Scalar>(values));
  }

  static Tensor row(std::vector<Scalar> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows of a matrix view: everything but the last extent is flattened.
  std::size_t rows() const {
    if (shape_.empty()) return 1;
    return shape_.back() == 0 ? shape_size(shape_) : data_.size() / shape_.back();
  }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }
  Scalar& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const Scalar& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  std::span<const Scalar> row_span(std::size_t r) const {
    return std::span<const Scalar>(data_).subspan(r * cols(), cols());
  }
  std::span<Scalar> row_span(std::size_t r) {
    return std::span<Scalar>(data_).subspan(r * cols(), cols());
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    out.shape_ = std::move(shape);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](Scalar v) { return std::isfinite(v); });
  }

  Scalar sum() const { return std::accumulate(data_.begin(), data_.end(), Scalar{0}); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace newscap
