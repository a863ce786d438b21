#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "cdnn/errors.hpp"
#include "cdnn/rng.hpp"

namespace cdnn {

/// Arithmetic precision of a tensor. `train` is 32-bit, used for the actual
/// optimization runs; `check` is 64-bit, used by the gradient-check oracles.
enum class Precision { train, check };

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) {
    if (e <= 0) throw NumericError(msg("non-positive extent in shape ", shape_str(s)));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

/// Dense N-dimensional array, row-major, contiguous. 4-D tensors follow the
/// (batch, channel, height, width) convention everywhere in this project.
template <typename T>
class Tensor {
  static_assert(std::is_arithmetic_v<T>);

 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw NumericError(msg("shape ", shape_str(shape_), " does not match buffer of ",
                             data_.size(), " elements"));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static constexpr Precision precision() {
    return std::is_same_v<T, float> ? Precision::train : Precision::check;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// 4-D accessor in (batch, channel, height, width) order.
  T& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// 3-D accessor in (channel, height, width) order.
  T& at3(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& at3(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Converts between the two precision modes.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws if any element is NaN or infinite; `op` names the producing operation.
template <typename T>
void ensure_all_finite(const Tensor<T>& t, const char* op) {
  for (const T v : t)
    if (!std::isfinite(v)) throw NumericError(msg(op, " produced a non-finite value"));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw NumericError(msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                           shape_str(b.shape())));
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  ensure_all_finite(out, "add");
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  ensure_all_finite(out, "sub");
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  ensure_all_finite(out, "mul");
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  ensure_all_finite(out, "scale");
  return out;
}

template <typename T, typename Fn>
Tensor<T> map(const Tensor<T>& a, Fn fn) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  ensure_all_finite(out, "map");
  return out;
}

// ---- reductions ------------------------------------------------------------

namespace detail {

/// Pairwise (recursive halving) summation: deterministic and far more
/// accurate than naive left-to-right accumulation on long buffers.
template <typename T>
T pairwise_sum(const T* p, std::size_t n) {
  if (n <= 16) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += p[i];
    return acc;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

/// Strided pairwise sum used by axis reductions.
template <typename T>
T pairwise_sum_strided(const T* p, std::size_t n, std::size_t stride) {
  if (n <= 16) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += p[i * stride];
    return acc;
  }
  const std::size_t half = n / 2;
  return pairwise_sum_strided(p, half, stride) +
         pairwise_sum_strided(p + half * stride, n - half, stride);
}

}  // namespace detail

enum class ReduceOp { sum, max, mean };

template <typename T>
T reduce_sum(const Tensor<T>& a) {
  const T s = detail::pairwise_sum(a.data(), a.size());
  if (!std::isfinite(s)) throw NumericError("reduce_sum produced a non-finite value");
  return s;
}

template <typename T>
T reduce_max(const Tensor<T>& a) {
  if (a.empty()) throw NumericError("reduce_max of empty tensor");
  return *std::max_element(a.begin(), a.end());
}

template <typename T>
T reduce_mean(const Tensor<T>& a) {
  if (a.empty()) throw NumericError("reduce_mean of empty tensor");
  return reduce_sum(a) / static_cast<T>(a.size());
}

/// Reduces over a set of axes. Reduced extents are dropped unless `keep_dims`
/// is set, in which case they stay as extent 1.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, const std::vector<int>& axes,
                 bool keep_dims = false) {
  const int rank = a.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= rank)
      throw NumericError(msg("reduce: axis ", ax, " invalid for shape ", shape_str(a.shape())));
    reduced[static_cast<std::size_t>(ax)] = true;
  }

  Shape out_shape;
  for (int d = 0; d < rank; ++d) {
    if (!reduced[static_cast<std::size_t>(d)]) out_shape.push_back(a.extent(d));
    else if (keep_dims) out_shape.push_back(1);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Row-major strides of the input.
  std::vector<std::size_t> stride(static_cast<std::size_t>(rank), 1);
  for (int d = rank - 2; d >= 0; --d)
    stride[static_cast<std::size_t>(d)] =
        stride[static_cast<std::size_t>(d) + 1] * static_cast<std::size_t>(a.extent(d + 1));

  std::vector<int> kept_axes, red_axes;
  for (int d = 0; d < rank; ++d)
    (reduced[static_cast<std::size_t>(d)] ? red_axes : kept_axes).push_back(d);

  std::size_t red_count = 1;
  for (int d : red_axes) red_count *= static_cast<std::size_t>(a.extent(d));

  Tensor<T> out(out_shape);
  std::vector<int> kept_index(kept_axes.size(), 0);
  std::vector<int> red_index(red_axes.size(), 0);
  const std::size_t out_n = out.size();
  for (std::size_t flat = 0; flat < out_n; ++flat) {
    std::size_t base = 0;
    for (std::size_t i = 0; i < kept_axes.size(); ++i)
      base += static_cast<std::size_t>(kept_index[i]) * stride[static_cast<std::size_t>(kept_axes[i])];

    T acc;
    if (op == ReduceOp::max) {
      acc = std::numeric_limits<T>::lowest();
      std::fill(red_index.begin(), red_index.end(), 0);
      for (std::size_t r = 0; r < red_count; ++r) {
        std::size_t off = base;
        for (std::size_t i = 0; i < red_axes.size(); ++i)
          off += static_cast<std::size_t>(red_index[i]) * stride[static_cast<std::size_t>(red_axes[i])];
        acc = std::max(acc, a[off]);
        for (int i = static_cast<int>(red_axes.size()) - 1; i >= 0; --i) {
          if (++red_index[static_cast<std::size_t>(i)] < a.extent(red_axes[static_cast<std::size_t>(i)])) break;
          red_index[static_cast<std::size_t>(i)] = 0;
        }
      }
    } else if (red_axes.size() == 1 || red_axes.empty()) {
      const std::size_t st = red_axes.empty() ? 1 : stride[static_cast<std::size_t>(red_axes[0])];
      acc = detail::pairwise_sum_strided(a.data() + base, red_count, st);
    } else {
      // General case: gather the reduced slice, then pairwise-sum it.
      std::vector<T> slice(red_count);
      std::fill(red_index.begin(), red_index.end(), 0);
      for (std::size_t r = 0; r < red_count; ++r) {
        std::size_t off = base;
        for (std::size_t i = 0; i < red_axes.size(); ++i)
          off += static_cast<std::size_t>(red_index[i]) * stride[static_cast<std::size_t>(red_axes[i])];
        slice[r] = a[off];
        for (int i = static_cast<int>(red_axes.size()) - 1; i >= 0; --i) {
          if (++red_index[static_cast<std::size_t>(i)] < a.extent(red_axes[static_cast<std::size_t>(i)])) break;
          red_index[static_cast<std::size_t>(i)] = 0;
        }
      }
      acc = detail::pairwise_sum(slice.data(), red_count);
    }
    if (op == ReduceOp::mean) acc /= static_cast<T>(red_count);
    out[flat] = acc;

    for (int i = static_cast<int>(kept_axes.size()) - 1; i >= 0; --i) {
      if (++kept_index[static_cast<std::size_t>(i)] < a.extent(kept_axes[static_cast<std::size_t>(i)])) break;
      kept_index[static_cast<std::size_t>(i)] = 0;
    }
  }
  ensure_all_finite(out, "reduce");
  return out;
}

// ---- seeded random construction --------------------------------------------

template <typename T>
Tensor<T> random_uniform(Rng& rng, Shape shape, T lo, T hi) {
  if (!(lo < hi)) throw NumericError(msg("random_uniform: lo ", lo, " must be < hi ", hi));
  Tensor<T> out(std::move(shape));
  for (auto& v : out) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template <typename T>
Tensor<T> random_normal(Rng& rng, Shape shape, T mean, T stddev) {
  if (stddev < T(0)) throw NumericError(msg("random_normal: negative stddev ", stddev));
  Tensor<T> out(std::move(shape));
  for (auto& v : out) v = static_cast<T>(rng.normal(mean, stddev));
  return out;
}

}  // namespace cdnn
