#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "dsam/errors.hpp"

namespace dsam {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major array of 64-bit floats.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("Tensor: data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vec(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec_data() { return data_; }
  const std::vector<double>& vec_data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-d accessor; rows/cols for matrices [r, c].
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double item() const {
    if (data_.size() != 1)
      throw ShapeError("item() on tensor of size " + std::to_string(data_.size()));
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// NumPy-style broadcast of two shapes (align right, 1 stretches).
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[out.size() - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Row-major strides with 0 for broadcast (size-1 or missing) dims, aligned to out rank.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    std::size_t axis_in = in.size() - 1 - i;
    std::size_t axis_out = out.size() - 1 - i;
    strides[axis_out] = (in[axis_in] == 1 && out[axis_out] != 1) ? 0 : stride;
    stride *= in[axis_in];
  }
  return strides;
}

}  // namespace detail

/// Elementwise binary with broadcasting. f(a_elem, b_elem) -> out_elem.
template <class F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape os = broadcast_shapes(a.shape(), b.shape());
  Tensor out(os);
  auto sa = detail::broadcast_strides(a.shape(), os);
  auto sb = detail::broadcast_strides(b.shape(), os);
  std::vector<std::size_t> idx(os.size(), 0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  std::size_t n = out.size();
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = f(pa[ia], pb[ib]);
    // odometer increment
    for (std::size_t ax = os.size(); ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < os[ax]) break;
      ia -= sa[ax] * os[ax];
      ib -= sb[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

/// Sum `g` down to `target` shape (adjoint of broadcasting).
inline Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target, 0.0);
  auto st = detail::broadcast_strides(target, g.shape());
  const Shape& gs = g.shape();
  std::vector<std::size_t> idx(gs.size(), 0);
  const double* pg = g.data();
  double* po = out.data();
  std::size_t it = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    po[it] += pg[i];
    for (std::size_t ax = gs.size(); ax-- > 0;) {
      ++idx[ax];
      it += st[ax];
      if (idx[ax] < gs[ax]) break;
      it -= st[ax] * gs[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace dsam
