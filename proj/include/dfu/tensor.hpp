#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dfu {

using Shape = std::vector<std::size_t>;
using cplx = std::complex<double>;

std::size_t numel(const Shape& s);
std::string to_string(const Shape& s);

// Dense row-major array. Feature maps use the layout [channels, batch, rows, cols]
// so that per-pixel channel mixing is a plain matrix product.
template <class T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s);

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using CTensor = BasicTensor<cplx>;

extern template class BasicTensor<double>;
extern template class BasicTensor<cplx>;

// Elementwise helpers used outside the graph.
double max_abs(std::span<const double> a);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

}  // namespace dfu
