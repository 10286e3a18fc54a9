#ifndef RVMDE_TENSOR_HPP
#define RVMDE_TENSOR_HPP

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvmde {

/// Dense row-major N-d array. The numerical substrate for images, depth
/// maps, radar rasters and network activations. float for training,
/// double for verification paths.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != count(shape_)) {
      throw std::invalid_argument("Tensor: data size does not match shape");
    }
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-specific accessors; hot loops should index raw data() instead.
  T& at(int h, int w) {
    assert(rank() == 2);
    return data_[static_cast<size_t>(h) * shape_[1] + w];
  }
  const T& at(int h, int w) const { return const_cast<Tensor*>(this)->at(h, w); }

  T& at(int c, int h, int w) {
    assert(rank() == 3);
    return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(int c, int h, int w) const { return const_cast<Tensor*>(this)->at(c, h, w); }

  T& at(int b, int c, int h, int w) {
    assert(rank() == 4);
    return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int b, int c, int h, int w) const { return const_cast<Tensor*>(this)->at(b, c, h, w); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  bool same_shape(const Tensor<U>& other) const {
    return shape_ == other.shape();
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

using DepthMap = Tensor<float>;   // H x W meters, 0 = no measurement
using BoolMap = Tensor<uint8_t>;  // H x W {0,1}

}  // namespace rvmde

#endif  // RVMDE_TENSOR_HPP
