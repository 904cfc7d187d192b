#pragma once

#include <cstddef>

#include "pgcu/tensor.hpp"

namespace pgcu {

// Multispectral image [C][H][W] with every value finite and in [0, 1].
// Out-of-range input is rejected unless clamping is requested explicitly.
class MSImage {
 public:
  static MSImage from_tensor(Tensor<double> data, bool clamp = false);

  template <typename T>
  static MSImage from(const Tensor<T>& data, bool clamp = false) {
    return from_tensor(data.template cast<double>(), clamp);
  }

  const Tensor<double>& tensor() const { return data_; }
  std::size_t channels() const { return data_.dim(0); }
  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }
  double operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_(c, i, j);
  }

 private:
  explicit MSImage(Tensor<double> data) : data_(std::move(data)) {}
  Tensor<double> data_;
};

// Panchromatic image [H][W], same value rules as MSImage.
class PanImage {
 public:
  static PanImage from_tensor(Tensor<double> data, bool clamp = false);

  template <typename T>
  static PanImage from(const Tensor<T>& data, bool clamp = false) {
    return from_tensor(data.template cast<double>(), clamp);
  }

  const Tensor<double>& tensor() const { return data_; }
  std::size_t height() const { return data_.dim(0); }
  std::size_t width() const { return data_.dim(1); }
  double operator()(std::size_t i, std::size_t j) const { return data_(i, j); }

 private:
  explicit PanImage(Tensor<double> data) : data_(std::move(data)) {}
  Tensor<double> data_;
};

}  // namespace pgcu
