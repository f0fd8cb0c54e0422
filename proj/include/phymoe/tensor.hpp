#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace phymoe {

/// Dense row-major double tensor. Rank 1..4 covers everything in this
/// project: vectors, matrices, HWC images/features and KKIO conv weights.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<int> shape, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // HWC indexing
  double& at3(int y, int x, int c) {
    return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }
  double at3(int y, int x, int c) const {
    return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }
  double& at2(int i, int j) {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }
  double at2(int i, int j) const {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;
  double mean() const;

  void fill(double v);
  void add_inplace(const Tensor& o);   // shapes must match
  void scale_inplace(double s);

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int64_t shape_size(const std::vector<int>& shape);

}  // namespace phymoe
