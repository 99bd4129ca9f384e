#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace rbfer {

/// Dense row-major tensor of doubles, rank 1..4. Shapes follow the
/// (batch, channel, height, width) convention for rank-4 data and
/// (row, col) for rank-2 data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::initializer_list<int> shape)
      : Tensor(std::vector<int>(shape)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  int rank() const { return static_cast<int>(shape_.size()); }
  int shape(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  const std::vector<int>& shape() const { return shape_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double& at(int i, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + c) * shape_[2] + h) *
                     shape_[3] +
                 w];
  }
  double at(int i, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + c) * shape_[2] + h) *
                     shape_[3] +
                 w];
  }

  void fill(double v);
  void zero() { fill(0.0); }
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// C(MxN) = alpha * op(A) * op(B) + beta * C, row-major buffers.
/// op is transpose when the corresponding flag is set; M, N, K describe
/// the shapes after op.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, const double* b, double beta, double* c);

}  // namespace rbfer
