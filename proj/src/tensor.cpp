#include "rbfer/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace rbfer {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw std::invalid_argument("Tensor rank must be 1..4");
  }
  std::size_t n = 1;
  for (int d : shape_) {
    if (d < 1) throw std::invalid_argument("Tensor dims must be >= 1");
    n *= static_cast<std::size_t>(d);
  }
  data_.assign(n, 0.0);
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("Tensor shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

namespace {
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  Map cm(c, m, n);
  ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
  ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
  if (beta == 0.0) {
    cm.setZero();
  } else if (beta != 1.0) {
    cm *= beta;
  }
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * am * bm.transpose();
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

}  // namespace rbfer
