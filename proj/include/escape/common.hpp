#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace escape {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrixf = MatrixX<float>;
using Vectorf = VectorX<float>;
using Matrixd = MatrixX<double>;
using Vectord = VectorX<double>;

using TokenId = int32_t;

/// Error type for all recoverable failures in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

template <typename Scalar>
bool all_finite(const MatrixX<Scalar>& m) {
  return m.allFinite();
}

// Numerically safe log-sum-exp over a vector.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  const S m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// In-place row softmax with max subtraction.
template <typename Scalar>
void softmax_inplace(Eigen::Ref<VectorX<Scalar>> v) {
  const Scalar m = v.maxCoeff();
  v = (v.array() - m).exp();
  v /= v.sum();
}

}  // namespace escape
