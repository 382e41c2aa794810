#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <vector>

#include "qc/error.hpp"

namespace qc {

template <typename Scalar>
struct MeanStd {
  Scalar mean = Scalar(0);
  Scalar std = Scalar(0);
};

// Mean and population standard deviation (two-pass).
template <typename Derived>
MeanStd<typename Derived::Scalar> mean_std(const Eigen::DenseBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  if (values.size() == 0) throw PreconditionError("mean_std: no values");
  const Scalar mean = values.derived().array().mean();
  const Scalar var = (values.derived().array() - mean).square().mean();
  return {mean, std::sqrt(var)};
}

template <typename Scalar>
MeanStd<Scalar> mean_std(std::span<const Scalar> values) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  return mean_std(Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size())));
}

template <typename Scalar>
MeanStd<Scalar> mean_std(const std::vector<Scalar>& values) {
  return mean_std(std::span<const Scalar>(values));
}

}  // namespace qc
