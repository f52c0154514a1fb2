#pragma once

#include "driftlab/matrix.hpp"
#include "driftlab/smallnet.hpp"

namespace driftlab {

/// L(theta) = 1/2 theta^T A theta with a fixed symmetric A. The batch argument
/// is ignored; the model exists so that curvature and landscape code can be
/// checked against closed forms.
class QuadraticModel {
 public:
  explicit QuadraticModel(Matrix a) : a_(std::move(a)) {
    if (a_.rows() != a_.cols()) throw ShapeError("QuadraticModel: A must be square");
  }

  static QuadraticModel diagonal(std::span<const double> d) {
    Matrix a(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) a(i, i) = d[i];
    return QuadraticModel(std::move(a));
  }

  std::size_t num_params() const { return a_.rows(); }
  const Matrix& hessian() const { return a_; }

  double loss(const ParamVector& p, const Batch& = {}) const {
    const auto ap = matvec(a_, p.values);
    return 0.5 * driftlab::dot(std::span<const double>(p.values), std::span<const double>(ap));
  }

  LossAndGrad loss_and_grad(const ParamVector& p, const Batch& = {}) const {
    ParamVector g(matvec(a_, p.values));
    const double l =
        0.5 * driftlab::dot(std::span<const double>(p.values), std::span<const double>(g.values));
    return {l, std::move(g)};
  }

 private:
  Matrix a_;
};

}  // namespace driftlab
