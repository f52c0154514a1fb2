#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "driftlab/error.hpp"
#include "driftlab/matrix.hpp"
#include "driftlab/svd.hpp"

namespace driftlab {

inline constexpr std::size_t kDefaultMpaK = 16;

/// Activations of one layer: samples are rows, features are columns.
struct ActivationMatrix {
  std::size_t layer = 0;
  Matrix values;

  std::size_t samples() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

/// k orthonormal rows spanning a subspace of R^d.
struct SubspaceBasis {
  Matrix q;
  std::size_t k() const { return q.rows(); }
  std::size_t dim() const { return q.cols(); }
};

struct PrincipalAngleReport {
  std::vector<double> angles;  // radians, nondecreasing, each in [0, pi/2]
  double mean = 0.0;
};

/// Top-k right singular vectors of an (already centered) activation matrix.
/// Throws when k exceeds the effective rank (singular values at or below
/// 1e-12 * s_max are treated as zero).
inline SubspaceBasis top_right_basis(const Matrix& x, std::size_t k) {
  if (k == 0) throw ArgumentError("top_right_basis: k must be positive");
  if (k > std::min(x.rows(), x.cols()))
    throw ArgumentError("top_right_basis: k=" + std::to_string(k) +
                        " exceeds min(n, d) for a " + x.shape() + " matrix");
  const SvdResult f = svd(x);
  const std::size_t rank = effective_rank(f.s);
  if (k > rank)
    throw ArgumentError("top_right_basis: k=" + std::to_string(k) +
                        " exceeds effective rank " + std::to_string(rank));
  SubspaceBasis b{Matrix(k, x.cols())};
  for (std::size_t i = 0; i < k; ++i) {
    auto src = f.vt.row(i);
    std::copy(src.begin(), src.end(), b.q.row(i).begin());
  }
  return b;
}

inline SubspaceBasis top_right_basis(const ActivationMatrix& x, std::size_t k) {
  return top_right_basis(x.values, k);
}

/// Principal angles between two k-dimensional subspaces: arccos of the
/// singular values of base.q * ft.q^T, each clamped to [0, 1].
inline PrincipalAngleReport mpa(const SubspaceBasis& base, const SubspaceBasis& ft) {
  if (base.k() != ft.k() || base.dim() != ft.dim())
    throw ShapeError("mpa: basis shapes differ (" + base.q.shape() + " vs " +
                     ft.q.shape() + ")");
  PrincipalAngleReport r;
  const auto& a = base.q.data();
  const auto& b = ft.q.data();
  if (std::equal(a.begin(), a.end(), b.begin(), b.end())) {
    // arccos near 1 would leave ~1e-8 of rounding noise
    r.angles.assign(base.k(), 0.0);
    return r;
  }
  // fixed operand order so mpa(x, y) and mpa(y, x) agree bit for bit
  const bool swap = std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
  const Matrix cross = swap ? matmul_nt(ft.q, base.q) : matmul_nt(base.q, ft.q);
  const SvdResult f = svd(cross);
  r.angles.reserve(f.s.size());
  for (double s : f.s) r.angles.push_back(std::acos(std::clamp(s, 0.0, 1.0)));
  // singular values are sorted nonincreasing, so angles come out nondecreasing
  double sum = 0.0;
  for (double x : r.angles) sum += x;
  r.mean = r.angles.empty() ? 0.0 : sum / static_cast<double>(r.angles.size());
  return r;
}

/// Center both activation matrices, take top-k right bases, compare them.
inline PrincipalAngleReport mpa_from_activations(const ActivationMatrix& base,
                                                 const ActivationMatrix& ft,
                                                 std::size_t k) {
  if (base.values.rows() != ft.values.rows() || base.values.cols() != ft.values.cols())
    throw ShapeError("mpa_from_activations: activation shapes differ (" +
                     base.values.shape() + " vs " + ft.values.shape() + ")");
  if (base.layer != ft.layer)
    throw ArgumentError("mpa_from_activations: layers differ (" +
                        std::to_string(base.layer) + " vs " + std::to_string(ft.layer) +
                        ")");
  return mpa(top_right_basis(center_columns(base.values), k),
             top_right_basis(center_columns(ft.values), k));
}

inline PrincipalAngleReport mpa_from_activations(const Matrix& base, const Matrix& ft,
                                                 std::size_t k) {
  return mpa_from_activations(ActivationMatrix{0, base}, ActivationMatrix{0, ft}, k);
}

/// CSV rows (layer, k, angle_index, angle_rad, mean_rad).
inline void write_mpa_csv_header(std::ostream& os) {
  os << "layer,k,angle_index,angle_rad,mean_rad\n";
}

}  // namespace driftlab
