#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "driftlab/error.hpp"
#include "driftlab/matrix.hpp"

namespace driftlab {

struct SvdResult {
  Matrix u;               // rows x r, orthonormal columns
  std::vector<double> s;  // r values, nonincreasing
  Matrix vt;              // r x cols, orthonormal rows
  int sweeps = 0;
};

struct SvdOptions {
  int max_sweeps = 60;
  /// A column pair counts as orthogonal once |<a_p, a_q>| <= tol * |a_p| |a_q|.
  double tol = 1e-12;
};

namespace detail {

// Gram-Schmidt completion: replaces the rows of `basis` flagged invalid with
// unit vectors orthogonal to every other row.
inline void complete_orthonormal_rows(Matrix& basis, std::vector<bool> done) {
  const std::size_t n = basis.rows();
  const std::size_t dim = basis.cols();
  std::size_t probe = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (done[i]) continue;
    for (;;) {
      if (probe >= dim) throw Error("svd: orthonormal completion ran out of directions");
      std::vector<double> cand(dim, 0.0);
      cand[probe++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < n; ++j) {
          if (!done[j]) continue;
          auto r = basis.row(j);
          const double c = dot(cand, r);
          for (std::size_t k = 0; k < dim; ++k) cand[k] -= c * r[k];
        }
      }
      const double nrm = norm2(cand);
      if (nrm > 1e-6) {
        auto r = basis.row(i);
        for (std::size_t k = 0; k < dim; ++k) r[k] = cand[k] / nrm;
        done[i] = true;
        break;
      }
    }
  }
}

// One-sided Jacobi on a matrix given by its columns, stored as the rows of
// `cols` (n x m, n <= m). On return the rows of `cols` are mutually
// orthogonal and `v` (n x n) holds the accumulated right rotations by row.
inline int jacobi_orthogonalize(Matrix& cols, Matrix& v, const SvdOptions& opt) {
  const std::size_t n = cols.rows();
  const std::size_t m = cols.cols();
  const double total = frobenius_norm(cols);
  const double negligible = std::numeric_limits<double>::epsilon() * total;
  const double negligible_sq = negligible * negligible;
  double worst = 0.0;
  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    bool rotated = false;
    worst = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = cols.row(p);
        auto wq = cols.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          alpha += wp[k] * wp[k];
          beta += wq[k] * wq[k];
          gamma += wp[k] * wq[k];
        }
        if (alpha <= negligible_sq || beta <= negligible_sq) continue;
        const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
        worst = std::max(worst, rel);
        if (rel <= opt.tol) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        for (std::size_t k = 0; k < m; ++k) {
          const double a = wp[k], b = wq[k];
          wp[k] = c * a - s * b;
          wq[k] = s * a + c * b;
        }
        auto vp = v.row(p);
        auto vq = v.row(q);
        for (std::size_t k = 0; k < n; ++k) {
          const double a = vp[k], b = vq[k];
          vp[k] = c * a - s * b;
          vq[k] = s * a + c * b;
        }
      }
    }
    if (!rotated) return sweep;
  }
  throw ConvergenceError("svd: one-sided Jacobi did not converge after " +
                             std::to_string(opt.max_sweeps) +
                             " sweeps; largest relative off-diagonal " +
                             std::to_string(worst),
                         opt.max_sweeps, worst, worst);
}

inline SvdResult svd_tall(const Matrix& x, const SvdOptions& opt) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Matrix cols = transpose(x);
  Matrix v = Matrix::identity(n);
  const int sweeps = jacobi_orthogonalize(cols, v, opt);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = norm2(cols.row(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  const double smax = n ? norms[order[0]] : 0.0;
  const double floor = std::max(smax, 1.0) * std::numeric_limits<double>::min() * 1e4;
  SvdResult out;
  out.sweeps = sweeps;
  out.s.resize(n);
  Matrix ut(n, m);  // left vectors by row
  out.vt = Matrix(n, n);
  std::vector<bool> valid(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = order[i];
    out.s[i] = norms[j];
    auto src = cols.row(j);
    auto dst = ut.row(i);
    if (norms[j] > floor && norms[j] > 1e-14 * smax) {
      for (std::size_t k = 0; k < m; ++k) dst[k] = src[k] / norms[j];
    } else {
      valid[i] = false;
    }
    auto vs = v.row(j);
    auto vd = out.vt.row(i);
    std::copy(vs.begin(), vs.end(), vd.begin());
  }
  if (std::find(valid.begin(), valid.end(), false) != valid.end())
    complete_orthonormal_rows(ut, valid);
  out.u = transpose(ut);
  return out;
}

}  // namespace detail

/// Thin SVD by one-sided Jacobi with cyclic sweeps: x = u * diag(s) * vt,
/// r = min(rows, cols). Deterministic for a fixed input.
inline SvdResult svd(const Matrix& x, const SvdOptions& opt = {}) {
  if (!x.all_finite()) throw ArgumentError("svd: input has non-finite entries");
  if (x.rows() >= x.cols()) return detail::svd_tall(x, opt);
  SvdResult t = detail::svd_tall(transpose(x), opt);
  SvdResult out;
  out.sweeps = t.sweeps;
  out.s = std::move(t.s);
  out.u = transpose(t.vt);
  out.vt = transpose(t.u);
  return out;
}

/// Number of singular values above rel_tol * s_max.
inline std::size_t effective_rank(const std::vector<double>& s, double rel_tol = 1e-12) {
  if (s.empty() || s.front() <= 0.0) return 0;
  std::size_t r = 0;
  for (double v : s)
    if (v > rel_tol * s.front()) ++r;
  return r;
}

}  // namespace driftlab
