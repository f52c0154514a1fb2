#pragma once

// Two-layer diagonal linear network f(x) = <x, u .* v> trained on the squared
// loss 1/2 |X (u .* v) - Y|^2. Used as a finetuning testbed: the model starts
// from a "pretrained" solution supported on one coordinate interval and is
// finetuned toward a target supported on an overlapping interval.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftlab/error.hpp"
#include "driftlab/matrix.hpp"
#include "driftlab/rng.hpp"

namespace driftlab::dln {

/// Feature supports: finetuning uses [a, b], pretraining uses [z1, z2]
/// (closed intervals), with 0 <= a < z1 < b < z2 < d.
struct SupportSpec {
  std::size_t a = 0;
  std::size_t z1 = 23;
  std::size_t b = 45;
  std::size_t z2 = 66;
  std::size_t d = 100;

  void validate() const {
    if (!(a < z1 && z1 < b && b < z2 && z2 < d))
      throw ArgumentError("SupportSpec: require 0 <= a < z1 < b < z2 < d, got (" +
                          std::to_string(a) + ", " + std::to_string(z1) + ", " +
                          std::to_string(b) + ", " + std::to_string(z2) + ", " +
                          std::to_string(d) + ")");
  }

  bool in_finetune(std::size_t i) const { return i >= a && i <= b; }
  bool in_pretrain(std::size_t i) const { return i >= z1 && i <= z2; }
  bool in_overlap(std::size_t i) const { return i >= z1 && i <= b; }
  /// Coordinates used only by the pretrained model: [b+1, z2].
  bool pretrain_only(std::size_t i) const { return i > b && i <= z2; }
};

struct DlnParams {
  std::vector<double> u;
  std::vector<double> v;

  std::size_t dim() const { return u.size(); }
  std::vector<double> effective_weight() const {
    std::vector<double> w(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) w[i] = u[i] * v[i];
    return w;
  }
};

struct DlnDataset {
  Matrix x;               // n x d
  std::vector<double> y;  // n

  std::size_t samples() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
};

struct GroundTruths {
  std::vector<double> w_ft;
  std::vector<double> w_pret;
};

enum class SignMode { kPositive, kRandom };

/// Unit-magnitude ground truths on the two supports. With kRandom each entry
/// gets an independent +-1 sign; kPositive fixes every entry to +1.
inline GroundTruths make_ground_truths(const SupportSpec& spec, SeededRng& rng,
                                       SignMode signs = SignMode::kPositive) {
  spec.validate();
  GroundTruths g{std::vector<double>(spec.d, 0.0), std::vector<double>(spec.d, 0.0)};
  auto draw = [&] {
    if (signs == SignMode::kPositive) return 1.0;
    return (rng.next_u64() >> 63) ? 1.0 : -1.0;
  };
  for (std::size_t i = spec.a; i <= spec.b; ++i) g.w_ft[i] = draw();
  for (std::size_t i = spec.z1; i <= spec.z2; ++i) g.w_pret[i] = draw();
  return g;
}

/// Gaussian design with labels y = X w_ft.
inline DlnDataset make_dataset(std::size_t n, const std::vector<double>& w_ft,
                               SeededRng& rng) {
  if (n >= w_ft.size())
    throw ArgumentError("make_dataset: need n < d (overparameterized), got n=" +
                        std::to_string(n) + ", d=" + std::to_string(w_ft.size()));
  DlnDataset data{Matrix::gaussian(n, w_ft.size(), rng), {}};
  data.y = matvec(data.x, w_ft);
  return data;
}

/// Balanced split of the pretrained weights: |u| = |v| = sqrt|w| with the
/// sign carried by v. Zero coordinates start at u = v = alpha_init.
inline DlnParams init_from_pretrained(const std::vector<double>& w_pret,
                                      double alpha_init) {
  if (!(alpha_init > 0.0)) throw ArgumentError("init_from_pretrained: alpha_init must be > 0");
  DlnParams p{std::vector<double>(w_pret.size()), std::vector<double>(w_pret.size())};
  for (std::size_t i = 0; i < w_pret.size(); ++i) {
    if (w_pret[i] == 0.0) {
      p.u[i] = alpha_init;
      p.v[i] = alpha_init;
    } else {
      const double r = std::sqrt(std::abs(w_pret[i]));
      p.u[i] = r;
      p.v[i] = std::copysign(r, w_pret[i]);
    }
  }
  return p;
}

namespace detail {

inline std::vector<double> residual(const DlnParams& p, const Matrix& x,
                                    std::span<const double> y) {
  const auto w = p.effective_weight();
  auto r = matvec(x, w);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  return r;
}

inline void check_dims(const DlnParams& p, const DlnDataset& data) {
  if (p.u.size() != p.v.size() || p.u.size() != data.dim() ||
      data.y.size() != data.samples())
    throw ShapeError("dln: parameter length " + std::to_string(p.u.size()) +
                     " incompatible with data " + data.x.shape());
}

}  // namespace detail

/// 1/2 |X (u .* v) - Y|^2
inline double loss(const DlnParams& p, const DlnDataset& data) {
  detail::check_dims(p, data);
  const auto r = detail::residual(p, data.x, data.y);
  return 0.5 * dot(r, r);
}

struct Gradient {
  std::vector<double> gu;
  std::vector<double> gv;
};

/// gu = v .* X^T r, gv = u .* X^T r with r = X(u .* v) - Y.
inline Gradient grad(const DlnParams& p, const DlnDataset& batch) {
  detail::check_dims(p, batch);
  const auto r = detail::residual(p, batch.x, batch.y);
  const auto g = matvec_t(batch.x, r);
  Gradient out{std::vector<double>(g.size()), std::vector<double>(g.size())};
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.gu[i] = p.v[i] * g[i];
    out.gv[i] = p.u[i] * g[i];
  }
  return out;
}

/// Column squared norms of X, i.e. diag(X^T X).
inline std::vector<double> gram_diagonal(const Matrix& x) {
  std::vector<double> g(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t i = 0; i < row.size(); ++i) g[i] += row[i] * row[i];
  }
  return g;
}

inline double trace_sharpness(const DlnParams& p, std::span<const double> gram_diag) {
  double t = 0.0;
  for (std::size_t i = 0; i < p.u.size(); ++i)
    t += (p.u[i] * p.u[i] + p.v[i] * p.v[i]) * gram_diag[i];
  return t;
}

/// Tr of the loss Hessian in (u, v): sum_i (u_i^2 + v_i^2) (X^T X)_ii.
/// Off-diagonal blocks do not touch the trace.
inline double trace_sharpness(const DlnParams& p, const DlnDataset& data) {
  detail::check_dims(p, data);
  return trace_sharpness(p, gram_diagonal(data.x));
}

/// 1 - (sum of |final_w| over [b+1, z2]) / (sum of |w_pret| over [b+1, z2]).
inline double forgetting_mass(std::span<const double> final_w, const SupportSpec& spec,
                              std::span<const double> w_pret) {
  spec.validate();
  if (final_w.size() != spec.d || w_pret.size() != spec.d)
    throw ShapeError("forgetting_mass: vectors must have length d=" +
                     std::to_string(spec.d));
  double kept = 0.0, orig = 0.0;
  for (std::size_t i = spec.b + 1; i <= spec.z2; ++i) {
    kept += std::abs(final_w[i]);
    orig += std::abs(w_pret[i]);
  }
  if (orig == 0.0)
    throw ArgumentError("forgetting_mass: pretrained mass on [b+1, z2] is zero");
  return 1.0 - kept / orig;
}

struct TrainOptions {
  double lr = 5e-3;
  std::size_t batch_size = 10;
  long max_steps = 200000;
  double loss_threshold = 1e-6;
  /// Blow-up guard: loss above divergence_factor * initial loss.
  double divergence_factor = 1e6;
};

struct DlnRunResult {
  std::vector<double> final_w;
  std::vector<double> loss_trace;       // full-data loss before each step, plus final
  std::vector<double> sharpness_trace;  // Tr(Hessian) alongside loss_trace
  double final_loss = 0.0;
  double forgetting_mass = 0.0;
  long steps_to_converge = 0;
  bool converged = false;
  std::uint64_t seed = 0;
};

/// Mini-batch SGD, sampling without replacement within each epoch. The batch
/// gradient is averaged over the batch, so `lr` is a per-example step size.
/// Stops once the full-data loss is at or below the threshold.
inline DlnRunResult train(DlnParams params, const DlnDataset& data,
                          const TrainOptions& opt, SeededRng& rng) {
  detail::check_dims(params, data);
  if (!(opt.lr > 0.0)) throw ArgumentError("dln::train: lr must be > 0");
  if (opt.batch_size == 0 || opt.batch_size > data.samples())
    throw ArgumentError("dln::train: batch_size must be in [1, n]");

  const std::size_t n = data.samples();
  const std::size_t d = data.dim();
  const auto gdiag = gram_diagonal(data.x);

  DlnRunResult res;
  res.seed = rng.seed();
  const double initial = loss(params, data);
  const double blowup = std::max(initial, 1e-300) * opt.divergence_factor;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;  // forces a shuffle on the first step

  DlnDataset batch{Matrix(opt.batch_size, d), std::vector<double>(opt.batch_size)};
  const double scale = opt.lr / static_cast<double>(opt.batch_size);

  double current = initial;
  long step = 0;
  for (;; ++step) {
    res.loss_trace.push_back(current);
    res.sharpness_trace.push_back(trace_sharpness(params, gdiag));
    if (current <= opt.loss_threshold) {
      res.converged = true;
      break;
    }
    if (step >= opt.max_steps) break;

    if (cursor + opt.batch_size > n) {
      rng.shuffle(order);
      cursor = 0;
    }
    for (std::size_t j = 0; j < opt.batch_size; ++j) {
      const std::size_t src = order[cursor + j];
      auto from = data.x.row(src);
      std::copy(from.begin(), from.end(), batch.x.row(j).begin());
      batch.y[j] = data.y[src];
    }
    cursor += opt.batch_size;

    const Gradient g = grad(params, batch);
    for (std::size_t i = 0; i < d; ++i) {
      params.u[i] -= scale * g.gu[i];
      params.v[i] -= scale * g.gv[i];
    }
    current = loss(params, data);
    if (!std::isfinite(current) || current > blowup)
      throw DivergenceError("dln::train: loss diverged (catapult) at step " +
                                std::to_string(step + 1) + " with lr " +
                                std::to_string(opt.lr),
                            step + 1);
  }
  res.steps_to_converge = step;
  res.final_loss = current;
  res.final_w = params.effective_weight();
  return res;
}

/// Scale the pretrained-support coordinates to (c u_i, v_i / c). Keeps u .* v
/// fixed while moving Tr(Hessian).
inline DlnParams rescale_imbalance(const DlnParams& p, const SupportSpec& spec, double c) {
  DlnParams out = p;
  for (std::size_t i = spec.z1; i <= spec.z2; ++i) {
    out.u[i] *= c;
    out.v[i] /= c;
  }
  return out;
}

/// Pretrained weights scaled by s, so |u|, |v| grow by sqrt(s) on the support.
inline DlnParams scaled_pretrained(const std::vector<double>& w_pret, double s,
                                   double alpha_init) {
  auto w = w_pret;
  for (auto& x : w) x *= s;
  return init_from_pretrained(w, alpha_init);
}

namespace detail {

template <class F>
double bisect_ratio(F ratio_at, double target, const char* who) {
  if (target == 1.0) return 1.0;
  double lo = 1.0, hi = 2.0;
  while (ratio_at(hi) < target) {
    hi *= 2.0;
    if (hi > 1e8) throw ArgumentError(std::string(who) + ": ratio unreachable");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ratio_at(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Find c >= 1 such that Tr(rescale_imbalance(p, c)) / Tr(p) = ratio, by bisection.
inline double imbalance_for_trace_ratio(const DlnParams& p, const SupportSpec& spec,
                                        std::span<const double> gram_diag, double ratio) {
  if (!(ratio >= 1.0))
    throw ArgumentError("imbalance_for_trace_ratio: ratio must be >= 1");
  const double base = trace_sharpness(p, gram_diag);
  return detail::bisect_ratio(
      [&](double c) { return trace_sharpness(rescale_imbalance(p, spec, c), gram_diag) / base; },
      ratio, "imbalance_for_trace_ratio");
}

/// Find s >= 1 such that scaling w_pret by s multiplies the initial trace by ratio.
inline double magnitude_for_trace_ratio(const std::vector<double>& w_pret, double alpha_init,
                                        std::span<const double> gram_diag, double ratio) {
  if (!(ratio >= 1.0))
    throw ArgumentError("magnitude_for_trace_ratio: ratio must be >= 1");
  const double base = trace_sharpness(init_from_pretrained(w_pret, alpha_init), gram_diag);
  return detail::bisect_ratio(
      [&](double s) {
        return trace_sharpness(scaled_pretrained(w_pret, s, alpha_init), gram_diag) / base;
      },
      ratio, "magnitude_for_trace_ratio");
}

enum class SharpnessControl {
  kMagnitude,  // scale w_pret; the sharper run starts from a larger pretrained solution
  kImbalance,  // (c u, v / c) on the pretrained support; same u .* v
};

inline std::string to_string(SharpnessControl c) {
  return c == SharpnessControl::kMagnitude ? "magnitude" : "imbalance";
}

inline SharpnessControl sharpness_control_from_string(const std::string& s) {
  if (s == "magnitude") return SharpnessControl::kMagnitude;
  if (s == "imbalance") return SharpnessControl::kImbalance;
  throw ArgumentError("unknown sharpness control '" + s + "' (expected magnitude|imbalance)");
}

struct SharpnessComparison {
  DlnRunResult flat;
  DlnRunResult sharp;
  double trace_flat = 0.0;
  double trace_sharp = 0.0;
  double control_value = 1.0;  // s for magnitude, c for imbalance
  /// Steps whose Tr(Hessian) exceeds the flat run's initial trace.
  long flat_steps_sharp = 0;
  long sharp_steps_sharp = 0;
};

/// Two runs at the same lr and batch order whose initial traces differ by
/// sharpness_scale. forgetting_mass of each run is taken against its own
/// pretrained weights.
inline SharpnessComparison run_sharpness_comparison(
    const SupportSpec& spec, const GroundTruths& truths, const DlnDataset& data,
    double sharpness_scale, const TrainOptions& opt, std::uint64_t train_seed,
    double alpha_init = 1e-3, SharpnessControl control = SharpnessControl::kMagnitude) {
  spec.validate();
  if (!(sharpness_scale > 0.0))
    throw ArgumentError("run_sharpness_comparison: sharpness_scale must be > 0");
  if (sharpness_scale < 1.0)
    throw ArgumentError("run_sharpness_comparison: sharpness_scale below 1 is not supported");
  const auto gdiag = gram_diagonal(data.x);

  SharpnessComparison out;
  const DlnParams flat = init_from_pretrained(truths.w_pret, alpha_init);
  DlnParams sharp;
  std::vector<double> w_sharp = truths.w_pret;
  if (control == SharpnessControl::kMagnitude) {
    out.control_value = magnitude_for_trace_ratio(truths.w_pret, alpha_init, gdiag, sharpness_scale);
    for (auto& x : w_sharp) x *= out.control_value;
    sharp = init_from_pretrained(w_sharp, alpha_init);
  } else {
    out.control_value = imbalance_for_trace_ratio(flat, spec, gdiag, sharpness_scale);
    sharp = rescale_imbalance(flat, spec, out.control_value);
  }
  out.trace_flat = trace_sharpness(flat, gdiag);
  out.trace_sharp = trace_sharpness(sharp, gdiag);

  SeededRng r1(train_seed), r2(train_seed);
  out.flat = train(flat, data, opt, r1);
  out.sharp = train(sharp, data, opt, r2);
  out.flat.forgetting_mass = forgetting_mass(out.flat.final_w, spec, truths.w_pret);
  out.sharp.forgetting_mass = forgetting_mass(out.sharp.final_w, spec, w_sharp);

  auto count = [&](const DlnRunResult& r) {
    return static_cast<long>(std::count_if(r.sharpness_trace.begin(), r.sharpness_trace.end(),
                                           [&](double t) { return t > out.trace_flat; }));
  };
  out.flat_steps_sharp = count(out.flat);
  out.sharp_steps_sharp = count(out.sharp);
  return out;
}

}  // namespace driftlab::dln
