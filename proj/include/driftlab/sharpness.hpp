#pragma once

// Curvature measurements: the perturbation-KL proxy, power iteration for the
// top Hessian eigenvalue, and a full-batch GD monitor for the 2/lr ceiling.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftlab/error.hpp"
#include "driftlab/optim.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/smallnet.hpp"
#include "driftlab/stats.hpp"

namespace driftlab {

inline constexpr double kProbabilityFloor = 1e-12;

/// KL(p || q) = sum p_i ln(p_i / q_i), 0 ln 0 = 0, both sides floored.
inline double kl_categorical(std::span<const double> p, std::span<const double> q,
                             double floor = kProbabilityFloor) {
  if (p.size() != q.size()) throw ShapeError("kl_categorical: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * (std::log(std::max(p[i], floor)) - std::log(std::max(q[i], floor)));
  }
  return s;
}

/// Same divergence from log-probabilities, avoiding the exp/log round trip.
inline double kl_from_log_probs(std::span<const double> log_p, std::span<const double> log_q,
                                double floor = kProbabilityFloor) {
  if (log_p.size() != log_q.size()) throw ShapeError("kl_from_log_probs: length mismatch");
  const double lf = std::log(floor);
  double s = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double p = std::exp(log_p[i]);
    if (p <= 0.0) continue;
    s += p * (std::max(log_p[i], lf) - std::max(log_q[i], lf));
  }
  return s;
}

struct ProxyOptions {
  double sigma = 1e-5;
  std::size_t n_noise = 10;
  /// false: KL(perturbed || clean). true: KL(clean || perturbed).
  bool reverse = false;
};

struct SharpnessEstimate {
  double value = 0.0;           // mean KL in nats
  double sigma = 0.0;
  std::size_t n_noise = 0;
  std::size_t n_batches = 0;
  double per_sample_std = 0.0;  // spread of the per-(batch, draw) means
  double prob_floor = kProbabilityFloor;
  bool reverse = false;
};

/// Expected KL between predictions after and before adding N(0, sigma^2)
/// noise to every parameter. One set of n_noise draws is shared by all
/// batches, so the estimate does not depend on batch order.
template <ProbabilisticModel M>
SharpnessEstimate perturbation_sharpness(const M& model, const ParamVector& params,
                                         std::span<const Batch> batches,
                                         const ProxyOptions& opt, SeededRng& rng) {
  if (!(opt.sigma > 0.0)) throw ArgumentError("perturbation_sharpness: sigma must be > 0");
  if (opt.n_noise < 1) throw ArgumentError("perturbation_sharpness: n_noise must be >= 1");
  if (batches.empty()) throw ArgumentError("perturbation_sharpness: no batches");

  std::vector<ParamVector> noisy;
  noisy.reserve(opt.n_noise);
  for (std::size_t j = 0; j < opt.n_noise; ++j) {
    ParamVector p = params;
    const auto eps = gaussian(rng, p.size(), opt.sigma);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += eps[i];
    noisy.push_back(std::move(p));
  }

  std::vector<double> cell;
  cell.reserve(batches.size() * opt.n_noise);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Matrix clean = model.log_probs(params, batches[b].inputs);
    for (std::size_t j = 0; j < opt.n_noise; ++j) {
      const Matrix pert = model.log_probs(noisy[j], batches[b].inputs);
      double s = 0.0;
      for (std::size_t i = 0; i < clean.rows(); ++i)
        s += opt.reverse ? kl_from_log_probs(clean.row(i), pert.row(i))
                         : kl_from_log_probs(pert.row(i), clean.row(i));
      s /= static_cast<double>(clean.rows());
      if (!std::isfinite(s))
        throw Error("perturbation_sharpness: non-finite KL at batch " + std::to_string(b) +
                    ", draw " + std::to_string(j));
      cell.push_back(s);
    }
  }
  SharpnessEstimate e;
  e.value = mean(cell);
  e.sigma = opt.sigma;
  e.n_noise = opt.n_noise;
  e.n_batches = batches.size();
  e.per_sample_std = stddev(cell);
  e.reverse = opt.reverse;
  return e;
}

struct EigenOptions {
  double tol = 1e-6;  // relative change between successive Rayleigh quotients
  int max_iter = 1000;
};

struct EigenEstimate {
  double lambda_max = 0.0;
  int iterations = 0;
  double residual = 0.0;  // |Hv - lambda v| for the final unit v
  /// Set when the dominant eigenvalue is negative; lambda_max then comes
  /// from a second pass on H - lambda_dominant I.
  bool negative_dominant = false;
  double dominant = 0.0;
  std::vector<double> rayleigh;  // quotient per iteration of the final pass
  ParamVector vector;
};

namespace detail {

template <typename Apply>
EigenEstimate power_iteration(Apply&& apply, ParamVector v, const EigenOptions& opt) {
  v.scale(1.0 / v.norm());
  EigenEstimate e;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= opt.max_iter; ++it) {
    ParamVector w = apply(v);
    const double lambda = dot(v, w);
    ParamVector r = w;
    r.axpy(-lambda, v);
    e.lambda_max = lambda;
    e.iterations = it;
    e.residual = r.norm();
    e.rayleigh.push_back(lambda);
    const double wn = w.norm();
    if (!std::isfinite(lambda) || !std::isfinite(wn))
      throw Error("power iteration: non-finite Hessian-vector product");
    if (it > 1 && std::abs(lambda - prev) <= opt.tol * std::abs(lambda)) {
      e.vector = v;
      return e;
    }
    if (wn == 0.0) {  // v in the null space; lambda = 0 is exact
      e.vector = v;
      return e;
    }
    prev = lambda;
    v = std::move(w);
    v.scale(1.0 / wn);
  }
  throw ConvergenceError("power iteration: no convergence after " +
                             std::to_string(opt.max_iter) + " iterations (last estimate " +
                             std::to_string(e.lambda_max) + ", residual " +
                             std::to_string(e.residual) + ")",
                         opt.max_iter, e.lambda_max, e.residual);
}

}  // namespace detail

/// Largest Hessian eigenvalue by power iteration on finite-difference HVPs,
/// from a random unit start (or `start` when given).
template <GradientModel M>
EigenEstimate top_eigenvalue(const M& model, const ParamVector& params, const Batch& batch,
                             const EigenOptions& opt, SeededRng& rng,
                             const ParamVector* start = nullptr) {
  if (!(opt.tol > 0.0)) throw ArgumentError("top_eigenvalue: tol must be > 0");
  ParamVector v0;
  if (start && start->size() == params.size() && start->norm() > 0.0) {
    v0 = *start;
  } else {
    v0 = ParamVector(gaussian(rng, params.size(), 1.0));
  }
  auto apply = [&](const ParamVector& v) { return hvp(model, params, batch, v); };
  EigenEstimate e = detail::power_iteration(apply, v0, opt);
  if (e.lambda_max >= 0.0) return e;

  const double shift = e.lambda_max;
  auto shifted = [&](const ParamVector& v) {
    ParamVector w = hvp(model, params, batch, v);
    w.axpy(-shift, v);
    return w;
  };
  EigenEstimate top =
      detail::power_iteration(shifted, ParamVector(gaussian(rng, params.size(), 1.0)), opt);
  top.lambda_max += shift;
  top.negative_dominant = true;
  top.dominant = shift;
  return top;
}

struct EosPoint {
  long step = 0;
  double loss = 0.0;
  double lambda_max = 0.0;
};

struct EosOptions {
  double lr = 0.1;
  long steps = 2000;
  long measure_every = 50;
  /// Share of measurements, counted from the end, that form the late phase.
  double late_fraction = 0.5;
  double band = 0.2;  // +-20% around 2/lr
  EigenOptions eigen{1e-4, 2000};
};

struct EosTrace {
  std::vector<EosPoint> points;
  double threshold = 0.0;         // 2 / lr
  double fraction_in_band = 0.0;  // late-phase points within band of threshold
  double plateau = 0.0;           // median late-phase lambda_max
  ParamVector final_params;
};

/// Full-batch GD at a constant step size with lambda_max measured every
/// `measure_every` steps (and at the last step).
template <GradientModel M>
EosTrace eos_monitor(const M& model, ParamVector params, const Batch& data,
                     const EosOptions& opt, SeededRng& rng) {
  if (!(opt.lr > 0.0)) throw ArgumentError("eos_monitor: lr must be > 0");
  if (opt.measure_every < 1) throw ArgumentError("eos_monitor: measure_every must be >= 1");
  EosTrace trace;
  trace.threshold = 2.0 / opt.lr;
  GradientDescent gd;
  ParamVector warm;
  const double initial = model.loss(params, data);
  for (long step = 0; step <= opt.steps; ++step) {
    const bool measure = step % opt.measure_every == 0 || step == opt.steps;
    LossAndGrad lg = model.loss_and_grad(params, data);
    if (!std::isfinite(lg.loss) || lg.loss > 1e6 * std::max(initial, 1e-12))
      throw DivergenceError("eos_monitor: loss diverged at step " + std::to_string(step),
                            step);
    if (measure) {
      EigenEstimate e = top_eigenvalue(model, params, data, opt.eigen, rng,
                                       warm.size() ? &warm : nullptr);
      warm = e.vector;
      trace.points.push_back({step, lg.loss, e.lambda_max});
    }
    if (step == opt.steps) break;
    gd.step(params, lg.grad, opt.lr);
  }
  const std::size_t n = trace.points.size();
  const std::size_t late =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt.late_fraction * n)));
  std::vector<double> tail;
  std::size_t inside = 0;
  for (std::size_t i = n - late; i < n; ++i) {
    const double l = trace.points[i].lambda_max;
    tail.push_back(l);
    if (std::abs(l - trace.threshold) <= opt.band * trace.threshold) ++inside;
  }
  trace.fraction_in_band = static_cast<double>(inside) / static_cast<double>(late);
  trace.plateau = median(tail);
  trace.final_params = std::move(params);
  return trace;
}

struct ValidationRow {
  std::size_t checkpoint = 0;
  SharpnessEstimate proxy;
  EigenEstimate eigen;
};

struct ValidationTable {
  std::vector<ValidationRow> rows;
  std::optional<double> rank_correlation;  // empty when undefined
};

/// Proxy and top eigenvalue side by side for each checkpoint. The eigenvalue
/// is always taken on the same held-out batch. Every checkpoint sees the same
/// noise draws and the same power-iteration start, so repeated checkpoints
/// give identical rows.
template <ProbabilisticModel M>
ValidationTable sharpness_validation(const M& model, std::span<const ParamVector> checkpoints,
                                     std::span<const Batch> proxy_batches,
                                     const Batch& eigen_batch, const ProxyOptions& proxy,
                                     const EigenOptions& eigen, const SeededRng& rng) {
  if (checkpoints.size() < 2)
    throw ArgumentError("sharpness_validation: need at least two checkpoints");
  ValidationTable t;
  std::vector<double> px, ev;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    SeededRng noise = rng.fork(0);
    SeededRng start = rng.fork(1);
    ValidationRow row;
    row.checkpoint = c;
    row.proxy = perturbation_sharpness(model, checkpoints[c], proxy_batches, proxy, noise);
    row.eigen = top_eigenvalue(model, checkpoints[c], eigen_batch, eigen, start);
    row.eigen.vector = {};
    px.push_back(row.proxy.value);
    ev.push_back(row.eigen.lambda_max);
    t.rows.push_back(std::move(row));
  }
  t.rank_correlation = spearman(px, ev);
  return t;
}

}  // namespace driftlab
