#pragma once

// Loss and representation drift along a single optimizer step, evaluated on
// the segment (1 - alpha) theta_t + alpha theta_{t+1}.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "driftlab/error.hpp"
#include "driftlab/format.hpp"
#include "driftlab/smallnet.hpp"
#include "driftlab/subspace.hpp"

namespace driftlab {

inline constexpr std::size_t kDefaultAlphaPoints = 21;
inline constexpr double kConvexityTol = 1e-6;
inline constexpr int kLandscapeSchemaVersion = 1;

inline ParamVector interpolate(const ParamVector& a, const ParamVector& b, double alpha) {
  if (a.size() != b.size())
    throw ShapeError("interpolate: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ArgumentError("interpolate: alpha must lie in [0, 1], got " + format_double(alpha));
  ParamVector out(a.size());
  // endpoints are returned bit-exactly
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = (1.0 - alpha) * a[i] + alpha * b[i];
  return out;
}

/// n uniform points from 0 to 1 inclusive.
inline std::vector<double> uniform_alpha_grid(std::size_t n = kDefaultAlphaPoints) {
  if (n < 2) throw ArgumentError("uniform_alpha_grid: need at least 2 points");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  g.back() = 1.0;
  return g;
}

inline void validate_alpha_grid(std::span<const double> g) {
  if (g.size() < 2) throw ArgumentError("alpha grid: need at least 2 points");
  if (g.front() != 0.0 || g.back() != 1.0)
    throw ArgumentError("alpha grid: must start at 0 and end at 1");
  for (std::size_t i = 1; i < g.size(); ++i)
    if (!(g[i] > g[i - 1]))
      throw ArgumentError("alpha grid: not strictly increasing at index " + std::to_string(i));
}

/// Discrete convexity on a possibly nonuniform grid: every slope is at least
/// the previous one, up to tol * max|loss| scaled by the gap.
inline bool is_convex(std::span<const double> alphas, std::span<const double> losses,
                      double rel_tol = kConvexityTol) {
  if (alphas.size() != losses.size()) throw ShapeError("is_convex: length mismatch");
  double scale = 0.0;
  for (double l : losses) scale = std::max(scale, std::abs(l));
  const double tol = rel_tol * scale;
  for (std::size_t i = 1; i + 1 < losses.size(); ++i) {
    const double h0 = alphas[i] - alphas[i - 1];
    const double h1 = alphas[i + 1] - alphas[i];
    // slope change times the mean gap: l[i+1] - 2 l[i] + l[i-1] on a uniform grid
    const double second = ((losses[i + 1] - losses[i]) / h1 - (losses[i] - losses[i - 1]) / h0) *
                          0.5 * (h0 + h1);
    if (second < -tol) return false;
  }
  return true;
}

struct StepProfile {
  long step_index = 0;
  std::vector<double> alphas;
  std::vector<double> losses;
  std::map<std::size_t, std::vector<double>> mpa_per_layer;
  bool convex_flag = false;
  double delta_loss = 0.0;  // loss(0) - loss(1), positive when the step makes progress
  std::map<std::size_t, double> delta_mpa;  // mpa(1) - mpa(0)
};

struct ProfileOptions {
  std::size_t k = kDefaultMpaK;
  std::vector<std::size_t> layers;  // empty: every hidden layer
  double convexity_tol = kConvexityTol;
};

/// Loss (and, for models exposing activations, MPA against `base`) along one
/// step. The MPA reference is always the base model, never theta_t.
template <GradientModel M>
StepProfile step_profile(const M& model, const ParamVector& base, const ParamVector& theta_t,
                         const ParamVector& theta_t1, const Batch& eval,
                         std::span<const double> alpha_grid, const ProfileOptions& opt = {},
                         long step_index = 0) {
  validate_alpha_grid(alpha_grid);
  if (theta_t.size() != theta_t1.size() || base.size() != theta_t.size())
    throw ShapeError("step_profile: parameter lengths differ");

  StepProfile prof;
  prof.step_index = step_index;
  prof.alphas.assign(alpha_grid.begin(), alpha_grid.end());

  [[maybe_unused]] std::vector<ActivationMatrix> base_act;
  [[maybe_unused]] std::vector<std::size_t> layers = opt.layers;
  if constexpr (RepresentationModel<M>) {
    base_act = model.activations(base, eval.inputs);
    if (layers.empty())
      for (std::size_t l = 0; l < base_act.size(); ++l) layers.push_back(l);
    for (std::size_t l : layers)
      if (l >= base_act.size())
        throw ArgumentError("step_profile: layer " + std::to_string(l) + " out of range");
  }

  for (double a : prof.alphas) {
    const ParamVector p = interpolate(theta_t, theta_t1, a);
    const double l = model.loss(p, eval);
    if (!std::isfinite(l))
      throw Error("step_profile: non-finite loss at alpha " + format_double(a) + ", step " +
                  std::to_string(step_index));
    prof.losses.push_back(l);
    if constexpr (RepresentationModel<M>) {
      const auto act = model.activations(p, eval.inputs);
      for (std::size_t layer : layers)
        prof.mpa_per_layer[layer].push_back(
            mpa_from_activations(base_act[layer], act[layer], opt.k).mean);
    }
  }

  prof.convex_flag = is_convex(prof.alphas, prof.losses, opt.convexity_tol);
  prof.delta_loss = prof.losses.front() - prof.losses.back();
  for (const auto& [layer, m] : prof.mpa_per_layer) prof.delta_mpa[layer] = m.back() - m.front();
  return prof;
}

template <GradientModel M>
StepProfile step_profile(const M& model, const ParamVector& base, const ParamVector& theta_t,
                         const ParamVector& theta_t1, const Batch& eval,
                         const ProfileOptions& opt = {}, long step_index = 0) {
  const auto grid = uniform_alpha_grid();
  return step_profile(model, base, theta_t, theta_t1, eval, std::span<const double>(grid), opt,
                      step_index);
}

struct RatioEntry {
  double alpha = 0.0;
  std::optional<double> ratio;  // empty when flagged
  bool non_descending = false;
};

/// r(alpha) = alpha / (loss(0) - loss(alpha)) on interior grid points. Points
/// where the loss has not dropped are flagged instead of computed.
inline std::vector<RatioEntry> loss_drop_ratio(const StepProfile& prof) {
  if (prof.alphas.size() != prof.losses.size()) throw ShapeError("loss_drop_ratio: bad profile");
  std::vector<RatioEntry> out;
  const double l0 = prof.losses.front();
  for (std::size_t i = 1; i + 1 < prof.alphas.size(); ++i) {
    RatioEntry e;
    e.alpha = prof.alphas[i];
    const double drop = l0 - prof.losses[i];
    if (drop > 0.0)
      e.ratio = e.alpha / drop;
    else
      e.non_descending = true;
    out.push_back(e);
  }
  return out;
}

/// True when every computed ratio is at least its predecessor minus tol.
inline bool ratio_nondecreasing(std::span<const RatioEntry> r, double tol = 1e-9) {
  std::optional<double> prev;
  for (const auto& e : r) {
    if (!e.ratio) return false;
    if (prev && *e.ratio < *prev - tol) return false;
    prev = e.ratio;
  }
  return true;
}

/// True when losses strictly decrease from alpha = 0 at every interior point.
inline bool strictly_descending(const StepProfile& prof) {
  for (std::size_t i = 1; i < prof.losses.size(); ++i)
    if (!(prof.losses[i] < prof.losses[0])) return false;
  return true;
}

inline void write_profile_csv_header(std::ostream& os) {
  os << "# schema_version=" << kLandscapeSchemaVersion
     << "; delta_loss=loss(0)-loss(1), positive means progress\n";
  os << "step,alpha,loss,layer,mpa,convex_flag\n";
}

/// One row per (alpha, layer); models without layers get one row per alpha
/// with empty layer and mpa fields.
inline void write_profile_csv(std::ostream& os, const StepProfile& prof) {
  for (std::size_t i = 0; i < prof.alphas.size(); ++i) {
    const std::string head = std::to_string(prof.step_index) + "," +
                             format_double(prof.alphas[i]) + "," +
                             format_double(prof.losses[i]) + ",";
    const char* flag = prof.convex_flag ? "1" : "0";
    if (prof.mpa_per_layer.empty()) {
      os << head << ",," << flag << "\n";
      continue;
    }
    for (const auto& [layer, m] : prof.mpa_per_layer)
      os << head << layer << "," << format_double(m[i]) << "," << flag << "\n";
  }
}

}  // namespace driftlab
