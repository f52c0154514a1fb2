#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/smallnet.hpp"

namespace driftlab {

enum class ScheduleKind { kConstant, kDecayToZero, kWarmupStableDecay };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kDecayToZero: return "decay";
    case ScheduleKind::kWarmupStableDecay: return "wsd";
  }
  return "constant";
}

inline ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::kConstant;
  if (s == "decay") return ScheduleKind::kDecayToZero;
  if (s == "wsd") return ScheduleKind::kWarmupStableDecay;
  throw ArgumentError("unknown schedule '" + s + "' (expected constant, decay or wsd)");
}

/// Linear warmup to `peak`, then one of
///   constant: hold at peak
///   decay:    linear from peak at the end of warmup to final_fraction*peak at total_steps
///   wsd:      hold until decay_start, then linear to final_fraction*peak at total_steps
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double peak = 1e-3;
  long warmup_steps = 20;
  long total_steps = 1000;
  long decay_start = 0;
  double final_fraction = 0.0;

  double at(long step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    long start = 0;
    switch (kind) {
      case ScheduleKind::kConstant: return peak;
      case ScheduleKind::kDecayToZero: start = warmup_steps; break;
      case ScheduleKind::kWarmupStableDecay: start = std::max(decay_start, warmup_steps); break;
    }
    if (step < start) return peak;
    const long span = std::max(total_steps - start, 1L);
    const double frac = std::min(1.0, static_cast<double>(step - start) / static_cast<double>(span));
    return peak * (1.0 - frac * (1.0 - final_fraction));
  }
};

/// theta <- theta - lr * g
struct GradientDescent {
  void step(ParamVector& params, const ParamVector& grad, double lr) {
    params.axpy(-lr, grad);
  }
};

/// Adaptive moment estimation with decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  s <- b2 s + (1 - b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(s_hat) + eps) + wd * theta)
class AdaptiveMoments {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdaptiveMoments() = default;
  explicit AdaptiveMoments(Options opt) : opt_(opt) {}

  void step(ParamVector& params, const ParamVector& grad, double lr) {
    if (m_.size() != params.size()) {
      m_ = ParamVector(params.size());
      s_ = ParamVector(params.size());
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      s_[i] = opt_.beta2 * s_[i] + (1.0 - opt_.beta2) * g * g;
      const double mh = m_[i] / c1;
      const double sh = s_[i] / c2;
      params[i] -= lr * (mh / (std::sqrt(sh) + opt_.eps) + opt_.weight_decay * params[i]);
    }
  }

 private:
  Options opt_;
  ParamVector m_, s_;
  long t_ = 0;
};

}  // namespace driftlab
