#pragma once

// Small fully-connected softmax classifier with hand-written backprop.
// Parameters live in one flat vector so that perturbation, interpolation and
// Hessian-vector products can treat any model uniformly.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "driftlab/error.hpp"
#include "driftlab/matrix.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/subspace.hpp"

namespace driftlab {

/// Flat parameter vector with a few vector-space helpers.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double norm() const { return norm2(values); }

  /// this += a * x
  ParamVector& axpy(double a, const ParamVector& x) {
    if (x.size() != size())
      throw ShapeError("ParamVector::axpy: lengths " + std::to_string(size()) + " and " +
                       std::to_string(x.size()));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += a * x.values[i];
    return *this;
  }
  ParamVector& scale(double a) {
    for (double& v : values) v *= a;
    return *this;
  }

  bool operator==(const ParamVector&) const = default;
};

inline double dot(const ParamVector& a, const ParamVector& b) {
  return dot(std::span<const double>(a.values), std::span<const double>(b.values));
}

struct Batch {
  Matrix inputs;                    // m x input_dim
  std::vector<std::size_t> labels;  // m class indices

  std::size_t size() const { return inputs.rows(); }
};

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

template <typename M>
concept GradientModel = requires(const M& m, const ParamVector& p, const Batch& b) {
  { m.num_params() } -> std::convertible_to<std::size_t>;
  { m.loss(p, b) } -> std::convertible_to<double>;
  { m.loss_and_grad(p, b) } -> std::same_as<LossAndGrad>;
};

template <typename M>
concept ProbabilisticModel =
    GradientModel<M> && requires(const M& m, const ParamVector& p, const Matrix& x) {
      { m.log_probs(p, x) } -> std::same_as<Matrix>;
    };

template <typename M>
concept RepresentationModel =
    requires(const M& m, const ParamVector& p, const Matrix& x) {
      { m.activations(p, x) } -> std::same_as<std::vector<ActivationMatrix>>;
    };

enum class Activation { kTanh, kRelu };

inline std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ArgumentError("unknown activation '" + s + "' (expected tanh or relu)");
}

/// Training objective, averaged over the batch.
///   cross_entropy: -log softmax(z)_y
///   squared:       1/2 |z - onehot(y)|^2 on the raw logits
enum class LossKind { kCrossEntropy, kSquared };

inline std::string to_string(LossKind k) {
  return k == LossKind::kCrossEntropy ? "cross_entropy" : "squared";
}

inline LossKind loss_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::kCrossEntropy;
  if (s == "squared") return LossKind::kSquared;
  throw ArgumentError("unknown loss '" + s + "' (expected cross_entropy or squared)");
}

/// Layer widths run input, hidden..., classes.
struct ModelSpec {
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::kTanh;
  LossKind loss = LossKind::kCrossEntropy;

  void validate() const {
    if (layer_widths.size() < 2)
      throw ArgumentError("ModelSpec: need at least input and output widths");
    for (auto w : layer_widths)
      if (w == 0) throw ArgumentError("ModelSpec: widths must be >= 1");
  }
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t classes() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  bool operator==(const ModelSpec&) const = default;
};

/// Position of each layer's weight (out x in, row-major) and bias inside the
/// flat vector. Layers are stored in order, weights before bias.
class ParamLayout {
 public:
  struct Slot {
    std::size_t weight_offset;
    std::size_t bias_offset;
    std::size_t in;
    std::size_t out;
  };

  ParamLayout() = default;
  explicit ParamLayout(const ModelSpec& spec) {
    spec.validate();
    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
      slots_.push_back({off, off + in * out, in, out});
      off += in * out + out;
    }
    total_ = off;
  }

  std::size_t size() const { return total_; }
  const Slot& slot(std::size_t layer) const { return slots_.at(layer); }
  std::size_t layers() const { return slots_.size(); }

  std::size_t weight_index(std::size_t layer, std::size_t row, std::size_t col) const {
    const Slot& s = slot(layer);
    return s.weight_offset + row * s.in + col;
  }
  std::size_t bias_index(std::size_t layer, std::size_t row) const {
    return slot(layer).bias_offset + row;
  }

 private:
  std::vector<Slot> slots_;
  std::size_t total_ = 0;
};

struct ForwardResult {
  Matrix logits;
  std::vector<ActivationMatrix> activations;  // post-nonlinearity, one per hidden layer
};

/// Row-wise softmax probabilities.
struct PredictiveDist {
  Matrix probs;
};

/// Row-wise log-softmax with max subtraction.
inline Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < z.size(); ++j) o[j] = z[j] - lse;
  }
  return out;
}

inline PredictiveDist softmax(const Matrix& logits) {
  PredictiveDist d{log_softmax(logits)};
  for (double& v : d.probs.data()) v = std::exp(v);
  return d;
}

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(ModelSpec spec) : spec_(std::move(spec)), layout_(spec_) {}

  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t num_params() const { return layout_.size(); }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)) per weight; biases zero.
  ParamVector init(SeededRng& rng) const {
    ParamVector p(num_params());
    for (std::size_t l = 0; l < layout_.layers(); ++l) {
      const auto& s = layout_.slot(l);
      const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
      for (std::size_t i = 0; i < s.in * s.out; ++i)
        p[s.weight_offset + i] = rng.uniform(-limit, limit);
    }
    return p;
  }

  ForwardResult forward(const ParamVector& p, const Matrix& x) const {
    check(p, x);
    ForwardResult r;
    Matrix a = x;
    for (std::size_t l = 0; l < layout_.layers(); ++l) {
      Matrix z = affine(p, l, a);
      if (l + 1 == layout_.layers()) {
        r.logits = std::move(z);
      } else {
        apply_activation(z);
        r.activations.push_back(ActivationMatrix{l, z});
        a = std::move(z);
      }
    }
    return r;
  }

  ForwardResult forward(const ParamVector& p, const Batch& b) const {
    return forward(p, b.inputs);
  }

  Matrix logits(const ParamVector& p, const Matrix& x) const {
    check(p, x);
    Matrix a = x;
    for (std::size_t l = 0; l < layout_.layers(); ++l) {
      Matrix z = affine(p, l, a);
      if (l + 1 < layout_.layers()) apply_activation(z);
      a = std::move(z);
    }
    return a;
  }

  Matrix log_probs(const ParamVector& p, const Matrix& x) const {
    return log_softmax(logits(p, x));
  }

  PredictiveDist predict(const ParamVector& p, const Matrix& x) const {
    return softmax(logits(p, x));
  }

  std::vector<ActivationMatrix> activations(const ParamVector& p, const Matrix& x) const {
    return forward(p, x).activations;
  }

  /// Batch-mean training objective.
  double loss(const ParamVector& p, const Batch& b) const {
    check_labels(b);
    double s = 0.0;
    if (spec_.loss == LossKind::kCrossEntropy) {
      const Matrix lp = log_probs(p, b.inputs);
      for (std::size_t i = 0; i < b.size(); ++i) s -= lp(i, b.labels[i]);
    } else {
      const Matrix z = logits(p, b.inputs);
      for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t c = 0; c < z.cols(); ++c) {
          const double e = z(i, c) - (c == b.labels[i] ? 1.0 : 0.0);
          s += 0.5 * e * e;
        }
    }
    return s / static_cast<double>(b.size());
  }

  /// Fraction of rows whose arg-max logit matches the label. When a class
  /// range is given, the arg-max is taken over that block of logits only.
  double accuracy(const ParamVector& p, const Batch& b, std::size_t class_begin = 0,
                  std::size_t class_end = 0) const {
    check_labels(b);
    if (class_end == 0) class_end = spec_.classes();
    if (class_begin >= class_end || class_end > spec_.classes())
      throw ArgumentError("Mlp::accuracy: bad class range");
    const Matrix z = logits(p, b.inputs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto row = z.row(i);
      const auto arg = class_begin + static_cast<std::size_t>(
          std::max_element(row.begin() + class_begin, row.begin() + class_end) -
          row.begin() - class_begin);
      hits += arg == b.labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(b.size());
  }

  LossAndGrad loss_and_grad(const ParamVector& p, const Batch& b) const {
    check(p, b.inputs);
    check_labels(b);
    const std::size_t layers = layout_.layers();
    const std::size_t m = b.size();
    // inputs to each layer, post-activation
    std::vector<Matrix> acts;
    acts.reserve(layers);
    acts.push_back(b.inputs);
    Matrix z;
    for (std::size_t l = 0; l < layers; ++l) {
      z = affine(p, l, acts.back());
      if (l + 1 < layers) {
        apply_activation(z);
        acts.push_back(z);
      }
    }
    LossAndGrad out{0.0, ParamVector(num_params())};
    const double inv_m = 1.0 / static_cast<double>(m);
    Matrix delta(m, spec_.classes());
    if (spec_.loss == LossKind::kCrossEntropy) {
      const Matrix lp = log_softmax(z);
      for (std::size_t i = 0; i < m; ++i) {
        out.loss -= lp(i, b.labels[i]);
        for (std::size_t c = 0; c < spec_.classes(); ++c)
          delta(i, c) = std::exp(lp(i, c)) * inv_m;
        delta(i, b.labels[i]) -= inv_m;
      }
    } else {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < spec_.classes(); ++c) {
          const double e = z(i, c) - (c == b.labels[i] ? 1.0 : 0.0);
          out.loss += 0.5 * e * e;
          delta(i, c) = e * inv_m;
        }
    }
    out.loss *= inv_m;

    for (std::size_t l = layers; l-- > 0;) {
      const auto& s = layout_.slot(l);
      const Matrix& a_in = acts[l];
      // dW = delta^T a_in, db = column sums of delta
      for (std::size_t i = 0; i < m; ++i) {
        auto drow = delta.row(i);
        auto arow = a_in.row(i);
        for (std::size_t o = 0; o < s.out; ++o) {
          const double dv = drow[o];
          if (dv == 0.0) continue;
          double* gw = out.grad.values.data() + s.weight_offset + o * s.in;
          for (std::size_t k = 0; k < s.in; ++k) gw[k] += dv * arow[k];
          out.grad[s.bias_offset + o] += dv;
        }
      }
      if (l == 0) break;
      Matrix back(m, s.in);
      for (std::size_t i = 0; i < m; ++i) {
        auto drow = delta.row(i);
        auto brow = back.row(i);
        for (std::size_t o = 0; o < s.out; ++o) {
          const double dv = drow[o];
          if (dv == 0.0) continue;
          const double* w = p.values.data() + s.weight_offset + o * s.in;
          for (std::size_t k = 0; k < s.in; ++k) brow[k] += dv * w[k];
        }
        auto arow = a_in.row(i);
        for (std::size_t k = 0; k < s.in; ++k) brow[k] *= activation_derivative(arow[k]);
      }
      delta = std::move(back);
    }
    return out;
  }

 private:
  void check(const ParamVector& p, const Matrix& x) const {
    if (p.size() != num_params())
      throw ShapeError("Mlp: parameter vector has length " + std::to_string(p.size()) +
                       ", model needs " + std::to_string(num_params()));
    if (x.cols() != spec_.input_dim())
      throw ShapeError("Mlp: input " + x.shape() + " does not match input width " +
                       std::to_string(spec_.input_dim()));
  }

  void check_labels(const Batch& b) const {
    if (b.labels.size() != b.inputs.rows())
      throw ShapeError("Mlp: " + std::to_string(b.labels.size()) + " labels for " +
                       std::to_string(b.inputs.rows()) + " inputs");
    if (b.labels.empty()) throw ArgumentError("Mlp: empty batch");
    for (auto y : b.labels)
      if (y >= spec_.classes())
        throw ArgumentError("Mlp: label " + std::to_string(y) + " out of range");
  }

  Matrix affine(const ParamVector& p, std::size_t l, const Matrix& a) const {
    const auto& s = layout_.slot(l);
    Matrix z(a.rows(), s.out);
    const double* w = p.values.data() + s.weight_offset;
    const double* bias = p.values.data() + s.bias_offset;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      auto arow = a.row(i);
      auto zrow = z.row(i);
      for (std::size_t o = 0; o < s.out; ++o) {
        const double* wr = w + o * s.in;
        double acc = bias[o];
        for (std::size_t k = 0; k < s.in; ++k) acc += wr[k] * arow[k];
        zrow[o] = acc;
      }
    }
    return z;
  }

  void apply_activation(Matrix& z) const {
    if (spec_.activation == Activation::kTanh) {
      for (double& v : z.data()) v = std::tanh(v);
    } else {
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
    }
  }

  // Derivative expressed through the activation output.
  double activation_derivative(double a) const {
    if (spec_.activation == Activation::kTanh) return 1.0 - a * a;
    return a > 0.0 ? 1.0 : 0.0;
  }

  ModelSpec spec_;
  ParamLayout layout_;
};

/// Central-difference Hessian-vector product:
/// (grad L(theta + h v) - grad L(theta - h v)) / 2h with h = 1e-4 / |v|.
template <GradientModel M>
ParamVector hvp(const M& model, const ParamVector& params, const Batch& batch,
                const ParamVector& vec) {
  const double nv = vec.norm();
  if (!(nv > 0.0)) throw ArgumentError("hvp: direction must be nonzero");
  const double h = 1e-4 / nv;
  ParamVector plus = params, minus = params;
  plus.axpy(h, vec);
  minus.axpy(-h, vec);
  ParamVector g = model.loss_and_grad(plus, batch).grad;
  g.axpy(-1.0, model.loss_and_grad(minus, batch).grad);
  g.scale(1.0 / (2.0 * h));
  return g;
}

}  // namespace driftlab
