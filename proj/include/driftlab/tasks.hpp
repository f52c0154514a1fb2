#pragma once

// Synthetic classification tasks. A task is a random teacher network that
// only reads a contiguous block of input coordinates; two tasks with
// overlapping blocks share some features and differ on others.

#include <cstdint>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/matrix.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/smallnet.hpp"

namespace driftlab {

struct TeacherSpec {
  std::size_t input_dim = 16;
  std::size_t feature_begin = 0;  // first coordinate the teacher reads
  std::size_t feature_end = 10;   // one past the last
  std::size_t hidden = 32;  // 0 gives a linear teacher
  std::size_t classes = 4;
  std::size_t label_offset = 0;  // labels are emitted as label_offset + class
  double label_noise = 0.0;  // probability of replacing a label uniformly at random

  void validate() const {
    if (!(feature_begin < feature_end && feature_end <= input_dim))
      throw ArgumentError("TeacherSpec: need feature_begin < feature_end <= input_dim");
    if (classes < 2) throw ArgumentError("TeacherSpec: need at least two classes");
    if (!(label_noise >= 0.0 && label_noise <= 1.0))
      throw ArgumentError("TeacherSpec: label_noise must lie in [0, 1]");
  }
};

class TeacherTask {
 public:
  /// Teacher weights are drawn for all input coordinates from `seed` and the
  /// first layer is then masked to the feature block. Two tasks built from
  /// the same seed therefore agree on the coordinates their blocks share.
  TeacherTask(TeacherSpec spec, std::uint64_t seed) : spec_(spec), net_(teacher_model(spec)) {
    SeededRng rng(seed);
    params_ = ParamVector(net_.num_params());
    for (std::size_t l = 0; l < net_.layout().layers(); ++l) {
      const auto& slot = net_.layout().slot(l);
      const double scale = 1.5 / std::sqrt(static_cast<double>(
                                     l == 0 ? spec_.feature_end - spec_.feature_begin : slot.in));
      for (std::size_t o = 0; o < slot.out; ++o)
        for (std::size_t i = 0; i < slot.in; ++i) {
          const double w = scale * rng.normal();
          const bool masked = l == 0 && (i < spec_.feature_begin || i >= spec_.feature_end);
          params_[slot.weight_offset + o * slot.in + i] = masked ? 0.0 : w;
        }
    }
  }

  const TeacherSpec& spec() const { return spec_; }

  std::size_t label(std::span<const double> x) const {
    Matrix in(1, spec_.input_dim, std::vector<double>(x.begin(), x.end()));
    const Matrix z = net_.logits(params_, in);
    auto row = z.row(0);
    return spec_.label_offset +
           static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }

  /// n fresh samples x ~ N(0, I) with teacher labels. Label noise applies
  /// only when `noisy` is set, so evaluation sets can use clean labels.
  Batch sample(std::size_t n, SeededRng& rng, bool noisy = true) const {
    Batch b{Matrix::gaussian(n, spec_.input_dim, rng), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      b.labels[i] = label(b.inputs.row(i));
      if (noisy && spec_.label_noise > 0.0 && rng.uniform() < spec_.label_noise)
        b.labels[i] = spec_.label_offset + static_cast<std::size_t>(rng.index(spec_.classes));
    }
    return b;
  }

 private:
  static Mlp teacher_model(const TeacherSpec& spec) {
    spec.validate();
    const std::size_t in = spec.input_dim;
    if (spec.hidden == 0) return Mlp(ModelSpec{{in, spec.classes}, Activation::kTanh});
    return Mlp(ModelSpec{{in, spec.hidden, spec.classes}, Activation::kTanh});
  }

  TeacherSpec spec_;
  Mlp net_;
  ParamVector params_;
};

/// Rows [begin, end) of a batch.
inline Batch slice(const Batch& b, std::size_t begin, std::size_t end) {
  if (begin > end || end > b.size()) throw ArgumentError("slice: range out of bounds");
  Batch out{Matrix(end - begin, b.inputs.cols()), {}};
  for (std::size_t i = begin; i < end; ++i) {
    auto src = b.inputs.row(i);
    std::copy(src.begin(), src.end(), out.inputs.row(i - begin).begin());
    out.labels.push_back(b.labels[i]);
  }
  return out;
}

/// Selected rows of a batch, in the given order.
inline Batch gather(const Batch& b, std::span<const std::size_t> rows) {
  Batch out{Matrix(rows.size(), b.inputs.cols()), {}};
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = b.inputs.row(rows[i]);
    std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
    out.labels.push_back(b.labels[rows[i]]);
  }
  return out;
}

}  // namespace driftlab
