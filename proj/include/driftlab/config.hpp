#pragma once

// Experiment configuration: strict JSON parsing (unknown keys are errors),
// validation before any compute, and a canonical hash of the normalized form.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "driftlab/dln.hpp"
#include "driftlab/error.hpp"
#include "driftlab/optim.hpp"
#include "driftlab/smallnet.hpp"

namespace driftlab::exp {

using json = nlohmann::json;

enum class ExperimentKind {
  kDlnFig4,
  kDlnSharpness,
  kSftLrSweep,
  kOvertrainingScan,
  kEos,
  kLandscapeScan,
  kSharpnessValidation,
};

inline const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names{
      {ExperimentKind::kDlnFig4, "dln_fig4"},
      {ExperimentKind::kDlnSharpness, "dln_sharpness"},
      {ExperimentKind::kSftLrSweep, "sft_lr_sweep"},
      {ExperimentKind::kOvertrainingScan, "overtraining_scan"},
      {ExperimentKind::kEos, "eos"},
      {ExperimentKind::kLandscapeScan, "landscape_scan"},
      {ExperimentKind::kSharpnessValidation, "sharpness_validation"},
  };
  return names;
}

inline std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "?";
}

inline ExperimentKind kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

struct ModelConfig {
  std::vector<std::size_t> widths{16, 32, 32, 4};
  Activation activation = Activation::kTanh;
  LossKind loss = LossKind::kSquared;

  ModelSpec spec() const { return ModelSpec{widths, activation, loss}; }
};

/// Task A ("pretraining") and task B ("finetuning") share one teacher draw and
/// differ in the input features they read: [begin, end) of the input vector.
struct DataConfig {
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  std::array<std::size_t, 2> task_a{0, 12};
  std::array<std::size_t, 2> task_b{4, 16};
  std::size_t teacher_hidden = 0;  // 0: linear teacher
  double label_noise = 0.1;        // task A training labels only
  std::size_t n_train_a = 1000;
  std::size_t n_heldout_a = 2000;
  std::size_t n_train_b = 256;
};

struct PretrainConfig {
  ScheduleKind schedule = ScheduleKind::kWarmupStableDecay;
  double lr = 0.5;
  long warmup_steps = 20;
  long steps = 6000;
  long decay_start = 2000;
  double final_fraction = 0.05;
  std::size_t batch_size = 8;  // 0: full batch
  std::vector<long> checkpoints{1000, 2000, 4000, 6000};
  bool control = true;  // also run a constant-lr control with the same seed

  LrSchedule schedule_for(bool constant) const {
    LrSchedule s;
    s.kind = constant ? ScheduleKind::kConstant : schedule;
    s.peak = lr;
    s.warmup_steps = warmup_steps;
    s.total_steps = steps;
    s.decay_start = decay_start;
    s.final_fraction = final_fraction;
    return s;
  }
};

struct FinetuneConfig {
  std::vector<double> lrs{0.003, 0.03, 0.3};
  long steps = 1000;
  std::size_t batch_size = 32;
  long warmup_steps = 20;
  long eval_every = 25;
  std::size_t repeats = 1;  // independent batch orders per cell
};

struct SharpnessConfig {
  double sigma = 1e-5;
  std::size_t n_noise = 10;
  double eigen_tol = 1e-4;
  int eigen_max_iter = 2000;
};

struct DlnConfig {
  dln::SupportSpec supports{};
  std::size_t n = 50;
  std::vector<double> lrs{1e-2, 1e-1};
  std::size_t batch_size = 10;
  long max_steps = 400000;
  double loss_threshold = 1e-6;
  double alpha_init = 1e-3;
  dln::SignMode signs = dln::SignMode::kPositive;
  double sharpness_scale = 4.0;
  dln::SharpnessControl control = dln::SharpnessControl::kMagnitude;
};

struct EosConfig {
  std::vector<double> lrs{1.0, 0.5};
  long steps = 4000;
  long measure_every = 100;
  double late_fraction = 0.5;
  double band = 0.2;
};

struct LandscapeConfig {
  double lr = 0.3;
  long scan_steps = 100;
  std::size_t alpha_points = 21;
};

struct ValidationConfig {
  double lr = 1.0;
  double final_fraction = 0.1;
  long steps = 4000;
  std::size_t checkpoints = 11;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kOvertrainingScan;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out_dir = "out";
  std::size_t workers = 0;  // 0: hardware concurrency
  std::size_t mpa_k = 8;
  ModelConfig model;
  DataConfig data;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  SharpnessConfig sharpness;
  DlnConfig dln;
  EosConfig eos;
  LandscapeConfig landscape;
  ValidationConfig validation;
};

namespace detail {

template <typename T>
struct is_std_vector : std::false_type {};
template <typename T>
struct is_std_vector<std::vector<T>> : std::true_type {};
template <typename T>
struct is_std_array : std::false_type {};
template <typename T, std::size_t N>
struct is_std_array<std::array<T, N>> : std::true_type {};

/// Stricter than json::get: no bool/number mixing, no fractional or negative
/// values for integer fields, exact length for fixed-size arrays.
template <typename T>
bool json_matches(const json& j) {
  if constexpr (std::is_same_v<T, bool>) {
    return j.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    if (j.is_number_unsigned()) return true;
    if (!j.is_number_integer()) return false;
    return std::is_signed_v<T> || j.get<long long>() >= 0;
  } else if constexpr (std::is_floating_point_v<T>) {
    return j.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return j.is_string();
  } else if constexpr (is_std_vector<T>::value || is_std_array<T>::value) {
    if (!j.is_array()) return false;
    if constexpr (is_std_array<T>::value)
      if (j.size() != std::tuple_size_v<T>) return false;
    for (const auto& e : j)
      if (!json_matches<typename T::value_type>(e)) return false;
    return true;
  } else {
    return true;
  }
}

/// Reads keys of one JSON object and remembers which ones were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    if (!json_matches<T>(*it))
      throw ConfigError(where(key) + ": wrong type or value (" + it->dump() + ")");
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string where(const char* key = nullptr) const {
    return key ? path_ + "." + key : path_;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where() + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void fail(const std::string& what) { throw ConfigError(what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(what);
}

inline void require_positive(double x, const std::string& what) {
  require(x > 0.0 && std::isfinite(x), what + " must be positive and finite");
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader top(j, "config");
  std::string kind;
  top.get("kind", kind);
  if (kind.empty()) throw ConfigError("config.kind: missing");
  c.kind = kind_from_string(kind);
  top.get("seeds", c.seeds);
  top.get("out_dir", c.out_dir);
  top.get("workers", c.workers);
  top.get("mpa_k", c.mpa_k);

  if (const json* m = top.child("model")) {
    ObjectReader r(*m, "config.model");
    r.get("widths", c.model.widths);
    r.get_enum("activation", c.model.activation, activation_from_string);
    r.get_enum("loss", c.model.loss, loss_from_string);
    r.finish();
  }
  if (const json* d = top.child("data")) {
    ObjectReader r(*d, "config.data");
    r.get("input_dim", c.data.input_dim);
    r.get("classes", c.data.classes);
    r.get("task_a_features", c.data.task_a);
    r.get("task_b_features", c.data.task_b);
    r.get("teacher_hidden", c.data.teacher_hidden);
    r.get("label_noise", c.data.label_noise);
    r.get("n_train_a", c.data.n_train_a);
    r.get("n_heldout_a", c.data.n_heldout_a);
    r.get("n_train_b", c.data.n_train_b);
    r.finish();
  }
  if (const json* p = top.child("pretrain")) {
    ObjectReader r(*p, "config.pretrain");
    r.get_enum("schedule", c.pretrain.schedule, schedule_from_string);
    r.get("lr", c.pretrain.lr);
    r.get("warmup_steps", c.pretrain.warmup_steps);
    r.get("steps", c.pretrain.steps);
    r.get("decay_start", c.pretrain.decay_start);
    r.get("final_fraction", c.pretrain.final_fraction);
    r.get("batch_size", c.pretrain.batch_size);
    r.get("checkpoints", c.pretrain.checkpoints);
    r.get("control", c.pretrain.control);
    r.finish();
  }
  if (const json* f = top.child("finetune")) {
    ObjectReader r(*f, "config.finetune");
    r.get("lrs", c.finetune.lrs);
    r.get("steps", c.finetune.steps);
    r.get("batch_size", c.finetune.batch_size);
    r.get("warmup_steps", c.finetune.warmup_steps);
    r.get("eval_every", c.finetune.eval_every);
    r.get("repeats", c.finetune.repeats);
    r.finish();
  }
  if (const json* s = top.child("sharpness")) {
    ObjectReader r(*s, "config.sharpness");
    r.get("sigma", c.sharpness.sigma);
    r.get("n_noise", c.sharpness.n_noise);
    r.get("eigen_tol", c.sharpness.eigen_tol);
    r.get("eigen_max_iter", c.sharpness.eigen_max_iter);
    r.finish();
  }
  if (const json* d = top.child("dln")) {
    ObjectReader r(*d, "config.dln");
    std::array<std::size_t, 4> sup{c.dln.supports.a, c.dln.supports.z1, c.dln.supports.b,
                                   c.dln.supports.z2};
    r.get("supports", sup);
    c.dln.supports.a = sup[0];
    c.dln.supports.z1 = sup[1];
    c.dln.supports.b = sup[2];
    c.dln.supports.z2 = sup[3];
    r.get("d", c.dln.supports.d);
    r.get("n", c.dln.n);
    r.get("lrs", c.dln.lrs);
    r.get("batch_size", c.dln.batch_size);
    r.get("max_steps", c.dln.max_steps);
    r.get("loss_threshold", c.dln.loss_threshold);
    r.get("alpha_init", c.dln.alpha_init);
    r.get_enum("signs", c.dln.signs, [](const std::string& s) {
      if (s == "positive") return dln::SignMode::kPositive;
      if (s == "random") return dln::SignMode::kRandom;
      throw ArgumentError("unknown sign mode '" + s + "' (expected positive|random)");
    });
    r.get("sharpness_scale", c.dln.sharpness_scale);
    r.get_enum("control", c.dln.control, dln::sharpness_control_from_string);
    r.finish();
  }
  if (const json* e = top.child("eos")) {
    ObjectReader r(*e, "config.eos");
    r.get("lrs", c.eos.lrs);
    r.get("steps", c.eos.steps);
    r.get("measure_every", c.eos.measure_every);
    r.get("late_fraction", c.eos.late_fraction);
    r.get("band", c.eos.band);
    r.finish();
  }
  if (const json* l = top.child("landscape")) {
    ObjectReader r(*l, "config.landscape");
    r.get("lr", c.landscape.lr);
    r.get("scan_steps", c.landscape.scan_steps);
    r.get("alpha_points", c.landscape.alpha_points);
    r.finish();
  }
  if (const json* v = top.child("validation")) {
    ObjectReader r(*v, "config.validation");
    r.get("lr", c.validation.lr);
    r.get("final_fraction", c.validation.final_fraction);
    r.get("steps", c.validation.steps);
    r.get("checkpoints", c.validation.checkpoints);
    r.finish();
  }
  top.finish();
  return c;
}

inline std::string to_string(dln::SignMode s) {
  return s == dln::SignMode::kPositive ? "positive" : "random";
}

/// Fully normalized form (every field, defaults filled in).
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  j["mpa_k"] = c.mpa_k;
  j["model"] = {{"widths", c.model.widths},
                {"activation", to_string(c.model.activation)},
                {"loss", to_string(c.model.loss)}};
  j["data"] = {{"input_dim", c.data.input_dim},
               {"classes", c.data.classes},
               {"task_a_features", c.data.task_a},
               {"task_b_features", c.data.task_b},
               {"teacher_hidden", c.data.teacher_hidden},
               {"label_noise", c.data.label_noise},
               {"n_train_a", c.data.n_train_a},
               {"n_heldout_a", c.data.n_heldout_a},
               {"n_train_b", c.data.n_train_b}};
  j["pretrain"] = {{"schedule", to_string(c.pretrain.schedule)},
                   {"lr", c.pretrain.lr},
                   {"warmup_steps", c.pretrain.warmup_steps},
                   {"steps", c.pretrain.steps},
                   {"decay_start", c.pretrain.decay_start},
                   {"final_fraction", c.pretrain.final_fraction},
                   {"batch_size", c.pretrain.batch_size},
                   {"checkpoints", c.pretrain.checkpoints},
                   {"control", c.pretrain.control}};
  j["finetune"] = {{"lrs", c.finetune.lrs},
                   {"steps", c.finetune.steps},
                   {"batch_size", c.finetune.batch_size},
                   {"warmup_steps", c.finetune.warmup_steps},
                   {"eval_every", c.finetune.eval_every},
                   {"repeats", c.finetune.repeats}};
  j["sharpness"] = {{"sigma", c.sharpness.sigma},
                    {"n_noise", c.sharpness.n_noise},
                    {"eigen_tol", c.sharpness.eigen_tol},
                    {"eigen_max_iter", c.sharpness.eigen_max_iter}};
  const auto& s = c.dln.supports;
  j["dln"] = {{"supports", {s.a, s.z1, s.b, s.z2}},
              {"d", s.d},
              {"n", c.dln.n},
              {"lrs", c.dln.lrs},
              {"batch_size", c.dln.batch_size},
              {"max_steps", c.dln.max_steps},
              {"loss_threshold", c.dln.loss_threshold},
              {"alpha_init", c.dln.alpha_init},
              {"signs", to_string(c.dln.signs)},
              {"sharpness_scale", c.dln.sharpness_scale},
              {"control", dln::to_string(c.dln.control)}};
  j["eos"] = {{"lrs", c.eos.lrs},
              {"steps", c.eos.steps},
              {"measure_every", c.eos.measure_every},
              {"late_fraction", c.eos.late_fraction},
              {"band", c.eos.band}};
  j["landscape"] = {{"lr", c.landscape.lr},
                    {"scan_steps", c.landscape.scan_steps},
                    {"alpha_points", c.landscape.alpha_points}};
  j["validation"] = {{"lr", c.validation.lr},
                     {"final_fraction", c.validation.final_fraction},
                     {"steps", c.validation.steps},
                     {"checkpoints", c.validation.checkpoints}};
  return j;
}

namespace detail {

inline void validate_model_data(const ExperimentConfig& c, bool needs_task_b) {
  const auto& m = c.model;
  const auto& d = c.data;
  require(m.widths.size() >= 2, "model.widths needs at least input and output widths");
  for (std::size_t w : m.widths) require(w > 0, "model.widths entries must be positive");
  require(m.widths.front() == d.input_dim,
          "model.widths[0] (" + std::to_string(m.widths.front()) +
              ") must equal data.input_dim (" + std::to_string(d.input_dim) + ")");
  require(m.widths.back() == d.classes,
          "model.widths[-1] (" + std::to_string(m.widths.back()) + ") must equal data.classes (" +
              std::to_string(d.classes) + ")");
  require(d.classes >= 2, "data.classes must be >= 2");
  auto check_range = [&](const std::array<std::size_t, 2>& r, const char* name) {
    require(r[0] < r[1] && r[1] <= d.input_dim,
            std::string("data.") + name + " must satisfy begin < end <= input_dim");
  };
  check_range(d.task_a, "task_a_features");
  require(d.label_noise >= 0.0 && d.label_noise <= 1.0, "data.label_noise must lie in [0, 1]");
  require(d.n_train_a > 0 && d.n_heldout_a > 0, "data.n_train_a and n_heldout_a must be positive");
  if (needs_task_b) {
    check_range(d.task_b, "task_b_features");
    const std::size_t lo = std::max(d.task_a[0], d.task_b[0]);
    const std::size_t hi = std::min(d.task_a[1], d.task_b[1]);
    require(lo < hi, "data: task A and task B features must overlap");
    require(d.task_a != d.task_b, "data: task A and task B features must differ");
    require(d.n_train_b > 0, "data.n_train_b must be positive");
  }
  if (m.widths.size() > 2) {
    std::size_t narrowest = *std::min_element(m.widths.begin() + 1, m.widths.end() - 1);
    require(c.mpa_k >= 1 && c.mpa_k <= narrowest,
            "mpa_k must lie in [1, narrowest hidden width = " + std::to_string(narrowest) + "]");
  }
}

inline void validate_schedule(const PretrainConfig& p, std::size_t n_train) {
  require_positive(p.lr, "pretrain.lr");
  require(p.steps >= 0, "pretrain.steps must be >= 0");
  require(p.warmup_steps >= 0, "pretrain.warmup_steps must be >= 0");
  require(p.final_fraction >= 0.0 && p.final_fraction <= 1.0,
          "pretrain.final_fraction must lie in [0, 1]");
  if (p.schedule == ScheduleKind::kWarmupStableDecay)
    require(p.decay_start >= p.warmup_steps && p.decay_start <= p.steps,
            "pretrain.decay_start must lie in [warmup_steps, steps]");
  require(p.batch_size <= n_train, "pretrain.batch_size must be <= data.n_train_a");
  require(!p.checkpoints.empty(), "pretrain.checkpoints must not be empty");
  require(std::is_sorted(p.checkpoints.begin(), p.checkpoints.end()) &&
              std::adjacent_find(p.checkpoints.begin(), p.checkpoints.end()) ==
                  p.checkpoints.end(),
          "pretrain.checkpoints must be strictly increasing");
  for (long s : p.checkpoints)
    require(s >= 0 && s <= p.steps, "pretrain.checkpoints must lie in [0, steps]");
}

inline void validate_finetune(const FinetuneConfig& f, std::size_t n_train_b) {
  require(!f.lrs.empty(), "finetune.lrs must not be empty");
  for (double lr : f.lrs)
    require(lr >= 0.0 && std::isfinite(lr), "finetune.lrs entries must be >= 0");
  require(f.steps >= 0, "finetune.steps must be >= 0");
  require(f.batch_size >= 1 && f.batch_size <= n_train_b,
          "finetune.batch_size must lie in [1, data.n_train_b]");
  require(f.warmup_steps >= 0, "finetune.warmup_steps must be >= 0");
  require(f.eval_every >= 1, "finetune.eval_every must be >= 1");
  require(f.repeats >= 1, "finetune.repeats must be >= 1");
}

inline void validate_sharpness(const SharpnessConfig& s) {
  require_positive(s.sigma, "sharpness.sigma");
  require(s.n_noise >= 1, "sharpness.n_noise must be >= 1");
  require_positive(s.eigen_tol, "sharpness.eigen_tol");
  require(s.eigen_max_iter >= 1, "sharpness.eigen_max_iter must be >= 1");
}

}  // namespace detail

/// Checks every value the configured kind will touch.
inline void validate(const ExperimentConfig& c) {
  using namespace detail;
  require(!c.seeds.empty(), "seeds must not be empty");
  {
    auto s = c.seeds;
    std::sort(s.begin(), s.end());
    require(std::adjacent_find(s.begin(), s.end()) == s.end(), "seeds must be distinct");
  }
  require(!c.out_dir.empty(), "out_dir must not be empty");

  switch (c.kind) {
    case ExperimentKind::kDlnFig4:
    case ExperimentKind::kDlnSharpness: {
      const auto& d = c.dln;
      try {
        d.supports.validate();
      } catch (const Error& e) {
        fail(std::string("dln.supports: ") + e.what());
      }
      require(d.n >= 1 && d.n < d.supports.d, "dln.n must satisfy 1 <= n < d");
      require(!d.lrs.empty(), "dln.lrs must not be empty");
      for (double lr : d.lrs) require_positive(lr, "dln.lrs entries");
      require(d.batch_size >= 1 && d.batch_size <= d.n, "dln.batch_size must lie in [1, n]");
      require(d.max_steps >= 0, "dln.max_steps must be >= 0");
      require_positive(d.loss_threshold, "dln.loss_threshold");
      require_positive(d.alpha_init, "dln.alpha_init");
      if (c.kind == ExperimentKind::kDlnFig4)
        require(d.lrs.size() >= 2, "dln_fig4 needs at least two lrs");
      else
        require(d.sharpness_scale >= 1.0 && std::isfinite(d.sharpness_scale),
                "dln.sharpness_scale must be >= 1");
      break;
    }
    case ExperimentKind::kSftLrSweep:
    case ExperimentKind::kOvertrainingScan:
    case ExperimentKind::kLandscapeScan: {
      validate_model_data(c, true);
      validate_schedule(c.pretrain, c.data.n_train_a);
      validate_finetune(c.finetune, c.data.n_train_b);
      validate_sharpness(c.sharpness);
      if (c.kind == ExperimentKind::kOvertrainingScan) {
        const auto& p = c.pretrain;
        require(p.checkpoints.size() >= 3, "overtraining_scan needs >= 3 pretraining checkpoints");
        require(p.schedule != ScheduleKind::kConstant,
                "overtraining_scan needs a decaying pretraining schedule");
        const long onset = p.schedule == ScheduleKind::kWarmupStableDecay ? p.decay_start
                                                                          : p.warmup_steps;
        require(p.checkpoints.front() <= onset && p.checkpoints.back() > onset,
                "overtraining_scan checkpoints must span the lr decay");
      }
      if (c.kind == ExperimentKind::kLandscapeScan) {
        require(c.landscape.lr >= 0.0, "landscape.lr must be >= 0");
        require(c.landscape.scan_steps >= 1, "landscape.scan_steps must be >= 1");
        require(c.landscape.alpha_points >= 3, "landscape.alpha_points must be >= 3");
      }
      break;
    }
    case ExperimentKind::kEos: {
      validate_model_data(c, false);
      const auto& e = c.eos;
      require(!e.lrs.empty(), "eos.lrs must not be empty");
      for (double lr : e.lrs) require_positive(lr, "eos.lrs entries");
      require(e.steps >= 1, "eos.steps must be >= 1");
      require(e.measure_every >= 1 && e.measure_every <= e.steps,
              "eos.measure_every must lie in [1, steps]");
      require(e.late_fraction > 0.0 && e.late_fraction <= 1.0,
              "eos.late_fraction must lie in (0, 1]");
      require_positive(e.band, "eos.band");
      validate_sharpness(c.sharpness);
      break;
    }
    case ExperimentKind::kSharpnessValidation: {
      validate_model_data(c, false);
      validate_sharpness(c.sharpness);
      const auto& v = c.validation;
      require_positive(v.lr, "validation.lr");
      require(v.final_fraction >= 0.0 && v.final_fraction <= 1.0,
              "validation.final_fraction must lie in [0, 1]");
      require(v.steps >= 1, "validation.steps must be >= 1");
      require(v.checkpoints >= 2 && static_cast<long>(v.checkpoints) <= v.steps + 1,
              "validation.checkpoints must lie in [2, steps + 1]");
      break;
    }
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = parse_config(j);
  validate(c);
  return c;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the normalized config with sorted keys and no whitespace. Where the
/// output goes and how many threads run it are not part of the experiment.
/// The config minus where it ran and how many threads it used; this is what
/// gets saved next to results and hashed.
inline json experiment_json(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("out_dir");
  j.erase("workers");
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
  const json j = experiment_json(c);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

}  // namespace driftlab::exp
