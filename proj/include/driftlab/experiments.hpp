#pragma once

// End-to-end experiments on the small models: DLN finetuning runs, pretraining
// with and without lr decay, finetuning sweeps, overtraining scans, edge of
// stability, per-step landscape scans and proxy validation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "driftlab/config.hpp"
#include "driftlab/dln.hpp"
#include "driftlab/landscape.hpp"
#include "driftlab/optim.hpp"
#include "driftlab/pool.hpp"
#include "driftlab/records.hpp"
#include "driftlab/sharpness.hpp"
#include "driftlab/smallnet.hpp"
#include "driftlab/stats.hpp"
#include "driftlab/tasks.hpp"

namespace driftlab::exp {

/// Independent stream per (seed, purpose). Tags live in the high word so they
/// never collide with seed values below 2^32.
enum class Stream : std::uint64_t {
  kTeacher = 1,
  kData = 2,
  kInit = 3,
  kPretrainOrder = 4,
  kProxyNoise = 5,
  kFinetuneOrder = 6,
  kEigenStart = 7,
  kDlnData = 8,
  kDlnTrain = 9,
};

inline SeededRng stream(std::uint64_t seed, Stream tag) {
  return SeededRng(seed).fork(static_cast<std::uint64_t>(tag) << 32);
}

// ---------------------------------------------------------------- DLN

struct DlnCell {
  std::uint64_t seed = 0;
  double lr = 0.0;
  double initial_trace = 0.0;
  dln::DlnRunResult run;
};

struct DlnFig4Result {
  std::vector<double> lrs;
  std::vector<std::uint64_t> seeds;
  std::vector<DlnCell> cells;           // seed-major, lrs in config order
  std::vector<double> mean_forgetting;  // per lr
  std::size_t ordered_seeds = 0;        // forgetting(last lr) > forgetting(first lr)
  bool all_converged = false;
};

struct DlnProblem {
  dln::GroundTruths truths;
  dln::DlnDataset data;
};

inline DlnProblem make_dln_problem(const DlnConfig& c, std::uint64_t seed) {
  SeededRng rng = stream(seed, Stream::kDlnData);
  DlnProblem p;
  p.truths = dln::make_ground_truths(c.supports, rng, c.signs);
  p.data = dln::make_dataset(c.n, p.truths.w_ft, rng);
  return p;
}

inline dln::TrainOptions dln_train_options(const DlnConfig& c, double lr) {
  dln::TrainOptions o;
  o.lr = lr;
  o.batch_size = c.batch_size;
  o.max_steps = c.max_steps;
  o.loss_threshold = c.loss_threshold;
  return o;
}

/// Every (seed, lr) cell starts from the same pretrained init and sees the
/// same batch order, so lrs are compared on paired runs.
inline DlnFig4Result run_dln_fig4(const ExperimentConfig& cfg) {
  const auto& c = cfg.dln;
  DlnFig4Result r;
  r.lrs = c.lrs;
  r.seeds = cfg.seeds;
  const std::size_t L = c.lrs.size();
  r.cells = parallel_map<DlnCell>(cfg.seeds.size() * L, cfg.workers, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i / L];
    const double lr = c.lrs[i % L];
    const DlnProblem prob = make_dln_problem(c, seed);
    const dln::DlnParams init = dln::init_from_pretrained(prob.truths.w_pret, c.alpha_init);
    SeededRng rng = stream(seed, Stream::kDlnTrain);
    DlnCell cell;
    cell.seed = seed;
    cell.lr = lr;
    cell.initial_trace = dln::trace_sharpness(init, prob.data);
    cell.run = dln::train(init, prob.data, dln_train_options(c, lr), rng);
    cell.run.seed = seed;
    cell.run.forgetting_mass =
        dln::forgetting_mass(cell.run.final_w, c.supports, prob.truths.w_pret);
    return cell;
  });
  r.mean_forgetting.assign(L, 0.0);
  r.all_converged = true;
  for (const auto& cell : r.cells) {
    const auto j = static_cast<std::size_t>(&cell - r.cells.data()) % L;
    r.mean_forgetting[j] += cell.run.forgetting_mass / static_cast<double>(cfg.seeds.size());
    r.all_converged = r.all_converged && cell.run.converged;
  }
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s)
    if (r.cells[s * L + L - 1].run.forgetting_mass > r.cells[s * L].run.forgetting_mass)
      ++r.ordered_seeds;
  return r;
}

struct DlnSharpnessRow {
  std::uint64_t seed = 0;
  dln::SharpnessComparison cmp;
};

struct DlnSharpnessResult {
  double lr = 0.0;
  std::vector<DlnSharpnessRow> rows;
  std::size_t sharper_forgets_more = 0;  // seeds with forgetting(sharp) >= forgetting(flat)
  bool all_converged = false;
};

inline DlnSharpnessResult run_dln_sharpness(const ExperimentConfig& cfg) {
  const auto& c = cfg.dln;
  DlnSharpnessResult r;
  r.lr = c.lrs.front();
  r.rows = parallel_map<DlnSharpnessRow>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const DlnProblem prob = make_dln_problem(c, seed);
    DlnSharpnessRow row;
    row.seed = seed;
    row.cmp = dln::run_sharpness_comparison(
        c.supports, prob.truths, prob.data, c.sharpness_scale, dln_train_options(c, r.lr),
        stream(seed, Stream::kDlnTrain).next_u64(), c.alpha_init, c.control);
    row.cmp.flat.seed = row.cmp.sharp.seed = seed;
    return row;
  });
  r.all_converged = true;
  for (const auto& row : r.rows) {
    if (row.cmp.sharp.forgetting_mass >= row.cmp.flat.forgetting_mass) ++r.sharper_forgets_more;
    r.all_converged = r.all_converged && row.cmp.flat.converged && row.cmp.sharp.converged;
  }
  return r;
}

// ---------------------------------------------------------------- tasks

struct TaskPair {
  Batch train_a;    // noisy labels
  Batch heldout_a;  // clean labels; the OOD proxy
  Batch train_b;
};

inline TeacherSpec teacher_spec(const DataConfig& d, bool task_b) {
  TeacherSpec t;
  t.input_dim = d.input_dim;
  t.feature_begin = task_b ? d.task_b[0] : d.task_a[0];
  t.feature_end = task_b ? d.task_b[1] : d.task_a[1];
  t.hidden = d.teacher_hidden;
  t.classes = d.classes;
  t.label_noise = task_b ? 0.0 : d.label_noise;
  return t;
}

/// Both teachers come from one seed, so they agree on the shared features.
inline TaskPair make_tasks(const DataConfig& d, std::uint64_t seed, bool with_b = true) {
  const std::uint64_t teacher_seed = stream(seed, Stream::kTeacher).next_u64();
  TeacherTask a(teacher_spec(d, false), teacher_seed);
  SeededRng rng = stream(seed, Stream::kData);
  TaskPair t;
  t.train_a = a.sample(d.n_train_a, rng);
  t.heldout_a = a.sample(d.n_heldout_a, rng, false);
  if (with_b) {
    TeacherTask b(teacher_spec(d, true), teacher_seed);
    t.train_b = b.sample(d.n_train_b, rng);
  }
  return t;
}

/// Mini-batches without replacement within each pass over the data.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::size_t batch, SeededRng rng)
      : order_(n), batch_(batch), cursor_(n), rng_(std::move(rng)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    std::vector<std::size_t> idx(order_.begin() + static_cast<long>(cursor_),
                                 order_.begin() + static_cast<long>(cursor_ + batch_));
    cursor_ += batch_;
    return idx;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_;
  SeededRng rng_;
};

// ---------------------------------------------------------------- pretraining

struct PretrainCheckpoint {
  long step = 0;
  double lr = 0.0;  // lr of the step that follows
  double train_loss = 0.0;
  double heldout_accuracy = 0.0;
  double proxy = 0.0;
  ParamVector params;
};

struct PretrainRun {
  std::string arm;  // "schedule" or "control"
  std::vector<PretrainCheckpoint> checkpoints;
};

struct PretrainResult {
  std::uint64_t seed = 0;
  PretrainRun main;
  std::optional<PretrainRun> control;
};

inline double sharpness_proxy(const Mlp& model, const ParamVector& p, const TaskPair& t,
                              const SharpnessConfig& s, std::uint64_t seed) {
  // same noise draws at every checkpoint and in both arms
  SeededRng noise = stream(seed, Stream::kProxyNoise);
  std::vector<Batch> batches{t.heldout_a};
  return perturbation_sharpness(model, p, std::span<const Batch>(batches),
                                ProxyOptions{s.sigma, s.n_noise, false}, noise)
      .value;
}

/// SGD (or full-batch GD when batch_size is 0) on task A. The control arm
/// holds the peak lr and shares init and batch order with the main arm.
inline PretrainRun pretrain_arm(const ExperimentConfig& cfg, const Mlp& model,
                                const TaskPair& t, std::uint64_t seed, bool control) {
  const auto& p = cfg.pretrain;
  const LrSchedule sched = p.schedule_for(control);
  SeededRng init_rng = stream(seed, Stream::kInit);
  ParamVector params = model.init(init_rng);
  const std::size_t n = t.train_a.size();
  EpochSampler sampler(n, p.batch_size == 0 ? n : p.batch_size,
                       stream(seed, Stream::kPretrainOrder));
  GradientDescent gd;
  PretrainRun run;
  run.arm = control ? "control" : "schedule";
  std::size_t next_ck = 0;
  for (long step = 0; step <= p.steps; ++step) {
    if (next_ck < p.checkpoints.size() && p.checkpoints[next_ck] == step) {
      PretrainCheckpoint ck;
      ck.step = step;
      ck.lr = sched.at(step);
      ck.train_loss = model.loss(params, t.train_a);
      if (!std::isfinite(ck.train_loss))
        throw DivergenceError("pretrain: loss diverged by step " + std::to_string(step), step);
      ck.heldout_accuracy = model.accuracy(params, t.heldout_a);
      ck.proxy = sharpness_proxy(model, params, t, cfg.sharpness, seed);
      ck.params = params;
      run.checkpoints.push_back(std::move(ck));
      ++next_ck;
    }
    if (step == p.steps) break;
    LossAndGrad lg = p.batch_size == 0
                         ? model.loss_and_grad(params, t.train_a)
                         : model.loss_and_grad(params, gather(t.train_a, sampler.next()));
    if (!std::isfinite(lg.loss))
      throw DivergenceError("pretrain: loss diverged at step " + std::to_string(step) +
                                " (lr " + format_double(sched.at(step)) + ")",
                            step);
    gd.step(params, lg.grad, sched.at(step));
  }
  return run;
}

inline PretrainResult pretrain(const ExperimentConfig& cfg, const Mlp& model, const TaskPair& t,
                               std::uint64_t seed, bool with_control) {
  PretrainResult r;
  r.seed = seed;
  r.main = pretrain_arm(cfg, model, t, seed, false);
  if (with_control) r.control = pretrain_arm(cfg, model, t, seed, true);
  return r;
}

// ---------------------------------------------------------------- finetuning

inline std::vector<double> hidden_mpa(const Mlp& model, const std::vector<ActivationMatrix>& base,
                                      const ParamVector& p, const Matrix& inputs, std::size_t k) {
  const auto act = model.activations(p, inputs);
  std::vector<double> out;
  for (std::size_t l = 0; l < base.size(); ++l)
    out.push_back(mpa_from_activations(base[l], act[l], k).mean);
  return out;
}

inline std::string run_id(std::uint64_t seed, long ck, double lr, std::size_t rep) {
  return "s" + std::to_string(seed) + "-ck" + std::to_string(ck) + "-lr" + format_double(lr) +
         "-r" + std::to_string(rep);
}

/// Constant lr after linear warmup, SGD on task B. Records at step 0, every
/// eval_every steps and at the last step.
inline std::vector<RunRecord> finetune(const ExperimentConfig& cfg, const Mlp& model,
                                       const ParamVector& start, const TaskPair& t, double lr,
                                       std::uint64_t seed, long checkpoint_step,
                                       std::size_t repeat) {
  const auto& f = cfg.finetune;
  LrSchedule sched;
  sched.kind = ScheduleKind::kConstant;
  sched.peak = lr;
  sched.warmup_steps = f.warmup_steps;
  EpochSampler sampler(t.train_b.size(), f.batch_size,
                       stream(seed, Stream::kFinetuneOrder).fork(repeat));
  const auto base = model.activations(start, t.heldout_a.inputs);
  ParamVector p = start;
  GradientDescent gd;
  std::vector<RunRecord> out;
  for (long step = 0; step <= f.steps; ++step) {
    if (step % f.eval_every == 0 || step == f.steps) {
      RunRecord r;
      r.run_id = run_id(seed, checkpoint_step, lr, repeat);
      r.seed = seed;
      r.checkpoint_step = checkpoint_step;
      r.finetune_lr = lr;
      r.finetune_step = step;
      r.repeat = repeat;
      r.train_loss = model.loss(p, t.train_b);
      if (!std::isfinite(r.train_loss))
        throw DivergenceError("finetune: loss diverged by step " + std::to_string(step) +
                                  " at lr " + format_double(lr),
                              step);
      r.ood_accuracy = model.accuracy(p, t.heldout_a);
      r.mpa = hidden_mpa(model, base, p, t.heldout_a.inputs, cfg.mpa_k);
      out.push_back(std::move(r));
    }
    if (step == f.steps) break;
    const LossAndGrad lg = model.loss_and_grad(p, gather(t.train_b, sampler.next()));
    gd.step(p, lg.grad, sched.at(step));
  }
  return out;
}

inline double layer_mean(const std::vector<double>& v) { return v.empty() ? 0.0 : mean(v); }

// ---------------------------------------------------------------- lr sweep

struct MatchedLossRow {
  std::uint64_t seed = 0;
  double level = 0.0;  // largest task-B loss reached by every lr
  std::vector<double> lrs;
  std::vector<long> steps;        // first eval step at or below level, per lr
  std::vector<double> mpa;        // hidden-layer mean MPA there
  std::vector<double> accuracy;   // task-A held-out accuracy there
  bool mpa_nondecreasing = false;
  bool accuracy_nonincreasing = false;
};

/// Curves are averaged over repeats per (lr, step) before matching.
inline MatchedLossRow matched_loss(const std::vector<RunRecord>& records, std::uint64_t seed,
                                   const std::vector<double>& lrs) {
  struct Point {
    double loss = 0, mpa = 0, acc = 0;
    int n = 0;
  };
  std::vector<std::map<long, Point>> curves(lrs.size());
  for (const auto& r : records) {
    if (r.seed != seed) continue;
    const auto it = std::find(lrs.begin(), lrs.end(), r.finetune_lr);
    if (it == lrs.end()) continue;
    Point& p = curves[static_cast<std::size_t>(it - lrs.begin())][r.finetune_step];
    p.loss += r.train_loss;
    p.mpa += layer_mean(r.mpa);
    p.acc += r.ood_accuracy;
    ++p.n;
  }
  MatchedLossRow row;
  row.seed = seed;
  row.lrs = lrs;
  row.level = -std::numeric_limits<double>::infinity();
  for (auto& c : curves) {
    double lowest = std::numeric_limits<double>::infinity();
    for (auto& [step, p] : c) {
      p.loss /= p.n;
      p.mpa /= p.n;
      p.acc /= p.n;
      lowest = std::min(lowest, p.loss);
    }
    row.level = std::max(row.level, lowest);
  }
  for (const auto& c : curves) {
    for (const auto& [step, p] : c) {
      if (p.loss <= row.level) {
        row.steps.push_back(step);
        row.mpa.push_back(p.mpa);
        row.accuracy.push_back(p.acc);
        break;
      }
    }
  }
  row.mpa_nondecreasing = row.accuracy_nonincreasing = row.mpa.size() == lrs.size();
  for (std::size_t i = 1; i < row.mpa.size(); ++i) {
    if (row.mpa[i] < row.mpa[i - 1]) row.mpa_nondecreasing = false;
    if (row.accuracy[i] > row.accuracy[i - 1]) row.accuracy_nonincreasing = false;
  }
  return row;
}

struct SweepResult {
  std::vector<PretrainResult> pretrain;  // per seed, main arm only
  std::vector<RunRecord> records;
  std::vector<MatchedLossRow> matched;
  std::size_t mpa_ordered = 0;
  std::size_t accuracy_ordered = 0;
};

/// Finetunes the final pretraining checkpoint of each seed over the lr grid.
inline SweepResult run_sft_lr_sweep(const ExperimentConfig& cfg) {
  const Mlp model(cfg.model.spec());
  SweepResult r;
  const auto tasks = parallel_map<TaskPair>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    return make_tasks(cfg.data, cfg.seeds[i]);
  });
  r.pretrain = parallel_map<PretrainResult>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    return pretrain(cfg, model, tasks[i], cfg.seeds[i], false);
  });
  const auto& lrs = cfg.finetune.lrs;
  const std::size_t per_seed = lrs.size() * cfg.finetune.repeats;
  auto cells = parallel_map<std::vector<RunRecord>>(
      cfg.seeds.size() * per_seed, cfg.workers, [&](std::size_t i) {
        const std::size_t s = i / per_seed, j = i % per_seed;
        const auto& ck = r.pretrain[s].main.checkpoints.back();
        return finetune(cfg, model, ck.params, tasks[s], lrs[j / cfg.finetune.repeats],
                        cfg.seeds[s], ck.step, j % cfg.finetune.repeats);
      });
  for (auto& c : cells) r.records.insert(r.records.end(), c.begin(), c.end());
  for (std::uint64_t seed : cfg.seeds) {
    r.matched.push_back(matched_loss(r.records, seed, lrs));
    r.mpa_ordered += r.matched.back().mpa_nondecreasing;
    r.accuracy_ordered += r.matched.back().accuracy_nonincreasing;
  }
  return r;
}

// ---------------------------------------------------------------- overtraining

struct OvertrainingCell {
  std::uint64_t seed = 0;
  double lr = 0.0;
  long checkpoint_step = 0;
  double base_accuracy = 0.0;
  double drop = 0.0;  // base minus finetuned task-A accuracy, mean over repeats
  double mpa = 0.0;   // hidden-layer mean MPA after finetuning, mean over repeats
};

struct OvertrainingSeed {
  std::uint64_t seed = 0;
  long pre_step = 0;   // last checkpoint at or before decay onset
  long post_step = 0;  // last checkpoint
  // per lr: mean over checkpoints after onset beats mean over those up to onset
  std::vector<bool> drop_ordered;
  std::vector<bool> mpa_ordered;
  // per lr: same comparison for the single pair (pre_step, post_step)
  std::vector<bool> pair_drop_ordered;
  std::vector<bool> pair_mpa_ordered;
  double proxy_jump = 0.0;  // schedule arm, proxy(post) - proxy(pre)
  std::optional<double> control_change;
  std::optional<double> jump_ratio;  // proxy_jump / |control_change|
};

struct OvertrainingResult {
  std::vector<PretrainResult> pretrain;
  std::vector<RunRecord> records;
  std::vector<OvertrainingCell> cells;
  std::vector<OvertrainingSeed> seeds;
};

inline long decay_onset(const PretrainConfig& p) {
  return p.schedule == ScheduleKind::kWarmupStableDecay ? p.decay_start : p.warmup_steps;
}

/// Fixed-lr, fixed-step finetuning from every checkpoint of the decaying run.
inline OvertrainingResult run_overtraining_scan(const ExperimentConfig& cfg) {
  const Mlp model(cfg.model.spec());
  OvertrainingResult r;
  const auto tasks = parallel_map<TaskPair>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    return make_tasks(cfg.data, cfg.seeds[i]);
  });
  r.pretrain = parallel_map<PretrainResult>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    return pretrain(cfg, model, tasks[i], cfg.seeds[i], cfg.pretrain.control);
  });
  const auto& lrs = cfg.finetune.lrs;
  const std::size_t reps = cfg.finetune.repeats;
  const std::size_t nck = cfg.pretrain.checkpoints.size();
  const std::size_t per_seed = nck * lrs.size() * reps;
  auto cells = parallel_map<std::vector<RunRecord>>(
      cfg.seeds.size() * per_seed, cfg.workers, [&](std::size_t i) {
        const std::size_t s = i / per_seed, rest = i % per_seed;
        const std::size_t c = rest / (lrs.size() * reps);
        const std::size_t l = (rest / reps) % lrs.size();
        const auto& ck = r.pretrain[s].main.checkpoints[c];
        return finetune(cfg, model, ck.params, tasks[s], lrs[l], cfg.seeds[s], ck.step,
                        rest % reps);
      });
  for (std::size_t i = 0; i < cells.size(); ++i) {
    r.records.insert(r.records.end(), cells[i].begin(), cells[i].end());
    if (i % reps != reps - 1) continue;
    // close one (seed, checkpoint, lr) group
    const std::size_t s = i / per_seed, rest = i % per_seed;
    const std::size_t c = rest / (lrs.size() * reps);
    const std::size_t l = (rest / reps) % lrs.size();
    const auto& ck = r.pretrain[s].main.checkpoints[c];
    OvertrainingCell cell;
    cell.seed = cfg.seeds[s];
    cell.lr = lrs[l];
    cell.checkpoint_step = ck.step;
    cell.base_accuracy = ck.heldout_accuracy;
    for (std::size_t k = i + 1 - reps; k <= i; ++k) {
      const RunRecord& last = cells[k].back();
      cell.drop += (ck.heldout_accuracy - last.ood_accuracy) / static_cast<double>(reps);
      cell.mpa += layer_mean(last.mpa) / static_cast<double>(reps);
    }
    r.cells.push_back(cell);
  }

  const long onset = decay_onset(cfg.pretrain);
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    const auto& main = r.pretrain[s].main.checkpoints;
    std::size_t pre = 0;
    for (std::size_t c = 0; c < main.size(); ++c)
      if (main[c].step <= onset) pre = c;
    const std::size_t post = main.size() - 1;
    OvertrainingSeed os;
    os.seed = cfg.seeds[s];
    os.pre_step = main[pre].step;
    os.post_step = main[post].step;
    for (std::size_t l = 0; l < lrs.size(); ++l) {
      auto cell = [&](std::size_t c) -> const OvertrainingCell& {
        return r.cells[s * nck * lrs.size() + c * lrs.size() + l];
      };
      os.pair_drop_ordered.push_back(cell(post).drop > cell(pre).drop);
      os.pair_mpa_ordered.push_back(cell(post).mpa > cell(pre).mpa);
      double drop_before = 0, drop_after = 0, mpa_before = 0, mpa_after = 0;
      std::size_t n_before = 0;
      for (std::size_t c = 0; c < main.size(); ++c) {
        const bool before = main[c].step <= onset;
        (before ? drop_before : drop_after) += cell(c).drop;
        (before ? mpa_before : mpa_after) += cell(c).mpa;
        n_before += before;
      }
      const double nb = static_cast<double>(n_before);
      const double na = static_cast<double>(main.size() - n_before);
      os.drop_ordered.push_back(drop_after / na > drop_before / nb);
      os.mpa_ordered.push_back(mpa_after / na > mpa_before / nb);
    }
    os.proxy_jump = main[post].proxy - main[pre].proxy;
    if (r.pretrain[s].control) {
      const auto& ctl = r.pretrain[s].control->checkpoints;
      os.control_change = ctl[post].proxy - ctl[pre].proxy;
      if (*os.control_change != 0.0) os.jump_ratio = os.proxy_jump / std::abs(*os.control_change);
    }
    r.seeds.push_back(std::move(os));
  }
  return r;
}

// ---------------------------------------------------------------- edge of stability

struct EosRun {
  std::uint64_t seed = 0;
  double lr = 0.0;
  EosTrace trace;
};

struct EosResult {
  std::vector<EosRun> runs;  // seed-major, lrs in config order
};

inline EosResult run_eos(const ExperimentConfig& cfg) {
  const Mlp model(cfg.model.spec());
  const auto& lrs = cfg.eos.lrs;
  EosResult r;
  r.runs = parallel_map<EosRun>(cfg.seeds.size() * lrs.size(), cfg.workers, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i / lrs.size()];
    const TaskPair t = make_tasks(cfg.data, seed, false);
    SeededRng init = stream(seed, Stream::kInit);
    const ParamVector p = model.init(init);
    EosOptions o;
    o.lr = lrs[i % lrs.size()];
    o.steps = cfg.eos.steps;
    o.measure_every = cfg.eos.measure_every;
    o.late_fraction = cfg.eos.late_fraction;
    o.band = cfg.eos.band;
    o.eigen = EigenOptions{cfg.sharpness.eigen_tol, cfg.sharpness.eigen_max_iter};
    SeededRng eig = stream(seed, Stream::kEigenStart);
    EosRun run;
    run.seed = seed;
    run.lr = o.lr;
    run.trace = eos_monitor(model, p, t.train_a, o, eig);
    run.trace.final_params = {};
    return run;
  });
  return r;
}

// ---------------------------------------------------------------- landscape

struct LandscapeResult {
  std::vector<StepProfile> profiles;  // seed-major, in step order
  std::vector<std::uint64_t> profile_seed;
  std::size_t convex = 0;
  std::size_t convex_descending = 0;
  std::size_t ratio_violations = 0;  // among convex, strictly descending profiles
  double min_mpa_r2 = 1.0;           // linear fit of MPA(alpha) - MPA(0) over alpha
  double mean_mpa_r2 = 0.0;
};

/// Scans the first scan_steps finetuning updates from the final pretraining
/// checkpoint. Loss and MPA use the task-B training set as a fixed batch.
inline LandscapeResult run_landscape_scan(const ExperimentConfig& cfg) {
  const Mlp model(cfg.model.spec());
  const auto grid = uniform_alpha_grid(cfg.landscape.alpha_points);
  const auto per_seed = parallel_map<std::vector<StepProfile>>(
      cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        const TaskPair t = make_tasks(cfg.data, seed);
        const PretrainResult pre = pretrain(cfg, model, t, seed, false);
        const ParamVector base = pre.main.checkpoints.back().params;
        LrSchedule sched;
        sched.kind = ScheduleKind::kConstant;
        sched.peak = cfg.landscape.lr;
        sched.warmup_steps = cfg.finetune.warmup_steps;
        EpochSampler sampler(t.train_b.size(), cfg.finetune.batch_size,
                             stream(seed, Stream::kFinetuneOrder));
        ProfileOptions po;
        po.k = cfg.mpa_k;
        std::vector<StepProfile> out;
        ParamVector p = base;
        GradientDescent gd;
        for (long step = 0; step < cfg.landscape.scan_steps; ++step) {
          ParamVector next = p;
          const LossAndGrad lg = model.loss_and_grad(p, gather(t.train_b, sampler.next()));
          gd.step(next, lg.grad, sched.at(step));
          out.push_back(step_profile(model, base, p, next, t.train_b,
                                     std::span<const double>(grid), po, step));
          p = std::move(next);
        }
        return out;
      });
  LandscapeResult r;
  double r2_sum = 0.0;
  std::size_t r2_n = 0;
  for (std::size_t s = 0; s < per_seed.size(); ++s) {
    for (const auto& prof : per_seed[s]) {
      if (prof.convex_flag) {
        ++r.convex;
        if (strictly_descending(prof)) {
          ++r.convex_descending;
          const auto ratios = loss_drop_ratio(prof);
          if (!ratio_nondecreasing(ratios)) ++r.ratio_violations;
        }
      }
      for (const auto& [layer, m] : prof.mpa_per_layer) {
        std::vector<double> dm(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) dm[i] = m[i] - m[0];
        if (dm.back() == 0.0) continue;
        const double r2 = linear_fit(prof.alphas, dm).r_squared;
        r.min_mpa_r2 = std::min(r.min_mpa_r2, r2);
        r2_sum += r2;
        ++r2_n;
      }
      r.profiles.push_back(prof);
      r.profile_seed.push_back(cfg.seeds[s]);
    }
  }
  r.mean_mpa_r2 = r2_n ? r2_sum / static_cast<double>(r2_n) : 0.0;
  return r;
}

// ---------------------------------------------------------------- proxy validation

struct ValidationRun {
  std::uint64_t seed = 0;
  std::vector<long> steps;
  std::vector<ParamVector> params;  // not written out
  ValidationTable table;
};

/// Full-batch GD with lr decaying linearly to final_fraction; proxy and top
/// eigenvalue are both measured on the held-out set at evenly spaced steps.
inline std::vector<ValidationRun> run_sharpness_validation(const ExperimentConfig& cfg) {
  const Mlp model(cfg.model.spec());
  const auto& v = cfg.validation;
  return parallel_map<ValidationRun>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const TaskPair t = make_tasks(cfg.data, seed, false);
    SeededRng init = stream(seed, Stream::kInit);
    ParamVector p = model.init(init);
    LrSchedule sched;
    sched.kind = ScheduleKind::kDecayToZero;
    sched.peak = v.lr;
    sched.warmup_steps = 0;
    sched.total_steps = v.steps;
    sched.final_fraction = v.final_fraction;
    ValidationRun run;
    run.seed = seed;
    for (std::size_t c = 0; c < v.checkpoints; ++c)
      run.steps.push_back(static_cast<long>(
          std::llround(static_cast<double>(v.steps) * static_cast<double>(c) /
                       static_cast<double>(v.checkpoints - 1))));
    std::vector<ParamVector> cks;
    GradientDescent gd;
    std::size_t next = 0;
    for (long step = 0; step <= v.steps; ++step) {
      while (next < run.steps.size() && run.steps[next] == step) {
        cks.push_back(p);
        ++next;
      }
      if (step == v.steps) break;
      const LossAndGrad lg = model.loss_and_grad(p, t.train_a);
      if (!std::isfinite(lg.loss))
        throw DivergenceError("sharpness_validation: loss diverged at step " +
                                  std::to_string(step),
                              step);
      gd.step(p, lg.grad, sched.at(step));
    }
    std::vector<Batch> proxy_batches{t.heldout_a};
    run.table = sharpness_validation(
        model, std::span<const ParamVector>(cks), std::span<const Batch>(proxy_batches),
        t.heldout_a, ProxyOptions{cfg.sharpness.sigma, cfg.sharpness.n_noise, false},
        EigenOptions{cfg.sharpness.eigen_tol, cfg.sharpness.eigen_max_iter},
        stream(seed, Stream::kProxyNoise));
    run.params = std::move(cks);
    return run;
  });
}

// ---------------------------------------------------------------- output

namespace detail {

inline ojson opt_number(const std::optional<double>& x) {
  return x ? ojson(*x) : ojson(nullptr);
}

inline std::vector<ojson> to_rows(const std::vector<RunRecord>& records) {
  std::vector<ojson> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  return rows;
}

inline ojson row(std::initializer_list<std::pair<const std::string, ojson>> fields) {
  ojson j;
  j["schema_version"] = kSchemaVersion;
  for (const auto& [k, v] : fields) j[k] = v;
  return j;
}

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }
  std::filesystem::path file(const std::string& rel) {
    artifacts_.push_back(rel);
    const auto p = root_ / rel;
    std::filesystem::create_directories(p.parent_path());
    return p;
  }
  void jsonl(const std::string& rel, const std::vector<ojson>& rows) { write_jsonl(file(rel), rows); }
  void csv(const std::string& rel, const CsvTable& t, const std::string& note = "") {
    write_csv(file(rel), t, note);
  }
  template <typename J>
  void json(const std::string& rel, const J& j) {
    std::ofstream out(file(rel), std::ios::binary);
    if (!out) throw Error("cannot write " + (root_ / rel).string());
    out << j.dump(2) << "\n";
  }
  const std::vector<std::string>& artifacts() const { return artifacts_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> artifacts_;
};

inline void save_pretrain_checkpoints(OutputDir& out, const ExperimentConfig& cfg,
                                      const PretrainResult& pr) {
  auto save_arm = [&](const PretrainRun& run) {
    for (const auto& ck : run.checkpoints) {
      const std::string stem = "checkpoints/s" + std::to_string(pr.seed) + "_" + run.arm +
                               "_step" + std::to_string(ck.step);
      Checkpoint c;
      c.params = ck.params;
      c.meta["seed"] = pr.seed;
      c.meta["arm"] = run.arm;
      c.meta["step"] = ck.step;
      c.meta["lr"] = ck.lr;
      c.meta["model_widths"] = cfg.model.widths;
      c.meta["activation"] = to_string(cfg.model.activation);
      c.meta["loss"] = to_string(cfg.model.loss);
      out.file(stem + ".actm");
      out.file(stem + ".json");
      save_checkpoint(out.root() / stem, c);
    }
  };
  save_arm(pr.main);
  if (pr.control) save_arm(*pr.control);
}

inline std::vector<ojson> pretrain_rows(const std::vector<PretrainResult>& prs) {
  std::vector<ojson> rows;
  for (const auto& pr : prs) {
    auto arm = [&](const PretrainRun& run) {
      for (const auto& ck : run.checkpoints)
        rows.push_back(row({{"seed", pr.seed},
                            {"arm", run.arm},
                            {"step", ck.step},
                            {"lr", ck.lr},
                            {"train_loss", ck.train_loss},
                            {"heldout_accuracy", ck.heldout_accuracy},
                            {"sharpness_proxy", ck.proxy}}));
    };
    arm(pr.main);
    if (pr.control) arm(*pr.control);
  }
  return rows;
}

}  // namespace detail

struct ExperimentOutput {
  ojson summary;
  RunManifest manifest;
};

/// Runs only the pretraining stage of a config and saves its checkpoints.
inline ExperimentOutput run_pretrain_only(const ExperimentConfig& cfg,
                                          const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputDir out(out_dir);
  const Mlp model(cfg.model.spec());
  const auto prs = parallel_map<PretrainResult>(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    const TaskPair t = make_tasks(cfg.data, cfg.seeds[i]);
    return pretrain(cfg, model, t, cfg.seeds[i], cfg.pretrain.control);
  });
  for (const auto& pr : prs) detail::save_pretrain_checkpoints(out, cfg, pr);
  out.jsonl("pretrain.jsonl", detail::pretrain_rows(prs));
  ExperimentOutput o;
  o.summary = ojson::object();
  o.summary["schema_version"] = kSchemaVersion;
  o.summary["kind"] = "pretrain";
  o.summary["checkpoints"] = prs.empty() ? 0 : prs.front().main.checkpoints.size();
  out.json("summary.json", o.summary);
  o.manifest.config_hash = config_hash(cfg);
  o.manifest.kind = "pretrain";
  o.manifest.seeds = cfg.seeds;
  o.manifest.artifacts = out.artifacts();
  o.manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(out_dir / "manifest.json", std::ios::binary) << to_json(o.manifest).dump(2) << "\n";
  return o;
}

/// Runs the configured experiment and writes its files under out_dir. Only
/// manifest.json holds run-dependent values (wall-clock time).
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputDir out(out_dir);
  using detail::row;
  ojson s;
  s["schema_version"] = kSchemaVersion;
  s["kind"] = to_string(cfg.kind);
  s["config_hash"] = config_hash(cfg);

  switch (cfg.kind) {
    case ExperimentKind::kDlnFig4: {
      const auto r = run_dln_fig4(cfg);
      std::vector<ojson> rows;
      CsvTable w{{"seed", "lr", "coordinate", "abs_w"}, {}};
      for (const auto& c : r.cells) {
        rows.push_back(row({{"seed", c.seed},
                            {"lr", c.lr},
                            {"converged", c.run.converged},
                            {"steps", c.run.steps_to_converge},
                            {"final_loss", c.run.final_loss},
                            {"forgetting_mass", c.run.forgetting_mass},
                            {"initial_trace", c.initial_trace},
                            {"final_trace", c.run.sharpness_trace.back()}}));
        for (std::size_t i = 0; i < c.run.final_w.size(); ++i)
          w.rows.push_back({std::to_string(c.seed), format_double(c.lr), std::to_string(i),
                            format_double(std::abs(c.run.final_w[i]))});
      }
      out.jsonl("dln_runs.jsonl", rows);
      out.csv("dln_weights.csv", w);
      s["lrs"] = r.lrs;
      s["mean_forgetting_mass"] = r.mean_forgetting;
      s["seeds_ordered"] = r.ordered_seeds;
      s["n_seeds"] = cfg.seeds.size();
      s["all_converged"] = r.all_converged;
      break;
    }
    case ExperimentKind::kDlnSharpness: {
      const auto r = run_dln_sharpness(cfg);
      std::vector<ojson> rows;
      for (const auto& x : r.rows)
        rows.push_back(row({{"seed", x.seed},
                            {"lr", r.lr},
                            {"control", dln::to_string(cfg.dln.control)},
                            {"control_value", x.cmp.control_value},
                            {"trace_flat", x.cmp.trace_flat},
                            {"trace_sharp", x.cmp.trace_sharp},
                            {"forgetting_flat", x.cmp.flat.forgetting_mass},
                            {"forgetting_sharp", x.cmp.sharp.forgetting_mass},
                            {"steps_flat", x.cmp.flat.steps_to_converge},
                            {"steps_sharp", x.cmp.sharp.steps_to_converge},
                            {"sharp_region_steps_flat", x.cmp.flat_steps_sharp},
                            {"sharp_region_steps_sharp", x.cmp.sharp_steps_sharp},
                            {"converged", x.cmp.flat.converged && x.cmp.sharp.converged}}));
      out.jsonl("dln_sharpness.jsonl", rows);
      s["lr"] = r.lr;
      s["sharpness_scale"] = cfg.dln.sharpness_scale;
      s["seeds_sharper_forgets_more"] = r.sharper_forgets_more;
      s["n_seeds"] = cfg.seeds.size();
      s["all_converged"] = r.all_converged;
      break;
    }
    case ExperimentKind::kSftLrSweep: {
      const auto r = run_sft_lr_sweep(cfg);
      for (const auto& pr : r.pretrain) detail::save_pretrain_checkpoints(out, cfg, pr);
      out.jsonl("pretrain.jsonl", detail::pretrain_rows(r.pretrain));
      out.jsonl("records.jsonl", detail::to_rows(r.records));
      CsvTable t{{"seed", "lr", "level", "step", "mpa", "ood_accuracy"}, {}};
      for (const auto& m : r.matched)
        for (std::size_t i = 0; i < m.mpa.size(); ++i)
          t.rows.push_back({std::to_string(m.seed), format_double(m.lrs[i]),
                            format_double(m.level), std::to_string(m.steps[i]),
                            format_double(m.mpa[i]), format_double(m.accuracy[i])});
      out.csv("matched_loss.csv", t);
      s["lrs"] = cfg.finetune.lrs;
      s["seeds_mpa_ordered"] = r.mpa_ordered;
      s["seeds_accuracy_ordered"] = r.accuracy_ordered;
      s["n_seeds"] = cfg.seeds.size();
      break;
    }
    case ExperimentKind::kOvertrainingScan: {
      const auto r = run_overtraining_scan(cfg);
      for (const auto& pr : r.pretrain) detail::save_pretrain_checkpoints(out, cfg, pr);
      out.jsonl("pretrain.jsonl", detail::pretrain_rows(r.pretrain));
      out.jsonl("records.jsonl", detail::to_rows(r.records));
      CsvTable t{{"seed", "lr", "checkpoint_step", "base_accuracy", "drop", "mpa"}, {}};
      for (const auto& c : r.cells)
        t.rows.push_back({std::to_string(c.seed), format_double(c.lr),
                          std::to_string(c.checkpoint_step), format_double(c.base_accuracy),
                          format_double(c.drop), format_double(c.mpa)});
      out.csv("overtraining.csv", t);
      ojson per = ojson::array();
      const std::size_t L = cfg.finetune.lrs.size();
      std::vector<std::size_t> drop_ok(L, 0), mpa_ok(L, 0), both_ok(L, 0), pair_both_ok(L, 0);
      std::size_t jump_ok = 0;
      for (const auto& x : r.seeds) {
        per.push_back({{"seed", x.seed},
                       {"pre_step", x.pre_step},
                       {"post_step", x.post_step},
                       {"drop_ordered", x.drop_ordered},
                       {"mpa_ordered", x.mpa_ordered},
                       {"pair_drop_ordered", x.pair_drop_ordered},
                       {"pair_mpa_ordered", x.pair_mpa_ordered},
                       {"proxy_jump", x.proxy_jump},
                       {"control_change", detail::opt_number(x.control_change)},
                       {"jump_ratio", detail::opt_number(x.jump_ratio)}});
        for (std::size_t l = 0; l < L; ++l) {
          drop_ok[l] += x.drop_ordered[l];
          mpa_ok[l] += x.mpa_ordered[l];
          both_ok[l] += x.drop_ordered[l] && x.mpa_ordered[l];
          pair_both_ok[l] += x.pair_drop_ordered[l] && x.pair_mpa_ordered[l];
        }
        if (x.jump_ratio && *x.jump_ratio >= 2.0) ++jump_ok;
      }
      s["lrs"] = cfg.finetune.lrs;
      s["per_seed"] = per;
      s["seeds_drop_ordered"] = drop_ok;
      s["seeds_mpa_ordered"] = mpa_ok;
      s["seeds_both_ordered"] = both_ok;
      s["seeds_both_ordered_pair"] = pair_both_ok;
      s["seeds_proxy_jump_2x"] = jump_ok;
      s["n_seeds"] = cfg.seeds.size();
      break;
    }
    case ExperimentKind::kEos: {
      const auto r = run_eos(cfg);
      std::vector<ojson> rows;
      ojson runs = ojson::array();
      for (const auto& run : r.runs) {
        for (const auto& p : run.trace.points)
          rows.push_back(row({{"seed", run.seed},
                              {"lr", run.lr},
                              {"step", p.step},
                              {"loss", p.loss},
                              {"lambda_max", p.lambda_max},
                              {"threshold", run.trace.threshold}}));
        runs.push_back({{"seed", run.seed},
                        {"lr", run.lr},
                        {"threshold", run.trace.threshold},
                        {"fraction_in_band", run.trace.fraction_in_band},
                        {"plateau", run.trace.plateau}});
      }
      out.jsonl("eos.jsonl", rows);
      s["runs"] = runs;
      break;
    }
    case ExperimentKind::kLandscapeScan: {
      const auto r = run_landscape_scan(cfg);
      std::ofstream csv(out.file("landscape.csv"), std::ios::binary);
      write_profile_csv_header(csv);
      for (const auto& p : r.profiles) write_profile_csv(csv, p);
      CsvTable st{{"seed", "step", "convex_flag", "delta_loss", "delta_mpa_mean"}, {}};
      for (std::size_t i = 0; i < r.profiles.size(); ++i) {
        const auto& p = r.profiles[i];
        double dm = 0.0;
        for (const auto& [layer, d] : p.delta_mpa) dm += d / static_cast<double>(p.delta_mpa.size());
        st.rows.push_back({std::to_string(r.profile_seed[i]), std::to_string(p.step_index),
                           p.convex_flag ? "1" : "0", format_double(p.delta_loss),
                           format_double(dm)});
      }
      out.csv("steps.csv", st, "delta_loss=loss(0)-loss(1)");
      s["profiles"] = r.profiles.size();
      s["convex"] = r.convex;
      s["convex_descending"] = r.convex_descending;
      s["ratio_violations"] = r.ratio_violations;
      s["min_mpa_r2"] = r.min_mpa_r2;
      s["mean_mpa_r2"] = r.mean_mpa_r2;
      break;
    }
    case ExperimentKind::kSharpnessValidation: {
      const auto runs = run_sharpness_validation(cfg);
      std::vector<ojson> rows;
      ojson corr = ojson::array();
      for (const auto& run : runs) {
        for (std::size_t c = 0; c < run.table.rows.size(); ++c)
          rows.push_back(row({{"seed", run.seed},
                              {"checkpoint", c},
                              {"step", run.steps[c]},
                              {"sharpness_proxy", run.table.rows[c].proxy.value},
                              {"lambda_max", run.table.rows[c].eigen.lambda_max}}));
        corr.push_back({{"seed", run.seed},
                        {"spearman", detail::opt_number(run.table.rank_correlation)}});
      }
      out.jsonl("validation.jsonl", rows);
      s["rank_correlation"] = corr;
      break;
    }
  }
  out.json("config.json", experiment_json(cfg));
  out.json("summary.json", s);

  ExperimentOutput o;
  o.summary = s;
  o.manifest.config_hash = config_hash(cfg);
  o.manifest.kind = to_string(cfg.kind);
  o.manifest.seeds = cfg.seeds;
  o.manifest.artifacts = out.artifacts();
  o.manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(out_dir / "manifest.json", std::ios::binary) << to_json(o.manifest).dump(2) << "\n";
  return o;
}

}  // namespace driftlab::exp
