// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Runs the committed configs, so it takes several minutes on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "driftlab/experiments.hpp"
#include "driftlab/quadratic.hpp"
#include "driftlab/svg.hpp"
#include "oracles.hpp"

using namespace driftlab;
using namespace driftlab::exp;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = DRIFTLAB_SOURCE_DIR;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;  // runtime limit
  std::function<Outcome()> run;
};

ExperimentConfig config(const std::string& name) {
  ExperimentConfig c = load_config(kSource / "configs" / name);
  c.workers = 0;
  return c;
}

// -------------------------------------------------------------- MPA

Matrix spread(std::size_t n, std::size_t d, std::uint64_t seed) {
  Matrix x = oracle::random_matrix(n, d, seed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) *= std::pow(0.7, static_cast<double>(j));
  return x;
}

Outcome mpa_correctness() {
  std::ostringstream d;
  bool ok = true;
  double worst_identical = 0, worst_rot = 0, worst_inv = 0;
  bool symmetric = true;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = spread(60, 10, s), y = spread(60, 10, 100 + s);
    worst_identical = std::max(worst_identical, mpa_from_activations(x, x, 4).mean);
    if (mpa_from_activations(x, y, 4).mean != mpa_from_activations(y, x, 4).mean)
      symmetric = false;
    const double base = mpa_from_activations(x, y, 4).mean;
    const Matrix r = svd(oracle::random_matrix(10, 10, 500 + s)).u;
    worst_inv = std::max(worst_inv,
                         std::abs(mpa_from_activations(matmul(x, r), matmul(y, r), 4).mean - base));
    for (double c : {1e-3, 3.0, 1e4})
      worst_inv = std::max(worst_inv, std::abs(mpa_from_activations(c * x, y, 4).mean - base));
  }
  Matrix x(200, 2);
  SeededRng rng(3);
  for (std::size_t i = 0; i < 200; ++i) {
    x(i, 0) = 3.0 * rng.normal();
    x(i, 1) = 0.5 * rng.normal();
  }
  for (double theta : {1e-3, 0.1, 0.5, 1.0, 1.4}) {
    const Matrix rot{{std::cos(theta), std::sin(theta)}, {-std::sin(theta), std::cos(theta)}};
    worst_rot =
        std::max(worst_rot, std::abs(mpa_from_activations(x, matmul(x, rot), 1).mean - theta));
  }
  ok = worst_identical == 0.0 && worst_rot <= 1e-8 && worst_inv <= 1e-8 && symmetric;
  d << "identical max " << num(worst_identical) << " (need 0); rotation err " << num(worst_rot)
    << " (<=1e-8); invariance err " << num(worst_inv) << " (<=1e-8); symmetric "
    << (symmetric ? "yes" : "no");
  return {ok, d.str()};
}

// -------------------------------------------------------------- DLN

Outcome dln_fig4() {
  const auto cfg = config("fig4.json");
  const auto& s = cfg.dln.supports;
  const bool setup = s.d == 100 && s.a == 0 && s.z1 == 23 && s.b == 45 && s.z2 == 66 &&
                     cfg.seeds.size() == 10 && cfg.dln.loss_threshold <= 1e-6;
  const auto r = run_dln_fig4(cfg);
  double worst_loss = 0;
  for (const auto& c : r.cells) worst_loss = std::max(worst_loss, c.run.final_loss);
  const bool ok = setup && r.all_converged && worst_loss <= 1e-6 &&
                  r.mean_forgetting.back() > r.mean_forgetting.front() && r.ordered_seeds >= 8;
  std::ostringstream d;
  d << "d=" << s.d << " seeds=" << cfg.seeds.size() << "; max final loss " << num(worst_loss)
    << " (<=1e-6); mean forgetting lr " << num(r.lrs.front()) << ": "
    << num(r.mean_forgetting.front()) << ", lr " << num(r.lrs.back()) << ": "
    << num(r.mean_forgetting.back()) << "; ordered " << r.ordered_seeds << "/10 (>=8)";
  return {ok, d.str()};
}

Outcome dln_sharpness() {
  const auto cfg = config("dln_sharpness.json");
  const auto r = run_dln_sharpness(cfg);
  double min_ratio = std::numeric_limits<double>::infinity();
  for (const auto& row : r.rows)
    min_ratio = std::min(min_ratio, row.cmp.trace_sharp / row.cmp.trace_flat);
  const std::size_t n = r.rows.size();
  const bool ok = n >= 10 && r.all_converged && min_ratio >= 4.0 - 1e-9 &&
                  r.sharper_forgets_more * 10 >= 8 * n;
  std::ostringstream d;
  d << "lr " << num(r.lr) << "; min initial trace ratio " << num(min_ratio)
    << " (>=4); sharper forgets at least as much in " << r.sharper_forgets_more << "/" << n
    << " (>=8/10)";
  return {ok, d.str()};
}

// -------------------------------------------------------------- oracles

std::vector<double> flat(const dln::DlnParams& p) {
  std::vector<double> x = p.u;
  x.insert(x.end(), p.v.begin(), p.v.end());
  return x;
}

dln::DlnParams unflat(const std::vector<double>& x) {
  const auto h = static_cast<long>(x.size() / 2);
  return {{x.begin(), x.begin() + h}, {x.begin() + h, x.end()}};
}

Outcome oracles() {
  // DLN at fig4 size, off the balanced point
  const auto cfg = config("fig4.json");
  double dln_grad = 0, dln_trace = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto prob = make_dln_problem(cfg.dln, seed);
    auto p = dln::init_from_pretrained(prob.truths.w_pret, 0.1);
    SeededRng rng(seed + 10);
    for (auto& u : p.u) u += 0.05 * rng.normal();
    const auto g = dln::grad(p, prob.data);
    auto analytic = g.gu;
    analytic.insert(analytic.end(), g.gv.begin(), g.gv.end());
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return dln::loss(unflat(x), prob.data); }, flat(p),
        1e-6);
    dln_grad = std::max(dln_grad, oracle::rel_vec_err(analytic, fd));
    const auto x0 = flat(p);
    const double h = 1e-4, l0 = dln::loss(p, prob.data);
    double tr = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      auto xp = x0, xm = x0;
      xp[i] += h;
      xm[i] -= h;
      tr += (dln::loss(unflat(xp), prob.data) - 2 * l0 + dln::loss(unflat(xm), prob.data)) / (h * h);
    }
    dln_trace = std::max(dln_trace, oracle::rel_err(dln::trace_sharpness(p, prob.data), tr));
  }

  // smallnet gradient, every activation/loss pair
  double net_grad = 0;
  for (auto act : {Activation::kTanh, Activation::kRelu})
    for (auto lk : {LossKind::kSquared, LossKind::kCrossEntropy}) {
      const Mlp m(ModelSpec{{5, 7, 6, 3}, act, lk});
      SeededRng rng(1);
      const ParamVector p = m.init(rng);
      Batch b{Matrix::gaussian(20, 5, rng), std::vector<std::size_t>(20)};
      for (auto& y : b.labels) y = rng.index(3);
      const auto analytic = m.loss_and_grad(p, b).grad.values;
      const auto fd = oracle::fd_gradient(
          [&](const std::vector<double>& v) { return m.loss(ParamVector(v), b); }, p.values, 1e-6);
      net_grad = std::max(net_grad, oracle::rel_vec_err(analytic, fd));
    }

  // power iteration vs dense Hessian: the validation net (467 params) after
  // some GD, plus a small net at init
  double eig = 0;
  std::size_t max_params = 0;
  {
    auto vc = config("sharpness_validation.json");
    vc.validation.steps = 500;
    vc.validation.checkpoints = 2;
    const Mlp m(vc.model.spec());
    const auto runs = run_sharpness_validation(vc);
    const TaskPair t = make_tasks(vc.data, vc.seeds.front(), false);
    const Batch b = slice(t.heldout_a, 0, 200);
    for (const auto& p : runs.front().params) {
      max_params = std::max(max_params, p.size());
      const auto ev = oracle::jacobi_eigenvalues(oracle::dense_fd_hessian(m, p, b));
      SeededRng rng(7);
      const auto e = top_eigenvalue(m, p, b, EigenOptions{1e-9, 5000}, rng);
      eig = std::max(eig, oracle::rel_err(e.lambda_max, ev.front()));
    }
  }
  for (std::uint64_t seed : {1, 2}) {
    const Mlp m(ModelSpec{{4, 8, 8, 3}, Activation::kTanh, LossKind::kSquared});
    SeededRng rng(seed);
    const ParamVector p = m.init(rng);
    TeacherSpec ts;
    ts.input_dim = 4;
    ts.feature_begin = 0;
    ts.feature_end = 4;
    ts.hidden = 8;
    ts.classes = 3;
    const Batch b = TeacherTask(ts, seed + 100).sample(64, rng);
    const auto ev = oracle::jacobi_eigenvalues(oracle::dense_fd_hessian(m, p, b));
    const auto e = top_eigenvalue(m, p, b, EigenOptions{1e-9, 5000}, rng);
    eig = std::max(eig, oracle::rel_err(e.lambda_max, ev.front()));
  }

  const bool ok = dln_grad <= 1e-6 && dln_trace <= 1e-5 && net_grad <= 1e-5 && eig <= 0.01 &&
                  max_params <= 500;
  std::ostringstream d;
  d << "DLN grad " << num(dln_grad) << " (<=1e-6), trace " << num(dln_trace)
    << " (<=1e-5); net grad " << num(net_grad) << " (<=1e-5); lambda_max rel err " << num(eig)
    << " (<=0.01, nets up to " << max_params << " params)";
  return {ok, d.str()};
}

// -------------------------------------------------------------- sharpness proxy

Outcome proxy_validity() {
  const auto cfg = config("sharpness_validation.json");
  const auto runs = run_sharpness_validation(cfg);
  const Mlp m(cfg.model.spec());
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  std::size_t min_ck = std::numeric_limits<std::size_t>::max();
  double min_rho = 1.0;
  bool defined = true;
  for (const auto& run : runs) {
    const TaskPair t = make_tasks(cfg.data, run.seed, false);
    std::vector<Batch> batches{t.heldout_a};
    const double sigma = 1e-5;
    for (const auto& p : run.params) {
      SeededRng r1 = stream(run.seed, Stream::kProxyNoise), r2 = r1;
      const double a = perturbation_sharpness(m, p, std::span<const Batch>(batches),
                                              ProxyOptions{sigma, cfg.sharpness.n_noise, false}, r1)
                           .value;
      const double b =
          perturbation_sharpness(m, p, std::span<const Batch>(batches),
                                 ProxyOptions{2 * sigma, cfg.sharpness.n_noise, false}, r2)
              .value;
      lo = std::min(lo, b / a);
      hi = std::max(hi, b / a);
    }
    min_ck = std::min(min_ck, run.table.rows.size());
    if (!run.table.rank_correlation) defined = false;
    else min_rho = std::min(min_rho, *run.table.rank_correlation);
  }
  const bool ok = lo >= 3.4 && hi <= 4.6 && min_ck >= 8 && defined && min_rho >= 0.9;
  std::ostringstream d;
  d << "proxy(2s)/proxy(s) in [" << num(lo) << ", " << num(hi) << "] (within [3.4, 4.6]); "
    << "Spearman(proxy, lambda_max) " << (defined ? num(min_rho) : "undefined") << " over "
    << min_ck << " checkpoints (>=0.9, >=8)";
  return {ok, d.str()};
}

// -------------------------------------------------------------- edge of stability

Outcome edge_of_stability() {
  const auto cfg = config("eos.json");
  const auto r = run_eos(cfg);
  std::ostringstream d;
  bool ok = !r.runs.empty();
  std::map<std::uint64_t, std::map<double, double>> plateau;
  for (const auto& run : r.runs) {
    plateau[run.seed][run.lr] = run.trace.plateau;
    ok = ok && run.trace.fraction_in_band >= 0.6;
    d << "lr " << num(run.lr) << ": plateau " << num(run.trace.plateau) << " vs 2/lr "
      << num(run.trace.threshold) << ", in band " << num(run.trace.fraction_in_band)
      << " (>=0.6); ";
  }
  std::size_t pairs = 0;
  for (const auto& [seed, by_lr] : plateau)
    for (const auto& [lr, p] : by_lr) {
      const auto half = by_lr.find(lr / 2);
      if (half == by_lr.end()) continue;
      const double ratio = half->second / p;
      ++pairs;
      ok = ok && ratio >= 2.0 * 0.75 && ratio <= 2.0 * 1.25;
      d << "plateau(lr " << num(lr / 2) << ")/plateau(lr " << num(lr) << ") " << num(ratio)
        << " (2 +- 25%)";
    }
  ok = ok && pairs > 0;
  return {ok, d.str()};
}

// -------------------------------------------------------------- ratio monotonicity

Outcome ratio_monotonicity() {
  // quadratic surrogate: L = theta^2 / 2, one exact step to the minimizer
  std::vector<double> diag{1.0};
  const auto q = QuadraticModel::diagonal(diag);
  const ParamVector t0(std::vector<double>{1.0}), t1(std::vector<double>{0.0});
  double quad_err = 0;
  for (const auto& e : loss_drop_ratio(step_profile(q, t0, t0, t1, Batch{})))
    quad_err = std::max(quad_err, e.ratio ? std::abs(*e.ratio - 2.0 / (2.0 - e.alpha)) : 1.0);

  const auto r = run_landscape_scan(config("landscape.json"));
  std::size_t convex = 0, violations = 0, partially_defined = 0;
  for (const auto& prof : r.profiles) {
    if (!prof.convex_flag) continue;
    ++convex;
    // on a convex line the drop is concave, so the ratio exists on a prefix of the grid
    std::vector<RatioEntry> defined;
    for (const auto& e : loss_drop_ratio(prof))
      if (e.ratio) defined.push_back(e);
    if (defined.size() + 2 < prof.alphas.size()) ++partially_defined;
    if (!ratio_nondecreasing(defined, 1e-9)) ++violations;
  }
  const bool ok = quad_err <= 1e-12 && convex > 0 && violations == 0;
  std::ostringstream d;
  d << "quadratic max err vs 2/(2-a) " << num(quad_err) << "; " << violations
    << " violations (tol 1e-9) in " << convex << " convex-flagged profiles of "
    << r.profiles.size() << " (" << partially_defined
    << " overshoot, ratio checked where the loss dropped)";
  return {ok, d.str()};
}

// -------------------------------------------------------------- phenomena

std::vector<std::string> info_lines;

Outcome phenomenon_orderings() {
  const auto sweep = run_sft_lr_sweep(config("sft_sweep.json"));
  std::size_t matched_both = 0;
  for (const auto& row : sweep.matched)
    matched_both += row.mpa_nondecreasing && row.accuracy_nonincreasing;
  const std::size_t n_sweep = sweep.matched.size();

  const auto ocfg = config("overtrain.json");
  const auto ot = run_overtraining_scan(ocfg);
  std::size_t both = 0, pair_both = 0, jump2 = 0;
  std::ostringstream ratios;
  for (const auto& s : ot.seeds) {
    bool b = true, pb = true;
    for (std::size_t l = 0; l < s.drop_ordered.size(); ++l) {
      b = b && s.drop_ordered[l] && s.mpa_ordered[l];
      pb = pb && s.pair_drop_ordered[l] && s.pair_mpa_ordered[l];
    }
    both += b;
    pair_both += pb;
    jump2 += s.proxy_jump > 0 && s.jump_ratio && *s.jump_ratio >= 2.0;
    ratios << (ratios.tellp() ? " " : "") << (s.jump_ratio ? num(*s.jump_ratio) : "n/a");
  }
  const std::size_t n_ot = ot.seeds.size();
  info_lines.push_back("overtraining, last pre-decay vs final checkpoint only: both orderings in " +
                       std::to_string(pair_both) + "/" + std::to_string(n_ot) + " seeds");

  const bool ok = n_sweep >= 5 && matched_both * 5 >= 4 * n_sweep && n_ot >= 5 &&
                  both * 5 >= 4 * n_ot && jump2 * 5 >= 4 * n_ot;
  std::ostringstream d;
  d << "matched loss: MPA up and accuracy down in " << matched_both << "/" << n_sweep
    << " (>=4/5); post-decay checkpoints drop more and drift more in " << both << "/" << n_ot
    << " (>=4/5); proxy jump >= 2x control in " << jump2 << "/" << n_ot << " (>=4/5; ratios "
    << ratios.str() << ")";
  return {ok, d.str()};
}

// -------------------------------------------------------------- reproducibility

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    if (rel == "manifest.json") continue;  // wall-clock time
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[rel] = ss.str();
  }
  return files;
}

Outcome reproducibility() {
  const fs::path tmp = fs::temp_directory_path() / "driftlab_acceptance";
  std::size_t same = 0, total = 0, data_files = 0;
  std::string mismatch;
  for (const auto& e : fs::directory_iterator(kSource / "configs")) {
    if (e.path().extension() != ".json") continue;
    ++total;
    ExperimentConfig c = load_config(e.path());
    const auto a = tmp / (e.path().stem().string() + "_a");
    const auto b = tmp / (e.path().stem().string() + "_b");
    fs::remove_all(a);
    fs::remove_all(b);
    c.workers = 1;
    run_experiment(c, a);
    c.workers = 3;
    run_experiment(c, b);
    const auto sa = snapshot(a), sb = snapshot(b);
    if (sa == sb && !sa.empty()) ++same;
    else mismatch += " " + e.path().filename().string();
    for (const auto& [name, _] : sa)
      data_files += name.ends_with(".jsonl") || name.ends_with(".csv");
    fs::remove_all(a);
    fs::remove_all(b);
  }

  svg::PlotSpec spec;
  spec.title = "forgetting vs lr";
  spec.x_label = "lr";
  spec.y_label = "forgetting";
  spec.log_x = true;
  const std::string svg_out =
      svg::render(spec, {{"seed=0", {0.01, 0.1, 1.0}, {0.6, 0.7, 0.9}},
                         {"seed=1", {0.01, 0.1, 1.0}, {0.55, 0.72, 0.8}}});
  std::ifstream in(kSource / "tests/golden/forgetting.svg", std::ios::binary);
  std::ostringstream golden;
  golden << in.rdbuf();
  const bool svg_ok = svg_out == golden.str();

  const bool ok = total > 0 && same == total && svg_ok;
  std::ostringstream d;
  d << same << "/" << total << " configs byte-identical on re-run (" << data_files
    << " JSONL/CSV files, 1 vs 3 workers)" << (mismatch.empty() ? "" : "; differ:" + mismatch)
    << "; golden SVG " << (svg_ok ? "matches" : "differs");
  return {ok, d.str()};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"mpa_correctness", 10, mpa_correctness},
      {"dln_fig4", 60, dln_fig4},
      {"dln_sharpness", 60, dln_sharpness},
      {"gradient_hessian_oracles", 60, oracles},
      {"sharpness_proxy_validity", 120, proxy_validity},
      {"edge_of_stability", 300, edge_of_stability},
      {"ratio_monotonicity", 60, ratio_monotonicity},
      {"phenomenon_orderings", 900, phenomenon_orderings},
      {"reproducibility", 1800, reproducibility},
  };
  std::size_t failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << num(secs)
              << " s, limit " << num(c.budget_s) << " s" << (in_time ? "" : ", over time")
              << "]" << std::endl;
  }
  for (const auto& l : info_lines) std::cout << "info " << l << "\n";
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/"
            << criteria.size() << " criteria\n";
  return failed ? 1 : 0;
}
