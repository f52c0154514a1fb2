// driftlab command line: runs configured experiments, computes MPA between two
// activation files, renders plots.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "driftlab/actm.hpp"
#include "driftlab/config.hpp"
#include "driftlab/experiments.hpp"
#include "driftlab/format.hpp"
#include "driftlab/subspace.hpp"
#include "driftlab/svg.hpp"

namespace fs = std::filesystem;
using namespace driftlab;

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> workers;
};

void add_run_flags(CLI::App* sub, RunFlags& f) {
  sub->add_option("--config", f.config, "experiment config (JSON)")->required();
  sub->add_option("--seed", f.seed, "run this single seed instead of the config's seeds");
  sub->add_option("--out-dir", f.out_dir, "output directory (overrides the config)");
  sub->add_option("--workers", f.workers, "worker threads (0: all cores)");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("DRIFTLAB_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  const std::string str(s);
  auto [p, ec] = std::from_chars(str.data(), str.data() + str.size(), v);
  if (ec != std::errc() || p != str.data() + str.size())
    throw ConfigError("DRIFTLAB_SEED is not an unsigned integer: '" + str + "'");
  return v;
}

// --seed beats the config's seeds; DRIFTLAB_SEED only fills in when the config
// names none.
exp::ExperimentConfig resolve(const RunFlags& f) {
  std::ifstream in(f.config);
  if (!in) throw ConfigError("cannot open config " + f.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + f.config + ": " + e.what());
  }
  exp::ExperimentConfig c = exp::parse_config(j);
  if (f.seed)
    c.seeds = {*f.seed};
  else if (!j.contains("seeds"))
    if (auto s = env_seed()) c.seeds = {*s};
  if (!f.out_dir.empty()) c.out_dir = f.out_dir;
  if (f.workers) c.workers = *f.workers;
  exp::validate(c);
  return c;
}

void require_kind(const exp::ExperimentConfig& c, const std::string& sub,
                  const std::vector<exp::ExperimentKind>& kinds) {
  for (auto k : kinds)
    if (c.kind == k) return;
  std::string names;
  for (auto k : kinds) names += (names.empty() ? "" : " | ") + exp::to_string(k);
  throw ConfigError("'" + sub + "' needs a config of kind " + names + ", got " +
                    exp::to_string(c.kind));
}

void report(const exp::ExperimentOutput& o, const fs::path& out_dir) {
  std::cout << o.summary.dump(2) << "\n";
  std::cerr << "wrote " << o.manifest.artifacts.size() << " files to " << out_dir.string() << " ("
            << format_double(std::round(o.manifest.wall_clock_seconds * 10) / 10) << " s)\n";
}

std::string with_point(std::string s) {
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driftlab: forgetting, feature drift and sharpness on small models"};
  app.require_subcommand(1);

  struct Sub {
    std::string name;
    std::string help;
    std::vector<exp::ExperimentKind> kinds;
  };
  using K = exp::ExperimentKind;
  const std::vector<Sub> runs{
      {"dln", "diagonal linear network finetuning runs", {K::kDlnFig4, K::kDlnSharpness}},
      {"sharpness", "perturbation proxy vs top Hessian eigenvalue", {K::kSharpnessValidation}},
      {"eos", "edge-of-stability tracking under full-batch GD", {K::kEos}},
      {"landscape", "per-step interpolation profiles during finetuning", {K::kLandscapeScan}},
      {"sft-sweep", "finetuning lr sweep with matched-loss comparison", {K::kSftLrSweep}},
      {"overtrain", "fixed finetuning from every pretraining checkpoint", {K::kOvertrainingScan}},
  };
  std::vector<RunFlags> run_flags(runs.size());
  std::vector<CLI::App*> run_apps;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto* sub = app.add_subcommand(runs[i].name, runs[i].help);
    add_run_flags(sub, run_flags[i]);
    run_apps.push_back(sub);
  }

  RunFlags pre_flags;
  auto* pre = app.add_subcommand("pretrain", "pretraining only; saves checkpoints");
  add_run_flags(pre, pre_flags);

  std::string base_path, ft_path;
  std::size_t k = kDefaultMpaK;
  auto* mpa_cmd = app.add_subcommand("mpa", "mean principal angle between two activation files");
  mpa_cmd->add_option("--base", base_path, "base activations (ACTM)")->required();
  mpa_cmd->add_option("--ft", ft_path, "finetuned activations (ACTM)")->required();
  mpa_cmd->add_option("--k", k, "subspace dimension");

  std::string input, x_col, y_col, group, kind = "line", out_svg, title;
  bool log_x = false;
  auto* plot = app.add_subcommand("plot", "SVG plot from a JSONL or CSV result file");
  plot->add_option("--input", input, "JSONL or CSV file")->required();
  plot->add_option("--x", x_col, "x field")->required();
  plot->add_option("--y", y_col, "y field")->required();
  plot->add_option("--group", group, "field that splits rows into series");
  plot->add_option("--kind", kind, "line | scatter");
  plot->add_option("--title", title, "plot title");
  plot->add_flag("--log-x", log_x, "log-scaled x axis");
  plot->add_option("--out", out_svg, "output SVG")->required();

  std::string check_path;
  auto* check = app.add_subcommand("validate-config", "parse and validate a config");
  check->add_option("--config", check_path, "experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (!run_apps[i]->parsed()) continue;
      const auto c = resolve(run_flags[i]);
      require_kind(c, runs[i].name, runs[i].kinds);
      report(exp::run_experiment(c, c.out_dir), c.out_dir);
      return 0;
    }
    if (pre->parsed()) {
      const auto c = resolve(pre_flags);
      require_kind(c, "pretrain", {K::kSftLrSweep, K::kOvertrainingScan, K::kLandscapeScan});
      report(exp::run_pretrain_only(c, c.out_dir), c.out_dir);
      return 0;
    }
    if (mpa_cmd->parsed()) {
      const Matrix a = actm::load(base_path);
      const Matrix b = actm::load(ft_path);
      std::cout << with_point(format_double(mpa_from_activations(a, b, k).mean)) << "\n";
      return 0;
    }
    if (plot->parsed()) {
      svg::PlotSpec spec;
      spec.title = title.empty() ? y_col + " vs " + x_col : title;
      spec.x_label = x_col;
      spec.y_label = y_col;
      spec.kind = svg::plot_kind_from_string(kind);
      spec.log_x = log_x;
      std::vector<svg::Series> series;
      if (fs::path(input).extension() == ".csv")
        series = svg::series_from_csv(exp::read_csv(fs::path(input)), x_col, y_col, group, input);
      else
        series = svg::series_from_jsonl(exp::read_jsonl(fs::path(input)), x_col, y_col, group,
                                        input);
      const std::string doc = svg::render(spec, series);
      std::ofstream out(out_svg, std::ios::binary);
      if (!out) throw Error("cannot write " + out_svg);
      out << doc;
      return 0;
    }
    if (check->parsed()) {
      const auto c = exp::load_config(check_path);
      std::cout << exp::to_string(c.kind) << " config ok, hash " << exp::config_hash(c) << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
