#pragma once

// Result files: JSONL run records, CSV tables, checkpoints and the run
// manifest. Every file carries schema_version and loaders refuse other values.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftlab/actm.hpp"
#include "driftlab/error.hpp"
#include "driftlab/format.hpp"
#include "driftlab/smallnet.hpp"

namespace driftlab::exp {

using ojson = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "driftlab 0.1.0";

/// One evaluation point of one finetuning run.
struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  long checkpoint_step = 0;
  double finetune_lr = 0.0;
  long finetune_step = 0;
  std::size_t repeat = 0;
  double train_loss = 0.0;
  double ood_accuracy = 0.0;
  std::vector<double> mpa;  // per hidden layer
  std::optional<double> sharpness_proxy;

  bool operator==(const RunRecord&) const = default;
};

inline ojson to_json(const RunRecord& r) {
  ojson j;
  j["schema_version"] = kSchemaVersion;
  j["run_id"] = r.run_id;
  j["seed"] = r.seed;
  j["checkpoint_step"] = r.checkpoint_step;
  j["finetune_lr"] = r.finetune_lr;
  j["finetune_step"] = r.finetune_step;
  j["repeat"] = r.repeat;
  j["train_loss"] = r.train_loss;
  j["ood_accuracy"] = r.ood_accuracy;
  j["mpa"] = r.mpa;
  j["sharpness_proxy"] = r.sharpness_proxy ? ojson(*r.sharpness_proxy) : ojson(nullptr);
  return j;
}

namespace detail {

inline void check_schema(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw FormatError(where + ": missing schema_version");
  const auto& v = j["schema_version"];
  if (!v.is_number_integer() || v.get<long long>() != kSchemaVersion)
    throw FormatError(where + ": schema_version " + v.dump() + " is not " +
                      std::to_string(kSchemaVersion));
}

}  // namespace detail

inline RunRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  detail::check_schema(j, where);
  RunRecord r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.checkpoint_step = j.at("checkpoint_step").get<long>();
    r.finetune_lr = j.at("finetune_lr").get<double>();
    r.finetune_step = j.at("finetune_step").get<long>();
    r.repeat = j.at("repeat").get<std::size_t>();
    r.train_loss = j.at("train_loss").get<double>();
    r.ood_accuracy = j.at("ood_accuracy").get<double>();
    r.mpa = j.at("mpa").get<std::vector<double>>();
    if (!j.at("sharpness_proxy").is_null()) r.sharpness_proxy = j["sharpness_proxy"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
  return r;
}

/// Writes one JSON object per line.
inline void write_jsonl(std::ostream& os, const std::vector<ojson>& rows) {
  for (const auto& r : rows) os << r.dump() << "\n";
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<ojson>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_jsonl(out, rows);
}

/// Parses JSONL, checking schema_version on every line. Errors name the line.
inline std::vector<nlohmann::json> read_jsonl(std::istream& is, const std::string& name) {
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    detail::check_schema(j, where);
    rows.push_back(std::move(j));
  }
  return rows;
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return read_jsonl(in, path.string());
}

inline std::vector<RunRecord> read_records(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  std::size_t i = 0;
  for (const auto& j : read_jsonl(path))
    out.push_back(record_from_json(j, path.string() + " record " + std::to_string(++i)));
  return out;
}

/// Small CSV table: a "# schema_version=N" line, a header, then rows.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw FormatError("csv: no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }
};

inline void write_csv(std::ostream& os, const CsvTable& t, const std::string& note = "") {
  os << "# schema_version=" << kSchemaVersion;
  if (!note.empty()) os << "; " << note;
  os << "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << "\n";
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << "\n";
  }
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t,
                      const std::string& note = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(out, t, note);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline CsvTable read_csv(std::istream& is, const std::string& name) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(name + ":1: empty file");
  const std::string tag = "# schema_version=";
  if (line.rfind(tag, 0) != 0) throw FormatError(name + ":1: missing schema_version line");
  const std::string ver = line.substr(tag.size(), line.find(';') - tag.size());
  if (ver != std::to_string(kSchemaVersion))
    throw FormatError(name + ":1: schema_version " + ver + " is not " +
                      std::to_string(kSchemaVersion));
  CsvTable t;
  if (!std::getline(is, line)) throw FormatError(name + ":2: missing header");
  t.columns = detail::split_csv_line(line);
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != t.columns.size())
      throw FormatError(name + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(t.columns.size()) + " fields, got " +
                        std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return read_csv(in, path.string());
}

/// Parameters as a 1 x P ACTM matrix next to a JSON sidecar with the metadata.
struct Checkpoint {
  ParamVector params;
  ojson meta;  // step, seed, model, schedule arm, ...
};

inline void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& c) {
  Matrix m(1, c.params.size(), c.params.values);
  actm::save(std::filesystem::path(stem).concat(".actm"), m);
  ojson meta;
  meta["schema_version"] = kSchemaVersion;
  meta["num_params"] = c.params.size();
  for (auto it = c.meta.begin(); it != c.meta.end(); ++it)
    if (it.key() != "schema_version" && it.key() != "num_params") meta[it.key()] = it.value();
  std::ofstream out(std::filesystem::path(stem).concat(".json"), std::ios::binary);
  if (!out) throw Error("cannot write checkpoint sidecar for " + stem.string());
  out << meta.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  const auto side = std::filesystem::path(stem).concat(".json");
  std::ifstream in(side, std::ios::binary);
  if (!in) throw Error("cannot read " + side.string());
  ojson meta;
  try {
    meta = ojson::parse(in);
  } catch (const ojson::parse_error& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  detail::check_schema(nlohmann::json(meta), side.string());
  const Matrix m = actm::load(std::filesystem::path(stem).concat(".actm"));
  if (m.rows() != 1 || meta.value("num_params", std::size_t{0}) != m.cols())
    throw FormatError(stem.string() + ": parameter count does not match sidecar");
  Checkpoint c;
  c.params = ParamVector(std::vector<double>(m.data().begin(), m.data().end()));
  c.meta = std::move(meta);
  return c;
}

struct RunManifest {
  std::string config_hash;
  std::string kind;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> artifacts;  // relative to the output directory
  std::string code_version = kCodeVersion;
  double wall_clock_seconds = 0.0;
};

inline ojson to_json(const RunManifest& m) {
  ojson j;
  j["schema_version"] = kSchemaVersion;
  j["config_hash"] = m.config_hash;
  j["kind"] = m.kind;
  j["seeds"] = m.seeds;
  auto a = m.artifacts;
  std::sort(a.begin(), a.end());
  j["artifacts"] = a;
  j["code_version"] = m.code_version;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  return j;
}

}  // namespace driftlab::exp
