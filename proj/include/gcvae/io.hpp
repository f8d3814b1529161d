#pragma once

// On-disk formats: dataset directories (manifest + raw f64 trajectories),
// p x p graph CSVs, and the per-epoch loss log.

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcvae/errors.hpp"
#include "gcvae/evalkit.hpp"
#include "gcvae/params.hpp"
#include "gcvae/synth.hpp"
#include "gcvae/tensor.hpp"
#include "gcvae/trainer.hpp"

namespace gcvae::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kManifestVersion = 1;

// ---- raw trajectories -----------------------------------------------------

inline void write_f64_file(const fs::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  for (double v : t.data()) detail::put_le(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

/// Reads a little-endian f64 file into `shape`; the byte length must match exactly.
inline Tensor read_f64_file(const fs::path& path, const Shape& shape) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "'");
  Tensor t(shape);
  if (bytes != 8 * t.size())
    throw IoError("'" + path.string() + "' has " + std::to_string(bytes) + " bytes, expected " +
                  std::to_string(8 * t.size()) + " for " + shape_str(shape));
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  for (double& v : t.data()) {
    std::uint64_t bits = 0;
    if (!detail::get_le(is, bits)) throw IoError("'" + path.string() + "' truncated");
    v = std::bit_cast<double>(bits);
  }
  return t;
}

// ---- graph CSV ------------------------------------------------------------

inline std::string format_g12(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_matrix_csv(const fs::path& path, const Tensor& m) {
  if (m.rank() != 2) throw ConfigError("write_matrix_csv: need a matrix, got " + shape_str(m.shape()));
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) os << (j ? "," : "") << format_g12(m.at({i, j}));
    os << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline Tensor read_matrix_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::vector<double> vals;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw IoError("'" + path.string() + "': bad number '" + cell + "'");
      }
      if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos)
        throw IoError("'" + path.string() + "': bad number '" + cell + "'");
      vals.push_back(v);
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw IoError("'" + path.string() + "': ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw IoError("'" + path.string() + "' is empty");
  return Tensor({rows, cols}, std::move(vals));
}

// ---- dataset directory ----------------------------------------------------

struct EntityEntry {
  std::size_t id = 0;
  std::string file;
  std::size_t length = 0;  // T_long
};

struct Manifest {
  int version = kManifestVersion;
  std::size_t p = 0, d = 0, M = 0;
  std::string dtype = "f64le";
  std::vector<EntityEntry> entities;
  std::string common_truth;
  std::vector<std::string> entity_truth;
  json generator = json::object();
};

inline json to_json(const Manifest& m) {
  json ents = json::array();
  for (const auto& e : m.entities) ents.push_back({{"id", e.id}, {"file", e.file}, {"length", e.length}});
  return {{"version", m.version},
          {"p", m.p},
          {"d", m.d},
          {"M", m.M},
          {"dtype", m.dtype},
          {"entities", ents},
          {"truth", {{"common", m.common_truth}, {"entities", m.entity_truth}}},
          {"generator", m.generator}};
}

inline Manifest manifest_from_json(const json& j) {
  try {
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) throw IoError("manifest: unsupported version " + std::to_string(m.version));
    m.p = j.at("p").get<std::size_t>();
    m.d = j.at("d").get<std::size_t>();
    m.M = j.at("M").get<std::size_t>();
    m.dtype = j.at("dtype").get<std::string>();
    if (m.dtype != "f64le") throw IoError("manifest: unsupported dtype '" + m.dtype + "'");
    for (const auto& e : j.at("entities"))
      m.entities.push_back({e.at("id").get<std::size_t>(), e.at("file").get<std::string>(), e.at("length").get<std::size_t>()});
    if (j.contains("truth")) {
      m.common_truth = j.at("truth").value("common", "");
      m.entity_truth = j.at("truth").value("entities", std::vector<std::string>{});
    }
    m.generator = j.value("generator", json::object());
    if (m.entities.size() != m.M)
      throw IoError("manifest: M = " + std::to_string(m.M) + " but " + std::to_string(m.entities.size()) + " entities listed");
    if (m.p == 0 || m.d == 0) throw IoError("manifest: p and d must be positive");
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
}

struct Dataset {
  Manifest manifest;
  std::vector<Tensor> trajectories;  // M of [T_long, p, d]
};

/// Checks every entity file before reading any of them.
inline void validate_manifest(const fs::path& dir, const Manifest& m) {
  for (const auto& e : m.entities) {
    const fs::path f = dir / e.file;
    std::error_code ec;
    const auto bytes = fs::file_size(f, ec);
    if (ec) throw IoError("missing entity file '" + f.string() + "'");
    const std::uintmax_t want = 8 * e.length * m.p * m.d;
    if (bytes != want)
      throw IoError("'" + f.string() + "' has " + std::to_string(bytes) + " bytes, expected " + std::to_string(want));
  }
}

inline Manifest read_manifest(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open '" + (dir / "manifest.json").string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest.json: ") + e.what());
  }
  Manifest m = manifest_from_json(j);
  validate_manifest(dir, m);
  return m;
}

inline Dataset load_dataset(const fs::path& dir) {
  Dataset ds{read_manifest(dir), {}};
  for (const auto& e : ds.manifest.entities)
    ds.trajectories.push_back(read_f64_file(dir / e.file, {e.length, ds.manifest.p, ds.manifest.d}));
  return ds;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

/// Writes trajectories, truth CSVs and manifest.json into `dir` (created if needed).
inline Manifest write_dataset(const fs::path& dir, const std::vector<Tensor>& trajectories, const TruthSet& truth,
                              const json& generator) {
  if (trajectories.empty()) throw ConfigError("write_dataset: no trajectories");
  fs::create_directories(dir);
  Manifest m;
  const Tensor& first = trajectories.front();
  if (first.rank() != 3) throw ConfigError("write_dataset: trajectories must be [T, p, d]");
  m.p = first.dim(1);
  m.d = first.dim(2);
  m.M = trajectories.size();
  m.generator = generator;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Tensor& t = trajectories[k];
    if (t.rank() != 3 || t.dim(1) != m.p || t.dim(2) != m.d)
      throw ConfigError("write_dataset: entity " + std::to_string(k) + " has shape " + shape_str(t.shape()));
    const std::string name = "entity_" + std::to_string(k) + ".bin";
    write_f64_file(dir / name, t);
    m.entities.push_back({k, name, t.dim(0)});
  }
  m.common_truth = "common.csv";
  write_matrix_csv(dir / m.common_truth, truth.common);
  for (std::size_t k = 0; k < truth.entities.size(); ++k) {
    m.entity_truth.push_back("entity_" + std::to_string(k) + ".csv");
    write_matrix_csv(dir / m.entity_truth.back(), truth.entities[k]);
  }
  write_json(dir / "manifest.json", to_json(m));
  return m;
}

// ---- estimates and logs ---------------------------------------------------

inline void write_estimates(const fs::path& dir, const InferenceResult& inf) {
  fs::create_directories(dir);
  write_matrix_csv(dir / "common_est.csv", inf.common);
  for (std::size_t k = 0; k < inf.entities.size(); ++k)
    write_matrix_csv(dir / ("entity_" + std::to_string(k) + "_est.csv"), inf.entities[k]);
}

struct GraphSet {
  Tensor common;
  std::vector<Tensor> entities;
};

/// Reads common_est.csv + entity_<m>_est.csv, stopping at the first missing index.
inline GraphSet read_estimates(const fs::path& dir) {
  GraphSet g{read_matrix_csv(dir / "common_est.csv"), {}};
  for (std::size_t k = 0;; ++k) {
    const fs::path f = dir / ("entity_" + std::to_string(k) + "_est.csv");
    if (!fs::exists(f)) break;
    g.entities.push_back(read_matrix_csv(f));
  }
  return g;
}

/// Truth graphs of a dataset directory, located through its manifest.
inline GraphSet read_truth(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  if (m.common_truth.empty()) throw IoError("'" + dir.string() + "' has no truth graphs");
  GraphSet g{read_matrix_csv(dir / m.common_truth), {}};
  for (const auto& f : m.entity_truth) g.entities.push_back(read_matrix_csv(dir / f));
  return g;
}

inline void write_loss_csv(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "epoch,recon,kl_common,kl_entity,total\n";
  for (const auto& e : log)
    os << e.epoch << ',' << format_g12(e.recon) << ',' << format_g12(e.kl_common) << ',' << format_g12(e.kl_entity)
       << ',' << format_g12(e.total) << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

// ---- metrics report -------------------------------------------------------

inline json to_json(const GraphMetrics& m) {
  return {{"auroc", m.auroc}, {"auprc", m.auprc}, {"f1_best", m.best_f1}, {"f1_threshold", m.best_threshold}};
}

/// Threshold used for raw-support accuracy; binary estimates live in [0,1].
inline constexpr double kSupportThreshold = 0.5;

inline json graph_report(const Tensor& est, const Tensor& truth) {
  const GraphEvaluation ev = evaluate_graph(est, truth);
  json sweep = json::array();
  for (const auto& r : ev.sweep) sweep.push_back({{"threshold", r.threshold}, {"tpr", r.tpr}, {"tnr", r.tnr}, {"acc", r.acc}});
  json j = ev.all ? to_json(*ev.all) : json{{"auroc", nullptr}, {"auprc", nullptr}, {"f1_best", nullptr}, {"f1_threshold", nullptr}};
  j["off_diagonal"] = ev.off_diagonal ? to_json(*ev.off_diagonal) : json(nullptr);
  j["sweep"] = sweep;
  j["sign_agreement"] = {{"fraction", ev.sign.defined ? json(ev.sign.fraction) : json(nullptr)},
                         {"flipped", ev.sign.flipped},
                         {"compared", ev.sign.compared}};
  j["support_accuracy"] = support_accuracy(est, truth, kSupportThreshold);
  j["frobenius_error"] = frobenius_error(est, truth);
  return j;
}

/// Common and per-entity reports plus entity macro-averages over the
/// entities where each metric is defined.
inline json metrics_report(const GraphSet& est, const GraphSet& truth) {
  if (est.entities.size() != truth.entities.size())
    throw ConfigError("estimate has " + std::to_string(est.entities.size()) + " entity graphs, truth has " +
                      std::to_string(truth.entities.size()));
  json out;
  out["common"] = graph_report(est.common, truth.common);
  json ents = json::array();
  for (std::size_t k = 0; k < est.entities.size(); ++k) ents.push_back(graph_report(est.entities[k], truth.entities[k]));
  json macro = json::object();
  for (const char* key : {"auroc", "auprc", "f1_best", "support_accuracy", "frobenius_error"}) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& e : ents)
      if (!e[key].is_null()) {
        acc += e[key].get<double>();
        ++n;
      }
    macro[key] = n ? json(acc / static_cast<double>(n)) : json(nullptr);
  }
  out["entities"] = ents;
  out["entity_macro"] = macro;
  return out;
}

inline void write_sweep_csv(const fs::path& path, const json& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "graph,threshold,tpr,tnr,acc\n";
  auto rows = [&](const std::string& name, const json& g) {
    for (const auto& r : g["sweep"])
      os << name << ',' << format_g12(r["threshold"].get<double>()) << ',' << format_g12(r["tpr"].get<double>()) << ','
         << format_g12(r["tnr"].get<double>()) << ',' << format_g12(r["acc"].get<double>()) << '\n';
  };
  rows("common", report["common"]);
  for (std::size_t k = 0; k < report["entities"].size(); ++k) rows("entity_" + std::to_string(k), report["entities"][k]);
}

}  // namespace gcvae::io
