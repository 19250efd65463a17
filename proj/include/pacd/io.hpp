#pragma once

// Dataset CSV files and poison-set persistence.
//
// CSV layout: no header; each row holds d decimal features followed by one
// integer label. Values are written with 9 significant digits.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pacd/attack.hpp"

namespace pacd::io {

struct CsvOptions {
  Box feature_range;     // features outside the range are rejected
  int num_classes = -1;  // labels must lie in [0, num_classes) when set
};

inline Batch parse_csv(std::istream& in, const CsvOptions& opts = {}, const std::string& source = "<csv>") {
  std::vector<std::vector<double>> rows;
  Labels labels;
  std::string line;
  long row_no = 0;
  std::size_t width = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(source + ": row " + std::to_string(row_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() < 2) fail("need at least one feature and a label");
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      fail("ragged row: expected " + std::to_string(width) + " fields, got " + std::to_string(cells.size()));
    std::vector<double> feats;
    for (std::size_t j = 0; j + 1 < cells.size(); ++j) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        fail("bad number '" + cells[j] + "'");
      }
      if (cells[j].find_first_not_of(" \t", used) != std::string::npos) fail("bad number '" + cells[j] + "'");
      if (!std::isfinite(v) || !opts.feature_range.contains(v))
        fail("feature " + std::to_string(j) + " out of range: " + cells[j]);
      feats.push_back(v);
    }
    const std::string& lab = cells.back();
    std::size_t used = 0;
    long label = -1;
    try {
      label = std::stol(lab, &used);
    } catch (const std::exception&) {
      fail("bad label '" + lab + "'");
    }
    if (lab.find_first_not_of(" \t", used) != std::string::npos) fail("bad label '" + lab + "'");
    if (label < 0 || (opts.num_classes > 0 && label >= opts.num_classes)) fail("unknown label " + lab);
    rows.push_back(std::move(feats));
    labels.push_back(static_cast<int>(label));
  }
  if (rows.empty()) throw ParseError(source + ": empty dataset");
  Batch out{Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1)), std::move(labels)};
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return out;
}

inline Batch load_csv(const std::filesystem::path& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_csv(in, opts, path.string());
}

inline void write_csv(std::ostream& out, const Batch& batch) {
  batch.validate();
  char buf[32];
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    for (Eigen::Index j = 0; j < batch.x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", batch.x(i, j));
      out << buf << ',';
    }
    out << batch.y[static_cast<std::size_t>(i)] << '\n';
  }
}

inline void save_csv(const std::filesystem::path& path, const Batch& batch) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path.string());
  write_csv(out, batch);
}

struct PoisonManifest {
  double eps = 0.0;
  double sigma = 0.0;
  std::string method;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

// <dir>/poison.csv holds base + delta, <dir>/base.csv the unperturbed rows;
// both carry the labels. <dir>/manifest.json records how it was made.
inline void save_poison(const std::filesystem::path& dir, const PoisonSet& poison, const PoisonManifest& manifest) {
  std::filesystem::create_directories(dir);
  save_csv(dir / "poison.csv", poison.as_batch());
  save_csv(dir / "base.csv", Batch{poison.base_x, poison.labels});
  nlohmann::json j = {{"eps", manifest.eps},
                      {"sigma", manifest.sigma},
                      {"method", manifest.method},
                      {"seed", manifest.seed},
                      {"rows", poison.base_x.rows()},
                      {"dim", poison.base_x.cols()},
                      {"extra", manifest.extra}};
  std::ofstream(dir / "manifest.json") << j.dump(2) << '\n';
}

inline std::pair<PoisonSet, PoisonManifest> load_poison(const std::filesystem::path& dir, const CsvOptions& opts = {}) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ParseError("missing manifest in " + dir.string());
  nlohmann::json j;
  try {
    mf >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad manifest: ") + e.what());
  }
  PoisonManifest manifest;
  manifest.eps = j.value("eps", 0.0);
  manifest.sigma = j.value("sigma", 0.0);
  manifest.method = j.value("method", "");
  manifest.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("extra")) manifest.extra = j["extra"];
  const Batch u = load_csv(dir / "poison.csv", opts);
  const Batch base = load_csv(dir / "base.csv", opts);
  if (u.size() != base.size() || u.x.cols() != base.x.cols() || u.y != base.y)
    throw ParseError("poison.csv and base.csv disagree in " + dir.string());
  // Undo rounding from the 9-digit text format before checking the budget.
  PoisonSet p{base.x, base.y, (u.x - base.x).cwiseMax(-manifest.eps).cwiseMin(manifest.eps), manifest.eps};
  p.validate(opts.feature_range);
  return {p, manifest};
}

}  // namespace pacd::io
