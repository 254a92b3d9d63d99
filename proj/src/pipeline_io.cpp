#include "upscale/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

namespace upscale::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFieldNames[EnergyArchive::kFields] = {"Ee", "Ed", "Eh", "W", "D"};

std::vector<std::string> splitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parseNumber(const std::string& s, const fs::path& file) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    throw DomainError(file.string() + ": not a number '" + s + "'");
  }
}

void writeText(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DomainError("cannot write " + file.string());
    out << text;
  }
  fs::rename(tmp, file);
}

std::string archiveHeader(const EnergyArchive& a) {
  std::string h = "member,seed";
  for (int c = 0; c < a.values.cols(); ++c) h += "," + a.columnName(c);
  return h + "\n";
}

std::string archiveRow(const EnergyArchive& a, Eigen::Index i) {
  std::string line = std::to_string(a.members[static_cast<std::size_t>(i)]) + "," +
                     std::to_string(a.seeds[static_cast<std::size_t>(i)]);
  for (Eigen::Index c = 0; c < a.values.cols(); ++c) line += "," + formatNumber(a.values(i, c));
  return line + "\n";
}

Vector simulateMember(const ExperimentConfig& c, int member) {
  const int steps = c.stepCount();
  Vector row(static_cast<Eigen::Index>(c.loadCases.size()) * steps * EnergyArchive::kFields);
  for (std::size_t lc = 0; lc < c.loadCases.size(); ++lc) {
    const auto s = buildSpecimen(c, member, c.loadCases[lc]);
    std::vector<fem::EnergyRecord> recs;
    if (c.isElastic()) recs.push_back(fem::assembleAndSolveElastic(s, s.macroTensor).energies);
    else recs = fem::runDamageProgram(s, steps).records;
    for (int k = 0; k < steps; ++k) {
      const auto& r = recs[static_cast<std::size_t>(k)];
      const Eigen::Index base = (static_cast<Eigen::Index>(lc) * steps + k) * EnergyArchive::kFields;
      row.segment(base, 5) << r.elasticE, r.damageE, r.hardeningE, r.externalWork, r.dissipation;
    }
  }
  if (!row.allFinite()) throw NonConvergence("member " + std::to_string(member) + ": non-finite energy");
  return row;
}

EnergyArchive emptyArchive(const ExperimentConfig& c) {
  EnergyArchive a;
  a.cases = static_cast<int>(c.loadCases.size());
  a.steps = c.stepCount();
  for (auto lc : c.loadCases) a.caseNames.push_back(toString(lc));
  a.values = Matrix(0, a.cases * a.steps * EnergyArchive::kFields);
  return a;
}

fs::path memberFile(const fs::path& dir, int member) {
  char name[32];
  std::snprintf(name, sizeof name, "member_%05d.csv", member);
  return dir / "members" / name;
}

}  // namespace

std::string formatNumber(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void writeCsv(const fs::path& file, const std::vector<std::string>& header, const Matrix& rows) {
  if (!header.empty() && static_cast<Eigen::Index>(header.size()) != rows.cols())
    throw DimensionMismatch("writeCsv: header width differs from data");
  std::string text;
  for (std::size_t k = 0; k < header.size(); ++k) text += (k ? "," : "") + header[k];
  if (!header.empty()) text += "\n";
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index k = 0; k < rows.cols(); ++k) text += (k ? "," : "") + formatNumber(rows(i, k));
    text += "\n";
  }
  writeText(file, text);
}

Matrix readCsv(const fs::path& file, std::vector<std::string>* header) {
  std::ifstream in(file);
  if (!in) throw DomainError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw DomainError(file.string() + ": empty file");
  auto head = splitCsv(line);
  if (header) *header = head;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = splitCsv(line);
    if (cells.size() != head.size()) throw DimensionMismatch(file.string() + ": ragged row");
    std::vector<double> r;
    for (const auto& s : cells) r.push_back(parseNumber(s, file));
    rows.push_back(std::move(r));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(head.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < head.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return m;
}

std::string fileHash(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DomainError("cannot open " + file.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void Manifest::write(const fs::path& file) const {
  Json j{{"command", command}, {"config", config}, {"options", options}, {"outputs", outputs}, {"extra", extra}};
  writeText(file, j.dump(2) + "\n");
}

Manifest Manifest::read(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DomainError("cannot open manifest " + file.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("manifest " + file.string() + ": " + e.what());
  }
  Manifest m;
  m.command = j.value("command", std::string());
  m.config = j.value("config", Json::object());
  m.options = j.value("options", Json::object());
  m.outputs = j.value("outputs", Json::object());
  m.extra = j.value("extra", Json::object());
  return m;
}

int EnergyArchive::fieldIndex(const std::string& name) {
  for (int k = 0; k < kFields; ++k)
    if (name == kFieldNames[k]) return k;
  throw DomainError("unknown energy '" + name + "'");
}

std::string EnergyArchive::columnName(int col) const {
  const int field = col % kFields;
  const int step = (col / kFields) % steps;
  const int lc = col / (kFields * steps);
  const std::string cn = lc < static_cast<int>(caseNames.size()) ? caseNames[static_cast<std::size_t>(lc)]
                                                                 : "case" + std::to_string(lc);
  return cn + ".s" + std::to_string(step + 1) + "." + kFieldNames[field];
}

Matrix EnergyArchive::energy(const std::string& field, int step) const {
  const int f = fieldIndex(field);
  const int s = step < 0 ? steps - 1 : step;
  if (s >= steps) throw DomainError("EnergyArchive: step out of range");
  Matrix out(values.rows(), cases);
  for (int lc = 0; lc < cases; ++lc) out.col(lc) = values.col(column(lc, s, f));
  return out;
}

void EnergyArchive::save(const fs::path& csv) const {
  std::string text = "# cases=" + std::to_string(cases) + " steps=" + std::to_string(steps) + "\n";
  text += archiveHeader(*this);
  for (Eigen::Index i = 0; i < values.rows(); ++i) text += archiveRow(*this, i);
  writeText(csv, text);
}

EnergyArchive EnergyArchive::load(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DomainError("cannot open archive " + csv.string());
  std::string line;
  EnergyArchive a;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "# cases=%d steps=%d", &a.cases, &a.steps) != 2)
    throw DomainError(csv.string() + ": missing archive preamble");
  if (!std::getline(in, line)) throw DomainError(csv.string() + ": missing header");
  const auto head = splitCsv(line);
  const std::size_t width = static_cast<std::size_t>(a.cases * a.steps * kFields);
  if (head.size() != width + 2) throw DimensionMismatch(csv.string() + ": header width");
  for (int lc = 0; lc < a.cases; ++lc) {
    const auto& n = head[2 + static_cast<std::size_t>(lc * a.steps * kFields)];
    a.caseNames.push_back(n.substr(0, n.find('.')));
  }
  std::vector<Vector> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = splitCsv(line);
    if (cells.size() != head.size()) throw DimensionMismatch(csv.string() + ": ragged row");
    a.members.push_back(std::stoi(cells[0]));
    a.seeds.push_back(std::stoull(cells[1]));
    Vector r(static_cast<Eigen::Index>(width));
    for (std::size_t k = 0; k < width; ++k) r(static_cast<Eigen::Index>(k)) = parseNumber(cells[k + 2], csv);
    rows.push_back(std::move(r));
  }
  a.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) a.values.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return a;
}

EnergyArchive runEnsemble(const ExperimentConfig& c, const RunOptions& options) {
  c.validate();
  const int n = c.ensembleSize;
  const bool persist = !options.outDir.empty();
  const fs::path manifestPath = options.outDir / "simulate.manifest.json";
  const EnergyArchive shape = emptyArchive(c);

  std::vector<std::optional<Vector>> rows(static_cast<std::size_t>(n));
  std::vector<std::string> failures(static_cast<std::size_t>(n));
  Manifest manifest;
  manifest.command = "simulate";
  manifest.config = c.toJson();
  manifest.options = {{"jobs", options.jobs}};
  manifest.extra = {{"status", "running"}, {"completed", Json::array()}};

  if (persist && fs::exists(manifestPath)) {
    const Manifest old = Manifest::read(manifestPath);
    if (old.command == "simulate" && old.config == manifest.config) {
      for (const auto& id : old.extra.value("completed", Json::array())) {
        const int i = id.get<int>();
        if (i < 0 || i >= n || !fs::exists(memberFile(options.outDir, i))) continue;
        EnergyArchive one = EnergyArchive::load(memberFile(options.outDir, i));
        if (one.values.rows() != 1 || one.values.cols() != shape.values.cols()) continue;
        rows[static_cast<std::size_t>(i)] = one.values.row(0).transpose();
        manifest.extra["completed"].push_back(i);
      }
      if (!options.quiet)
        std::clog << "resuming: " << manifest.extra["completed"].size() << " of " << n << " members on disk\n";
    } else if (!options.quiet) {
      std::clog << "notice: existing manifest belongs to a different run; starting over\n";
    }
  }
  if (persist) manifest.write(manifestPath);

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!rows[i]) pending.push_back(i);

  std::mutex mu;
  parallelFor(pending.size(), options.jobs, [&](std::size_t k) {
    const int i = static_cast<int>(pending[k]);
    try {
      Vector row = simulateMember(c, i);
      std::lock_guard<std::mutex> lock(mu);
      if (persist) {
        EnergyArchive one = shape;
        one.members = {i};
        one.seeds = {memberSeed(c.seed, i)};
        one.values = row.transpose();
        one.save(memberFile(options.outDir, i));
        manifest.extra["completed"].push_back(i);
        manifest.write(manifestPath);
      }
      rows[static_cast<std::size_t>(i)] = std::move(row);
      if (!options.quiet) std::clog << "member " << i << " done\n";
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(mu);
      failures[static_cast<std::size_t>(i)] = e.what();
      std::clog << "warning: member " << i << " failed: " << e.what() << "\n";
    }
  });

  EnergyArchive a = shape;
  Json failed = Json::array();
  std::vector<Vector> kept;
  for (int i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (!r) {
      failed.push_back({{"member", i}, {"error", failures[static_cast<std::size_t>(i)]}});
      continue;
    }
    a.members.push_back(i);
    a.seeds.push_back(memberSeed(c.seed, i));
    kept.push_back(*r);
  }
  a.values.resize(static_cast<Eigen::Index>(kept.size()), shape.values.cols());
  for (std::size_t i = 0; i < kept.size(); ++i) a.values.row(static_cast<Eigen::Index>(i)) = kept[i].transpose();

  const bool tooMany = static_cast<double>(failed.size()) > 0.05 * n || kept.empty();
  manifest.extra = {{"status", tooMany ? "failed" : "complete"},
                    {"members", n},
                    {"partial", !failed.empty()},
                    {"failed", failed}};
  if (persist) {
    if (!tooMany) {
      a.save(options.outDir / "archive.csv");
      manifest.outputs = {{"archive.csv", fileHash(options.outDir / "archive.csv")}};
    }
    manifest.write(manifestPath);
  }
  if (tooMany)
    throw NonConvergence("ensemble: " + std::to_string(failed.size()) + " of " + std::to_string(n) +
                         " members failed");
  return a;
}

}  // namespace upscale::pipeline
