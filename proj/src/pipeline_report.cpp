#include "upscale/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

namespace upscale::pipeline {

namespace fs = std::filesystem;

namespace {

void appendQuantiles(std::string& text, const QuantileRow& q) {
  text += q.name;
  for (double v : {q.mean, q.sd, q.p50, q.p75, q.p95, q.p99}) text += "," + formatNumber(v);
  text += "\n";
}

void appendDensity(std::string& text, const std::string& name, const Vector& sample) {
  const Matrix kde = kernelDensity(sample);
  for (Eigen::Index i = 0; i < kde.rows(); ++i)
    text += name + "," + formatNumber(kde(i, 0)) + "," + formatNumber(kde(i, 1)) + "\n";
}

void save(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DomainError("cannot write " + file.string());
  out << text;
}

}  // namespace

QuantileRow quantileRow(const std::string& name, const Vector& sample) {
  if (sample.size() == 0) throw DegenerateData("quantileRow: empty sample");
  QuantileRow q;
  q.name = name;
  q.mean = sample.mean();
  q.sd = sample.size() > 1 ? std::sqrt((sample.array() - q.mean).square().sum() / static_cast<double>(sample.size() - 1))
                           : 0.0;
  q.p50 = quantile(sample, 0.50);
  q.p75 = quantile(sample, 0.75);
  q.p95 = quantile(sample, 0.95);
  q.p99 = quantile(sample, 0.99);
  return q;
}

Matrix kernelDensity(const Vector& sample, int points) {
  if (sample.size() == 0 || points < 2) throw DegenerateData("kernelDensity: empty sample");
  const double n = static_cast<double>(sample.size());
  const double mean = sample.mean();
  const double sd = n > 1 ? std::sqrt((sample.array() - mean).square().sum() / (n - 1.0)) : 0.0;
  const double iqr = quantile(sample, 0.75) - quantile(sample, 0.25);
  double spread = std::min(sd, iqr / 1.349);
  if (!(spread > 0.0)) spread = sd;
  if (!(spread > 0.0)) {
    Matrix out(1, 2);
    out << mean, std::numeric_limits<double>::infinity();
    return out;
  }
  const double h = 0.9 * spread * std::pow(n, -0.2);
  const double lo = sample.minCoeff() - 3.0 * h, hi = sample.maxCoeff() + 3.0 * h;
  Matrix out(points, 2);
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    out(i, 0) = x;
    out(i, 1) = ((sample.array() - x) / h).square().unaryExpr([](double u) { return std::exp(-0.5 * u); }).sum() /
                (n * h * std::sqrt(2.0 * M_PI));
  }
  return out;
}

void report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DomainError("report: no directory " + dir.string());
  const std::string header = "name,mean,sd,p50,p75,p95,p99\n";
  std::string quant = header, dens = "name,x,density\n";
  Json summary = Json::object();
  int found = 0;

  if (fs::exists(dir / "archive.csv")) {
    const auto a = EnergyArchive::load(dir / "archive.csv");
    for (int col = 0; col < a.values.cols(); ++col) {
      const Vector v = a.values.col(col);
      const auto q = quantileRow(a.columnName(col), v);
      appendQuantiles(quant, q);
      if (v.maxCoeff() > v.minCoeff()) appendDensity(dens, q.name, v);
    }
    summary["members"] = a.values.rows();
    ++found;
  }
  for (const char* kind : {"total", "aleatory"}) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      const std::string suffix = std::string("_") + kind + "_samples.csv";
      if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
        continue;
      std::vector<std::string> head;
      const Matrix s = readCsv(entry.path(), &head);
      const std::string stem = name.substr(0, name.size() - std::string("_samples.csv").size());
      for (std::size_t k = 0; k < head.size(); ++k) {
        const Vector v = s.col(static_cast<Eigen::Index>(k)).array().exp();
        const auto q = quantileRow(stem + "." + head[k], v);
        appendQuantiles(quant, q);
        if (v.maxCoeff() > v.minCoeff()) appendDensity(dens, q.name, v);
      }
      ++found;
    }
  }
  if (fs::exists(dir / "bounds.json")) {
    std::ifstream in(dir / "bounds.json");
    Json b;
    in >> b;
    summary["bounds"] = b;
    ++found;
  }
  if (found == 0) throw DomainError("report: nothing to report in " + dir.string());
  save(dir / "quantiles.csv", quant);
  save(dir / "densities.csv", dens);
  save(dir / "report.json", summary.dump(2) + "\n");
}

}  // namespace upscale::pipeline
