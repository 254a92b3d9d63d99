#include "upscale/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace upscale;
using namespace upscale::pipeline;
namespace fs = std::filesystem;

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
  std::string strategy = "per-sample";
  std::string manifest;
};

void writeJson(const fs::path& file, const Json& j) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DomainError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

Json hashes(const fs::path& dir, const std::vector<std::string>& files) {
  Json j = Json::object();
  for (const auto& f : files) j[f] = fileHash(dir / f);
  return j;
}

EnergyArchive loadArchive(const fs::path& dir) {
  const fs::path f = dir / "archive.csv";
  if (!fs::exists(f)) throw DomainError("no archive in " + dir.string() + "; run simulate first");
  return EnergyArchive::load(f);
}

// Runs one pipeline step into `dir` and returns its manifest. Everything
// that determines the outputs is taken from `config` and `options`.
Manifest execute(const std::string& command, const ExperimentConfig& c, const Json& options, const fs::path& dir) {
  fs::create_directories(dir);
  const int jobs = options.value("jobs", 1);
  Manifest m;
  m.command = command;
  m.config = c.toJson();
  m.options = options;
  std::string name = command;
  if (command == "simulate") {
    runEnsemble(c, {jobs, dir, false});
    return Manifest::read(dir / "simulate.manifest.json");
  }
  if (command == "identify") {
    m.extra["inputs"] = hashes(dir, {"archive.csv"});
    const auto id = identifyEnergies(c, loadArchive(dir));
    writeJson(dir / "identified.json", id.toJson());
    m.outputs = hashes(dir, {"identified.json"});
  } else if (command == "upscale") {
    m.extra["inputs"] = hashes(dir, {"archive.csv"});
    const auto strategy = strategyFromString(options.value("strategy", std::string("per-sample")));
    const std::string tag = strategy == Strategy::EnergyPceThenUpdate ? "energy_pce" : "per_sample";
    name += "_" + tag;
    const auto r = pipeline::upscale(c, loadArchive(dir), strategy, nullptr, jobs);
    writeJson(dir / ("posterior_" + tag + ".json"), r.toJson());
    writeCsv(dir / (tag + "_total_samples.csv"), r.names, r.totalSamples);
    writeCsv(dir / (tag + "_aleatory_samples.csv"), r.names, r.aleatorySamples);
    m.outputs = hashes(dir, {"posterior_" + tag + ".json", tag + "_total_samples.csv", tag + "_aleatory_samples.csv"});
    std::cout << r.toJson()["total"].dump(2) << "\n";
  } else if (command == "bounds") {
    const auto b = computeBounds(c, jobs);
    writeJson(dir / "bounds.json", b.toJson());
    writeCsv(dir / "apparent.csv", {"K", "G"}, b.apparent);
    m.outputs = hashes(dir, {"bounds.json", "apparent.csv"});
    std::cout << b.toJson().dump(2) << "\n";
  } else if (command == "report") {
    report(dir);
    m.outputs = hashes(dir, {"quantiles.csv", "densities.csv", "report.json"});
  } else {
    throw DomainError("unknown command '" + command + "'");
  }
  m.write(dir / (name + ".manifest.json"));
  return m;
}

ExperimentConfig resolveConfig(const Args& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig::defaults(ExperimentKind::ElasticRandom)
                                        : loadConfig(a.config);
  if (a.seed) c.seed = *a.seed;
  c.validate();
  return c;
}

fs::path resolveOut(const Args& a, const ExperimentConfig& c) { return a.out.empty() ? fs::path(c.outputDir) : fs::path(a.out); }

int repro(const Args& a) {
  const fs::path mpath = a.manifest;
  const Manifest m = Manifest::read(mpath);
  const ExperimentConfig c = ExperimentConfig::fromJson(m.config);
  const fs::path src = mpath.parent_path().empty() ? fs::path(".") : mpath.parent_path();
  const fs::path dir = a.out.empty() ? src / "repro" : fs::path(a.out);
  fs::remove_all(dir);
  fs::create_directories(dir);
  if (m.extra.contains("inputs"))
    for (auto it = m.extra["inputs"].begin(); it != m.extra["inputs"].end(); ++it) {
      if (fileHash(src / it.key()) != it.value().get<std::string>())
        throw DomainError("repro: input " + it.key() + " changed since the manifest was written");
      fs::copy_file(src / it.key(), dir / it.key());
    }
  if (m.command == "report")
    for (const auto& e : fs::directory_iterator(src)) {
      const auto f = e.path().filename().string();
      if (!e.is_regular_file() || f == "quantiles.csv" || f == "densities.csv" || f == "report.json") continue;
      fs::copy_file(e.path(), dir / f, fs::copy_options::overwrite_existing);
    }
  Json options = m.options;
  options["jobs"] = a.jobs;
  const Manifest again = execute(m.command, c, options, dir);
  int mismatches = 0;
  for (auto it = m.outputs.begin(); it != m.outputs.end(); ++it) {
    const std::string now = again.outputs.value(it.key(), std::string("missing"));
    const bool same = now == it.value().get<std::string>();
    std::cout << (same ? "match    " : "MISMATCH ") << it.key() << " " << now << "\n";
    if (!same) ++mismatches;
  }
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic upscaling of meso-scale energies to macro-scale parameters"};
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", a.seed, "override the run seed");
    sub->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", a.out, "output directory (defaults to the config's outputDir)");
  };
  auto* simulate = app.add_subcommand("simulate", "run the meso-scale ensemble and write the energy archive");
  auto* identify = app.add_subcommand("identify", "fit the energy mixture and measurement surrogate");
  auto* up = app.add_subcommand("upscale", "update the macro prior from the archived energies");
  auto* bnd = app.add_subcommand("bounds", "Voigt/Reuss and Hashin-Shtrikman bounds with apparent moduli");
  auto* rep = app.add_subcommand("report", "quantile and density tables of everything in the output directory");
  auto* rpr = app.add_subcommand("repro", "rerun a manifest and compare output hashes");
  for (auto* s : {simulate, identify, up, bnd, rep}) common(s);
  up->add_option("--strategy", a.strategy, "energy-pce or per-sample")
      ->check(CLI::IsMember({"energy-pce", "per-sample"}));
  rpr->add_option("manifest", a.manifest, "manifest file")->required()->check(CLI::ExistingFile);
  rpr->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
  rpr->add_option("--out", a.out, "scratch directory for the rerun");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rpr->parsed()) return repro(a);
    const auto c = resolveConfig(a);
    const auto dir = resolveOut(a, c);
    Json options{{"jobs", a.jobs}};
    std::string command;
    for (auto* s : app.get_subcommands()) command = s->get_name();
    if (command == "upscale") options["strategy"] = a.strategy;
    const auto m = execute(command, c, options, dir);
    for (auto it = m.outputs.begin(); it != m.outputs.end(); ++it)
      std::cerr << "wrote " << (dir / it.key()).string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
