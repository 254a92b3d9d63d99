#pragma once

#include "upscale/fem.hpp"
#include "upscale/gmkf.hpp"
#include "upscale/homog.hpp"
#include "upscale/transform.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace upscale::pipeline {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { ElasticValidation, ElasticRandom, DamageValidation, DamageHeterogeneous };
enum class LoadCase { Shear, Compression, Mixed1, Mixed2 };
enum class Strategy { EnergyPceThenUpdate, PerSampleThenIdentify };

const char* toString(ExperimentKind k);
const char* toString(LoadCase c);
const char* toString(Strategy s);
ExperimentKind experimentKindFromString(const std::string& s);
LoadCase loadCaseFromString(const std::string& s);
/// Accepts "energy-pce" / "per-sample" as well as the enum names.
Strategy strategyFromString(const std::string& s);

/// Unit macro tensor of a load case: pure shear (engineering shear 1),
/// equibiaxial compression, uniaxial x, uniaxial y compression.
Matrix2 loadTensor(LoadCase c);

/// Reference means of the damage model parameters (K, G, sigmaF, Kd).
std::array<double, 4> referenceDamageMeans();

struct LognormalSpec {
  double mean = 1.0;
  double cov = 0.2;
};

struct InclusionSpec {
  int count = 64;
  double fraction = 0.4;
  homog::Phase matrix{4.0, 1.0};
  homog::Phase inclusion{40.0, 10.0};
};

struct FieldSpec {
  std::array<double, 4> mean = referenceDamageMeans();
  double cov = 0.05;
  /// Correlation length in element lengths.
  double correlationLength = 10.0;
  double energyFraction = 0.99;
};

/// Macro prior. kind: "lognormal" (explicit per-parameter mean/cov),
/// "scaled" (reference means times meanFactor with coefficient of variation
/// cov), or for elastic inclusion experiments "HS", "RV", "MAT" (lognormal
/// whose central 95% interval matches the respective bracket).
struct PriorSpec {
  std::string kind = "default";
  std::vector<LognormalSpec> params;
  double meanFactor = 1.2;
  double cov = 0.2;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ElasticRandom;
  int ensembleSize = 100;
  fem::BcKind bc = fem::BcKind::LinearDisplacement;
  std::vector<LoadCase> loadCases{LoadCase::Compression};
  int mesh = 96;
  InclusionSpec inclusions;
  FieldSpec field;
  PriorSpec prior;
  int pceDegree = 2;        // measurement surrogates
  int forecastDegree = 4;   // macro forecast
  int forecastSamples = 600;
  int mapOrder = 1;
  int kMax = 5;
  double noiseLevel = 0.01;        // standard deviation in observable (log) units
  double observableOffset = 1.0;   // shift of dissipative energies, relative to their mean
  int steps = 8;
  std::vector<int> observedSteps;  // 1-based; empty means all
  std::vector<std::string> energies{"Ee", "Ed", "Eh"};
  int identifyStep = 0;            // 1-based; 0 means the last step
  double strainMagnitude = 0.01;
  double interiorMargin = 0.0;
  std::uint64_t seed = 1;
  std::string outputDir = "out";

  bool isElastic() const {
    return kind == ExperimentKind::ElasticValidation || kind == ExperimentKind::ElasticRandom;
  }
  int paramCount() const { return isElastic() ? 2 : 4; }
  int stepCount() const { return isElastic() ? 1 : steps; }
  std::vector<std::string> paramNames() const;

  void validate() const;
  Json toJson() const;
  static ExperimentConfig fromJson(const Json& j);
  /// Defaults for a kind before any user overrides.
  static ExperimentConfig defaults(ExperimentKind kind);
};

ExperimentConfig loadConfig(const std::filesystem::path& file);

/// Per-member seed derived from the run seed.
std::uint64_t memberSeed(std::uint64_t runSeed, int member);

/// Fine-scale specimen of one ensemble member for one load case.
fem::MesoSpecimen buildSpecimen(const ExperimentConfig& c, int member, LoadCase lc);

/// Energies indexed by member (rows) and column (load case, step, energy).
struct EnergyArchive {
  int cases = 1;
  int steps = 1;
  std::vector<int> members;
  std::vector<std::uint64_t> seeds;
  /// Rows: members. Columns: ((case * steps) + step) * 5 + {Ee, Ed, Eh, W, D}.
  Matrix values;
  std::vector<std::string> caseNames;

  static constexpr int kFields = 5;
  static int fieldIndex(const std::string& name);
  int column(int caseIdx, int step, int field) const { return (caseIdx * steps + step) * kFields + field; }
  std::string columnName(int col) const;
  Matrix energy(const std::string& field, int step = -1) const;

  void save(const std::filesystem::path& csv) const;
  static EnergyArchive load(const std::filesystem::path& csv);
};

struct RunOptions {
  int jobs = 1;
  /// Output directory for member files, archive and manifest; empty keeps
  /// everything in memory.
  std::filesystem::path outDir;
  bool quiet = true;
};

/// Simulates the ensemble. Member failures are logged and skipped; more than
/// 5% failures raise NonConvergence. Completed members recorded in an
/// existing manifest are reloaded instead of recomputed.
EnergyArchive runEnsemble(const ExperimentConfig& c, const RunOptions& options = {});

/// Observable: log(E + offset), offset zero for elastic energy columns.
struct Observable {
  std::vector<int> columns;
  std::vector<std::string> names;
  Vector offsets;

  Matrix apply(const Matrix& archiveValues) const;
  Json toJson() const;
  static Observable fromJson(const Json& j);
};

Observable selectObservable(const ExperimentConfig& c, const EnergyArchive& archive);

struct Identified {
  Observable observable;
  std::vector<int> germColumns;  // indices into observable columns
  bool deterministic = false;
  transform::GermMap map;
  pce::PceVariable measurement{pce::makeSet(1, 0), Matrix::Zero(1, 1)};
  Vector deterministicValue;
  int components = 0;
  double meanRelError = 0.0;
  double covRelError = 0.0;

  Json toJson() const;
};

/// Mixture + copula on the identification step, surrogates of every
/// observed column on that germ.
Identified identifyEnergies(const ExperimentConfig& c, const EnergyArchive& archive);

struct MomentSummary {
  Vector mean, sd;          // natural units
  Vector logMean, logSd;    // log units
};

MomentSummary summarize(const Matrix& logSamples);

struct PriorModel {
  Vector logMean, logSd;
  pce::PceVariable pce{pce::makeSet(1, 0), Matrix::Zero(1, 1)};
  MomentSummary moments;
};

PriorModel buildPrior(const ExperimentConfig& c, int degree);

struct Forecast {
  pce::PceVariable y{pce::makeSet(1, 0), Matrix::Zero(1, 1)};
  int used = 0;
  int dropped = 0;
  double fitError = 0.0;
};

/// Macro (single homogeneous element) energies over the prior germ.
Forecast buildForecast(const ExperimentConfig& c, const PriorModel& prior, const Observable& obs, int jobs);

/// Macro energies of one parameter vector, laid out like an archive row.
Vector macroEnergies(const ExperimentConfig& c, const Vector& params);

struct UpscaleResult {
  Strategy strategy = Strategy::PerSampleThenIdentify;
  std::vector<std::string> names;
  MomentSummary prior, total, aleatory;
  Matrix totalSamples;     // log parameters
  Matrix aleatorySamples;  // log parameters
  pce::PceVariable posterior{pce::makeSet(1, 0), Matrix::Zero(1, 1)};
  Matrix gain;
  Observable observable;
  double forecastFitError = 0.0;

  Json toJson() const;
};

UpscaleResult upscale(const ExperimentConfig& c, const EnergyArchive& archive, Strategy strategy,
                      const Identified* identified = nullptr, int jobs = 1);

/// Bounds plus apparent moduli of every member (elastic inclusion configs).
struct BoundsResult {
  homog::BoundsReport bounds;
  Matrix apparent;  // members x (K, G)
  double meanK = 0.0, meanG = 0.0;
  int violations = 0;

  Json toJson() const;
};

BoundsResult computeBounds(const ExperimentConfig& c, int jobs = 1);

struct QuantileRow {
  std::string name;
  double mean = 0.0, sd = 0.0, p50 = 0.0, p75 = 0.0, p95 = 0.0, p99 = 0.0;
};

QuantileRow quantileRow(const std::string& name, const Vector& sample);

/// Gaussian kernel density on `points` equally spaced grid nodes.
Matrix kernelDensity(const Vector& sample, int points = 200);

/// Writes quantile and density tables for everything found in `dir`.
void report(const std::filesystem::path& dir);

/// Fixed 17-significant-digit formatting used by every table.
std::string formatNumber(double v);
void writeCsv(const std::filesystem::path& file, const std::vector<std::string>& header, const Matrix& rows);
Matrix readCsv(const std::filesystem::path& file, std::vector<std::string>* header = nullptr);

/// FNV-1a hash of a file's bytes, hex encoded.
std::string fileHash(const std::filesystem::path& file);

struct Manifest {
  std::string command;
  Json config;
  Json options;
  Json outputs;  // file name -> hash
  Json extra;

  void write(const std::filesystem::path& file) const;
  static Manifest read(const std::filesystem::path& file);
};

}  // namespace upscale::pipeline
