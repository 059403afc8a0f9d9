#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unlearn/certificates.h"
#include "unlearn/dataset.h"
#include "unlearn/densities.h"

namespace unlearn {

// Flat `key = value` settings. Every key read is remembered so that typos
// can be reported by RequireAllUsed().
class ExperimentConfig {
 public:
  ExperimentConfig() = default;
  static ExperimentConfig Load(const std::filesystem::path& path);
  static ExperimentConfig FromString(const std::string& text,
                                     const std::filesystem::path& base_dir = ".");

  void Set(const std::string& key, const std::string& value);
  bool Has(const std::string& key) const;

  std::string GetString(const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  int GetInt(const std::string& key, int fallback) const;
  std::uint64_t GetSeed(const std::string& key, std::uint64_t fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;
  std::vector<double> GetDoubles(const std::string& key,
                                 const std::vector<double>& fallback) const;
  std::vector<int> GetInts(const std::string& key,
                           const std::vector<int>& fallback) const;
  // Relative paths resolve against the config file's directory.
  std::optional<std::filesystem::path> GetPath(const std::string& key) const;

  void RequireAllUsed() const;
  nlohmann::json Echo() const;  // every key with its raw value

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_ = ".";
  mutable std::set<std::string> used_;
};

// ---- Synthetic data -----------------------------------------------------------

struct ForgetGaussianSamples {
  std::vector<double> retain;   // Unif[-L, L]
  std::vector<double> unlearn;  // N(mu, sigma^2) truncated to [-L, L]
};
ForgetGaussianSamples SampleForgetGaussian(double half_width, int n_retain,
                                           int n_unlearn, double mu, double sigma,
                                           std::uint64_t seed);

// Isotropic Gaussian blobs, one per class, centres on a circle of the given
// radius in the first two coordinates.
TabularDataset MakeBlobs(int num_classes, int rows_per_class, int dim,
                         double radius, double noise, std::uint64_t seed);

// Binary Z ~ Bern(1/2), Y = Z with probability (1 + corr) / 2. Features:
// a noisy Y signal, a noisy Z signal, and pure noise.
TabularDataset MakeFeatureData(int rows, double corr, std::uint64_t seed);

// Groups z = 0..num_groups-1 in 1D, group z shifted by z * shift.
TabularDataset MakeShiftedGroups(int num_groups, int rows_per_group, double shift,
                                 double scale, std::uint64_t seed);

// ---- Audit --------------------------------------------------------------------

struct AuditRows {
  std::vector<int> bins;
  std::vector<int> z;
};

// Rows for the released outputs: every retain bin with z = 1, and every
// retain and unlearn bin with z = 0.
AuditRows MarginalAuditRows(const std::vector<int>& retain_bins,
                            const std::vector<int>& unlearn_bins);

AuditRows ReadAuditCsv(const std::string& path);
void WriteAuditCsv(const AuditRows& rows, const std::string& path);

// Uniform bins over [lo, hi]; values outside are clipped to the end bins.
std::vector<int> BinValues(const std::vector<double>& values, double lo, double hi,
                           int bins);

struct AuditResult {
  CategoricalPMF p0{std::vector<double>{0.5, 0.5}};
  CategoricalPMF p1{std::vector<double>{0.5, 0.5}};
  InfoValue mu;
  double sup_log_odds = 0.0;
  UnlearningCertificate certificate;
  bool vacuous = false;
  bool passed = false;  // sup_log_odds <= epsilon and certificate non-vacuous
};

AuditResult AuditOutputs(const AuditRows& rows, double epsilon, double prior = 0.5);
nlohmann::json ToJson(const AuditResult& audit);

// ---- Experiment drivers ---------------------------------------------------------

struct RunReport {
  nlohmann::json json;
  int exit_code = 0;
};

// Each driver writes its artifacts and report.json into out_dir.
RunReport RunForgetGaussian(const ExperimentConfig& config,
                            const std::filesystem::path& out_dir);
RunReport RunUnlearnClassifier(const ExperimentConfig& config,
                               const std::filesystem::path& out_dir);
RunReport RunFeatureUnlearn(const ExperimentConfig& config,
                            const std::filesystem::path& out_dir);
RunReport RunBarycenter(const ExperimentConfig& config,
                        const std::filesystem::path& out_dir);
// Reads `outputs` (output_bin, z) and writes certificate.json and audit.json.
// Exit code 4 when the audit fails.
RunReport RunAudit(const ExperimentConfig& config,
                   const std::filesystem::path& out_dir);
// Writes synthetic CSVs for the other commands.
RunReport RunSynth(const ExperimentConfig& config,
                   const std::filesystem::path& out_dir);

void WriteJson(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace unlearn
