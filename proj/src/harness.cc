#include "unlearn/harness.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "unlearn/barycenter.h"
#include "unlearn/error.h"
#include "unlearn/infotheory.h"
#include "unlearn/logging.h"
#include "unlearn/smallnet.h"
#include "unlearn/unlearner.h"

namespace fs = std::filesystem;

namespace unlearn {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = Trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(fmt::format("config key '{}': cannot parse '{}'", key, text));
  }
  return value;
}

// JSON has no infinity; non-finite values are written as strings.
nlohmann::json JsonNumber(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

std::string Num(double x) { return fmt::format("{}", x); }

void EnsureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

AdamConfig AdamFrom(const ExperimentConfig& c, double lr, double wd) {
  AdamConfig a;
  a.lr = c.GetDouble("lr", lr);
  a.weight_decay = c.GetDouble("weight_decay", wd);
  return a;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

// ---- ExperimentConfig ------------------------------------------------------------

ExperimentConfig ExperimentConfig::Load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return FromString(buffer.str(), path.parent_path().empty() ? fs::path(".")
                                                             : path.parent_path());
}

ExperimentConfig ExperimentConfig::FromString(const std::string& text,
                                              const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  ExperimentConfig config;
  config.base_dir_ = base_dir;
  for (const auto& [key, node] : tree) {
    if (!node.empty()) {
      throw ConfigError("config sections are not supported: [" + key + "]");
    }
    config.values_[key] = Trim(node.data());
  }
  return config;
}

void ExperimentConfig::Set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool ExperimentConfig::Has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string ExperimentConfig::GetString(const std::string& key,
                                        const std::string& fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ExperimentConfig::GetDouble(const std::string& key, double fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const double v = ParseNumber<double>(key, it->second);
  if (!std::isfinite(v)) throw ConfigError("config key '" + key + "' must be finite");
  return v;
}

int ExperimentConfig::GetInt(const std::string& key, int fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<int>(key, it->second);
}

std::uint64_t ExperimentConfig::GetSeed(const std::string& key,
                                        std::uint64_t fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<std::uint64_t>(key, it->second);
}

bool ExperimentConfig::GetBool(const std::string& key, bool fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError(fmt::format("config key '{}': expected true/false", key));
}

std::vector<double> ExperimentConfig::GetDoubles(
    const std::string& key, const std::vector<double>& fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const std::string& item : SplitList(it->second)) {
    out.push_back(ParseNumber<double>(key, item));
  }
  return out;
}

std::vector<int> ExperimentConfig::GetInts(const std::string& key,
                                           const std::vector<int>& fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  for (const std::string& item : SplitList(it->second)) {
    out.push_back(ParseNumber<int>(key, item));
  }
  return out;
}

std::optional<fs::path> ExperimentConfig::GetPath(const std::string& key) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return std::nullopt;
  fs::path p(it->second);
  if (p.is_relative()) p = base_dir_ / p;
  if (!fs::exists(p)) {
    throw ConfigError(fmt::format("config key '{}': {} does not exist", key, p.string()));
  }
  return p;
}

void ExperimentConfig::RequireAllUsed() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

nlohmann::json ExperimentConfig::Echo() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : values_) j[key] = value;
  return j;
}

// ---- Synthetic data --------------------------------------------------------------

ForgetGaussianSamples SampleForgetGaussian(double half_width, int n_retain,
                                           int n_unlearn, double mu, double sigma,
                                           std::uint64_t seed) {
  if (!(half_width > 0.0) || n_retain < 1 || n_unlearn < 1 || !(sigma > 0.0)) {
    throw ConfigError("forget-gaussian: invalid sample settings");
  }
  if (std::abs(mu) > half_width) throw ConfigError("forget-gaussian: mu outside [-L, L]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-half_width, half_width);
  std::normal_distribution<double> normal(mu, sigma);
  ForgetGaussianSamples s;
  for (int i = 0; i < n_retain; ++i) s.retain.push_back(uniform(rng));
  while (static_cast<int>(s.unlearn.size()) < n_unlearn) {
    const double x = normal(rng);
    if (x >= -half_width && x <= half_width) s.unlearn.push_back(x);
  }
  return s;
}

TabularDataset MakeBlobs(int num_classes, int rows_per_class, int dim,
                         double radius, double noise, std::uint64_t seed) {
  if (num_classes < 2 || rows_per_class < 1 || dim < 2) {
    throw ConfigError("blobs need >= 2 classes, >= 1 row per class and dim >= 2");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise);
  TabularDataset d;
  d.features.resize(static_cast<Eigen::Index>(num_classes) * rows_per_class, dim);
  int row = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * M_PI * c / num_classes;
    for (int i = 0; i < rows_per_class; ++i, ++row) {
      for (int j = 0; j < dim; ++j) d.features(row, j) = normal(rng);
      d.features(row, 0) += radius * std::cos(angle);
      d.features(row, 1) += radius * std::sin(angle);
      d.labels.push_back(c);
      d.groups.push_back(0);
    }
  }
  return d;
}

TabularDataset MakeFeatureData(int rows, double corr, std::uint64_t seed) {
  if (rows < 4 || !(corr >= -1.0 && corr <= 1.0)) {
    throw ConfigError("feature data needs >= 4 rows and corr in [-1, 1]");
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution agree((1.0 + corr) / 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  TabularDataset d;
  d.features.resize(rows, 3);
  for (int i = 0; i < rows; ++i) {
    const int z = coin(rng) ? 1 : 0;
    const int y = agree(rng) ? z : 1 - z;
    d.features(i, 0) = (2 * y - 1) + 1.0 * normal(rng);
    d.features(i, 1) = (2 * z - 1) + 0.5 * normal(rng);
    d.features(i, 2) = normal(rng);
    d.labels.push_back(y);
    d.groups.push_back(z);
  }
  return d;
}

TabularDataset MakeShiftedGroups(int num_groups, int rows_per_group, double shift,
                                 double scale, std::uint64_t seed) {
  if (num_groups < 2 || rows_per_group < 2 || !(scale > 0.0)) {
    throw ConfigError("shifted groups need >= 2 groups of >= 2 rows");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  TabularDataset d;
  d.features.resize(static_cast<Eigen::Index>(num_groups) * rows_per_group, 1);
  int row = 0;
  for (int z = 0; z < num_groups; ++z) {
    for (int i = 0; i < rows_per_group; ++i, ++row) {
      d.features(row, 0) = z * shift + normal(rng);
      d.labels.push_back(0);
      d.groups.push_back(z);
    }
  }
  return d;
}

// ---- Audit -----------------------------------------------------------------------

AuditRows MarginalAuditRows(const std::vector<int>& retain_bins,
                            const std::vector<int>& unlearn_bins) {
  AuditRows rows;
  for (int b : retain_bins) {
    rows.bins.push_back(b);
    rows.z.push_back(1);
  }
  for (int b : retain_bins) {
    rows.bins.push_back(b);
    rows.z.push_back(0);
  }
  for (int b : unlearn_bins) {
    rows.bins.push_back(b);
    rows.z.push_back(0);
  }
  return rows;
}

AuditRows ReadAuditCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const std::vector<std::string> header = SplitList(line);
  int bin_col = -1;
  int z_col = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == "output_bin") bin_col = c;
    if (header[c] == "z") z_col = c;
  }
  if (bin_col < 0 || z_col < 0) {
    throw DataError(path + ":1: header must contain output_bin and z");
  }
  AuditRows rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(Trim(cell));
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} fields", path, line_no, header.size()));
    }
    int bin = 0;
    int z = 0;
    auto parse = [&](const std::string& t, int& out) {
      auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
      return ec == std::errc() && ptr == t.data() + t.size() && out >= 0;
    };
    if (!parse(cells[bin_col], bin)) {
      throw DataError(fmt::format("{}:{}: bad output_bin '{}'", path, line_no, cells[bin_col]));
    }
    if (!parse(cells[z_col], z) || z > 1) {
      throw DataError(fmt::format("{}:{}: z must be 0 or 1", path, line_no));
    }
    rows.bins.push_back(bin);
    rows.z.push_back(z);
  }
  return rows;
}

void WriteAuditCsv(const AuditRows& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "output_bin,z\n";
  for (std::size_t i = 0; i < rows.bins.size(); ++i) {
    out << rows.bins[i] << ',' << rows.z[i] << '\n';
  }
}

std::vector<int> BinValues(const std::vector<double>& values, double lo, double hi,
                           int bins) {
  if (bins < 1 || !(hi > lo)) throw InvalidArgument("binning needs hi > lo and bins >= 1");
  std::vector<int> out;
  out.reserve(values.size());
  const double width = (hi - lo) / bins;
  for (double v : values) {
    const int b = static_cast<int>(std::floor((v - lo) / width));
    out.push_back(std::clamp(b, 0, bins - 1));
  }
  return out;
}

AuditResult AuditOutputs(const AuditRows& rows, double epsilon, double prior) {
  if (rows.bins.size() != rows.z.size()) throw DataError("audit rows are ragged");
  std::vector<int> b0;
  std::vector<int> b1;
  int k = 2;
  for (std::size_t i = 0; i < rows.bins.size(); ++i) {
    k = std::max(k, rows.bins[i] + 1);
    (rows.z[i] == 1 ? b1 : b0).push_back(rows.bins[i]);
  }
  if (b0.empty() || b1.empty()) {
    throw DataError("missing group: audit needs rows with z = 0 and z = 1");
  }
  AuditResult a;
  a.p0 = EmpiricalPmf(b0, k);
  a.p1 = EmpiricalPmf(b1, k);
  a.mu = MutualInfoMixture(a.p0, a.p1, prior);
  a.sup_log_odds = EmpiricalSupLogOdds(a.p0, a.p1);
  a.certificate = CompressionRateCertificate(a.mu, epsilon, prior);
  a.vacuous = a.certificate.clamped;
  a.passed = !a.vacuous && a.sup_log_odds <= epsilon;
  return a;
}

nlohmann::json ToJson(const AuditResult& audit) {
  return {
      {"mu_nats", audit.mu.nats()},
      {"sup_log_odds", JsonNumber(audit.sup_log_odds)},
      {"epsilon", audit.certificate.epsilon},
      {"max_admissible_mu", MaxAdmissibleMu(audit.certificate.epsilon)},
      {"vacuous", audit.vacuous},
      {"passed", audit.passed},
      {"p0", std::vector<double>(audit.p0.probs().begin(), audit.p0.probs().end())},
      {"p1", std::vector<double>(audit.p1.probs().begin(), audit.p1.probs().end())},
      {"certificate", ToJson(audit.certificate)},
  };
}

void WriteJson(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

// ---- forget-gaussian ---------------------------------------------------------------

RunReport RunForgetGaussian(const ExperimentConfig& c, const fs::path& out_dir) {
  Stopwatch clock;
  const std::uint64_t seed = c.GetSeed("seed", 1);
  const double half_width = c.GetDouble("L", 3.0);
  const int n_retain = c.GetInt("n_retain", 2000);
  const int n_unlearn = c.GetInt("n_unlearn", 2000);
  const double mu = c.GetDouble("mu", 0.0);
  const double sigma = c.GetDouble("sigma", 0.5);
  const int grid_points = c.GetInt("grid_points", 101);
  const double h_x = c.GetDouble("h_x", 0.2);
  const double h_y = c.GetDouble("h_y", 0.2);
  const double pretrain_alpha = c.GetDouble("pretrain_alpha", 0.5);
  const int pretrain_steps = c.GetInt("pretrain_steps", 1500);
  const double pretrain_lr = c.GetDouble("pretrain_lr", 1e-2);
  ResidualInit init_cfg;
  init_cfg.hidden = c.GetInts("hidden", {32});
  init_cfg.input_scale = half_width;
  init_cfg.output_std = c.GetDouble("init_output_std", 0.01);
  ScalarUnlearnConfig uc;
  uc.method = MethodFromString(c.GetString("method", "marginal"));
  uc.lambda = c.GetDouble("lambda", 0.9);
  uc.steps = c.GetInt("steps", 2000);
  uc.alpha = c.GetDouble("alpha", -1.0);
  uc.prior = c.GetDouble("prior", 0.5);
  uc.c_max = c.GetDouble("c_max", 20.0);
  uc.adam = AdamFrom(c, 1e-2, 0.0);
  const int trace_every = c.GetInt("trace_every", 100);
  const double tv_threshold = c.GetDouble("tv_threshold", 0.1);
  const double epsilon = c.GetDouble("epsilon", 0.5);
  const int bins = c.GetInt("bins", 20);
  c.RequireAllUsed();
  if (!(pretrain_alpha > 0.0 && pretrain_alpha < 1.0)) {
    throw ConfigError("pretrain_alpha must lie in (0, 1)");
  }
  if (trace_every < 1) throw ConfigError("trace_every must be >= 1");
  EnsureDir(out_dir);

  const ForgetGaussianSamples s =
      SampleForgetGaussian(half_width, n_retain, n_unlearn, mu, sigma, seed);
  const Grid grid(-half_width, half_width, grid_points);
  const KdeContext kde{grid, h_y};
  const GridDensity target_r = KdeOnGrid(s.retain, grid, h_x);
  const GridDensity target_u = KdeOnGrid(s.unlearn, grid, h_x);
  const GridDensity parts[] = {target_r, target_u};
  const double mix_w[] = {pretrain_alpha, 1.0 - pretrain_alpha};
  const GridDensity mixture = Mixture(parts, mix_w);

  {
    std::ofstream in_csv(out_dir / "inputs.csv");
    in_csv << "x,set\n";
    for (double x : s.retain) in_csv << Num(x) << ",retain\n";
    for (double x : s.unlearn) in_csv << Num(x) << ",unlearn\n";
  }

  const ModelParams init = InitResidualScalar(init_cfg, seed);
  AdamConfig pre_adam = uc.adam;
  pre_adam.lr = pretrain_lr;
  const ModelParams pretrained =
      PretrainScalar(init, s.retain, kde, mixture, pretrain_steps, pre_adam);
  SaveModel(pretrained, (out_dir / "pretrained_model.json").string());

  std::ofstream trace_r(out_dir / "trace_retain.csv");
  std::ofstream trace_u(out_dir / "trace_unlearn.csv");
  trace_r << "step,x,density\n";
  trace_u << "step,x,density\n";
  auto hook = [&](int step, std::span<const double> out_r, std::span<const double> out_u) {
    if (step % trace_every != 0 && step != uc.steps) return;
    const GridDensity pr = KdeOnGrid(out_r, grid, h_y);
    const GridDensity pu = KdeOnGrid(out_u, grid, h_y);
    for (int k = 0; k < grid.size(); ++k) {
      trace_r << step << ',' << Num(grid.point(k)) << ',' << Num(pr[k]) << '\n';
      trace_u << step << ',' << Num(grid.point(k)) << ',' << Num(pu[k]) << '\n';
    }
  };
  const ScalarResult res = TrainUnlearnScalar(uc, pretrained, s.retain, s.unlearn,
                                              kde, target_r, target_u, hook);
  SaveModel(res.params, (out_dir / "model.json").string());
  {
    std::ofstream traj(out_dir / "trajectory.csv");
    traj << "step,mi_margin_nats,tv_unlearn_retain,tv_retain_uniform,loss_total,"
            "loss_utility,loss_reg\n";
    for (const ScalarRecord& r : res.records) {
      traj << r.step << ',' << Num(r.mi_margin.nats()) << ',' << Num(r.tv_unlearn_retain)
           << ',' << Num(r.tv_retain_uniform) << ',' << Num(r.loss_total) << ','
           << Num(r.loss_utility) << ',' << Num(r.loss_reg) << '\n';
    }
  }

  const std::vector<double> out_r = ScalarOutputs(res.params, s.retain);
  const std::vector<double> out_u = ScalarOutputs(res.params, s.unlearn);
  // Bins span the observed output range.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* v : {&out_r, &out_u}) {
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const AuditRows rows =
      MarginalAuditRows(BinValues(out_r, lo, hi, bins), BinValues(out_u, lo, hi, bins));
  WriteAuditCsv(rows, (out_dir / "outputs.csv").string());
  const AuditResult audit = AuditOutputs(rows, epsilon, uc.prior);
  WriteJson(ToJson(audit.certificate), out_dir / "certificate.json");

  const ScalarRecord& first = res.records.front();
  const ScalarRecord& last = res.records.back();
  RunReport report;
  report.json = {
      {"command", "forget-gaussian"},
      {"config", c.Echo()},
      {"seed", seed},
      {"alpha", res.alpha},
      {"outputs",
       {"inputs.csv", "pretrained_model.json", "model.json", "trajectory.csv",
        "trace_retain.csv", "trace_unlearn.csv", "outputs.csv", "certificate.json"}},
      {"metrics",
       {{"mi_margin_initial", first.mi_margin.nats()},
        {"mi_margin_final", last.mi_margin.nats()},
        {"mi_ratio", first.mi_margin.nats() > 0.0
                         ? JsonNumber(last.mi_margin.nats() / first.mi_margin.nats())
                         : nlohmann::json(nullptr)},
        {"tv_unlearn_retain_initial", first.tv_unlearn_retain},
        {"tv_unlearn_retain_final", last.tv_unlearn_retain},
        {"tv_retain_uniform_final", last.tv_retain_uniform},
        {"tv_threshold", tv_threshold},
        {"tv_below_threshold", last.tv_unlearn_retain < tv_threshold}}},
      {"audit", ToJson(audit)},
  };
  WriteJson(report.json, out_dir / "report.json");
  Log().info("forget-gaussian finished in {:.2f} s", clock.seconds());
  return report;
}

// ---- unlearn -------------------------------------------------------------------------

namespace {

EarlyStopRule StopRuleFrom(const ExperimentConfig& c, Method method) {
  EarlyStopRule rule = EarlyStopRule::DefaultFor(method);
  rule.kind = StopKindFromString(c.GetString("stop_rule", ToString(rule.kind)));
  rule.threshold = c.GetDouble("stop_threshold", rule.threshold);
  rule.margin = c.GetDouble("stop_margin", rule.margin);
  rule.min_epochs = c.GetInt("min_epochs", rule.min_epochs);
  rule.patience = c.GetInt("patience", rule.patience);
  return rule;
}

TabularDataset ReadInput(const fs::path& path) { return ReadDatasetCsv(path.string()); }

}  // namespace

RunReport RunUnlearnClassifier(const ExperimentConfig& c, const fs::path& out_dir) {
  Stopwatch clock;
  const std::uint64_t seed = c.GetSeed("seed", 1337);
  const auto retain_path = c.GetPath("retain_csv");
  const auto unlearn_path = c.GetPath("unlearn_csv");
  const auto model_path = c.GetPath("model_json");
  const int num_classes = c.GetInt("num_classes", 3);
  const int rows_per_class = c.GetInt("rows_per_class", 300);
  const int dim = c.GetInt("dim", 2);
  const double radius = c.GetDouble("radius", 3.0);
  const double noise = c.GetDouble("noise", 1.0);
  const int removed_class = c.GetInt("removed_class", num_classes - 1);
  const std::vector<int> hidden = c.GetInts("hidden", {16});
  const int finetune_epochs = c.GetInt("finetune_epochs", 10);
  const double finetune_lr = c.GetDouble("finetune_lr", 1e-2);

  UnlearnConfig uc;
  uc.method = MethodFromString(c.GetString("method", "marginal"));
  uc.lambda = c.GetDouble("lambda", 0.5);
  uc.epochs = c.GetInt("epochs", 30);
  uc.batch_size = c.GetInt("batch_size", 128);
  uc.alpha = c.GetDouble("alpha", -1.0);
  uc.prior = c.GetDouble("prior", 0.5);
  uc.c_max = c.GetDouble("c_max", 20.0);
  uc.holdout_fraction = c.GetDouble("holdout_fraction", 0.2);
  uc.stop_rule = StopRuleFrom(c, uc.method);
  uc.adam = AdamFrom(c, 1e-2, 1e-4);
  uc.seed = seed;
  const double epsilon = c.GetDouble("epsilon", 0.5);
  c.RequireAllUsed();
  EnsureDir(out_dir);

  TabularDataset retain;
  TabularDataset unlearn;
  if (retain_path.has_value() != unlearn_path.has_value()) {
    throw ConfigError("retain_csv and unlearn_csv must be given together");
  }
  if (retain_path) {
    retain = ReadInput(*retain_path);
    unlearn = ReadInput(*unlearn_path);
  } else {
    if (removed_class < 0 || removed_class >= num_classes) {
      throw ConfigError("removed_class outside 0..num_classes-1");
    }
    const TabularDataset all = MakeBlobs(num_classes, rows_per_class, dim, radius, noise, seed);
    std::vector<int> keep;
    std::vector<int> drop;
    for (int i = 0; i < all.rows(); ++i) {
      (all.labels[i] == removed_class ? drop : keep).push_back(i);
    }
    retain = all.Subset(keep);
    unlearn = all.Subset(drop);
    WriteDatasetCsv(retain, (out_dir / "retain.csv").string());
    WriteDatasetCsv(unlearn, (out_dir / "unlearn.csv").string());
  }
  retain.Validate();
  unlearn.Validate();
  if (retain.dim() != unlearn.dim()) throw DataError("retain and unlearn widths differ");

  ModelParams start;
  if (model_path) {
    start = LoadModel(model_path->string());
  } else {
    const int k = std::max(retain.num_classes(), unlearn.num_classes());
    const TabularDataset both = Concatenate(retain, unlearn);
    AdamConfig ft = uc.adam;
    ft.lr = finetune_lr;
    start = TrainErm(InitMlp(retain.dim(), hidden, k, seed), both, finetune_epochs,
                     uc.batch_size, ft, seed);
    SaveModel(start, (out_dir / "finetuned_model.json").string());
  }

  const UnlearnResult res = TrainUnlearn(uc, start, retain, unlearn);
  SaveModel(res.params, (out_dir / "model.json").string());
  WriteTrajectoryCsv(res.trajectory, (out_dir / "trajectory.csv").string());

  const AuditRows rows =
      MarginalAuditRows(ArgmaxRows(Forward(res.params, retain.features).outputs),
                        ArgmaxRows(Forward(res.params, unlearn.features).outputs));
  WriteAuditCsv(rows, (out_dir / "outputs.csv").string());
  const AuditResult audit = AuditOutputs(rows, epsilon, uc.prior);
  WriteJson(ToJson(audit.certificate), out_dir / "certificate.json");

  const TrainTrajectory& t = res.trajectory;
  const EpochRecord& last = t.epochs.empty() ? t.baseline : t.epochs.back();
  RunReport report;
  report.json = {
      {"command", "unlearn"},
      {"config", c.Echo()},
      {"seed", seed},
      {"method", ToString(uc.method)},
      {"alpha", res.alpha},
      {"stop_rule", ToString(uc.stop_rule.kind)},
      {"stopped", t.stopped},
      {"stop_epoch", t.stop_epoch},
      {"epochs_run", static_cast<int>(t.epochs.size())},
      {"outputs",
       {"model.json", "trajectory.csv", "outputs.csv", "certificate.json"}},
      {"metrics",
       {{"retain_acc_initial", t.baseline.retain_acc},
        {"unlearn_acc_initial", t.baseline.unlearn_acc},
        {"mi_margin_initial", t.baseline.mi_margin.nats()},
        {"retain_acc_final", last.retain_acc},
        {"unlearn_acc_final", last.unlearn_acc},
        {"mi_margin_final", last.mi_margin.nats()},
        {"mi_binned_final", last.mi_binned.nats()}}},
      {"audit", ToJson(audit)},
  };
  WriteJson(report.json, out_dir / "report.json");
  Log().info("unlearn finished in {:.2f} s", clock.seconds());
  return report;
}

// ---- feature-unlearn -------------------------------------------------------------------

RunReport RunFeatureUnlearn(const ExperimentConfig& c, const fs::path& out_dir) {
  Stopwatch clock;
  const std::uint64_t seed = c.GetSeed("seed", 11);
  const auto data_path = c.GetPath("data_csv");
  const int rows = c.GetInt("rows", 2000);
  const double corr = c.GetDouble("corr", 0.6);
  const std::vector<double> lambdas = c.GetDoubles("lambdas", {0.0, 0.3, 0.6, 0.9});
  const std::vector<int> hidden = c.GetInts("hidden", {16});
  UnlearnConfig uc;
  uc.method = Method::kFeatureMi;
  uc.epochs = c.GetInt("epochs", 30);
  uc.batch_size = c.GetInt("batch_size", 128);
  uc.holdout_fraction = c.GetDouble("holdout_fraction", 0.2);
  uc.adam = AdamFrom(c, 1e-2, 1e-4);
  uc.seed = seed;
  uc.stop_rule.kind = StopKind::kNone;
  c.RequireAllUsed();
  if (lambdas.empty()) throw ConfigError("lambdas must not be empty");
  EnsureDir(out_dir);

  TabularDataset data;
  if (data_path) {
    data = ReadInput(*data_path);
  } else {
    data = MakeFeatureData(rows, corr, seed);
    WriteDatasetCsv(data, (out_dir / "data.csv").string());
  }
  data.ValidateGroupsOccupied();
  if (data.num_groups() < 2) throw DataError("feature unlearning needs at least two groups");
  const ModelParams init = InitMlp(data.dim(), hidden, data.num_classes(), seed);

  std::ofstream frontier(out_dir / "frontier.csv");
  frontier << "lambda,accuracy,acc_rand,dp_gap,mi_feature_nats\n";
  nlohmann::json points = nlohmann::json::array();
  nlohmann::json outputs = {"frontier.csv"};
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    uc.lambda = lambdas[i];
    const FeatureResult r = TrainFeature(uc, init, data);
    const FeatureRecord& f = r.trajectory.epochs.back();
    frontier << Num(lambdas[i]) << ',' << Num(f.accuracy) << ',' << Num(f.acc_rand) << ','
             << Num(f.dp_gap) << ',' << Num(f.mi_feature.nats()) << '\n';
    const std::string traj = fmt::format("trajectory_{}.csv", i);
    WriteFeatureTrajectoryCsv(r.trajectory, (out_dir / traj).string());
    outputs.push_back(traj);
    points.push_back({{"lambda", lambdas[i]},
                      {"accuracy", f.accuracy},
                      {"acc_rand", f.acc_rand},
                      {"dp_gap", f.dp_gap},
                      {"mi_feature_nats", f.mi_feature.nats()}});
  }
  RunReport report;
  report.json = {{"command", "feature-unlearn"},
                 {"config", c.Echo()},
                 {"seed", seed},
                 {"outputs", outputs},
                 {"frontier", points}};
  WriteJson(report.json, out_dir / "report.json");
  Log().info("feature-unlearn finished in {:.2f} s", clock.seconds());
  return report;
}

// ---- barycenter -------------------------------------------------------------------------

namespace {

std::vector<double> Column(const TabularDataset& d, const std::vector<int>& rows, int j) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(d.features(r, j));
  return out;
}

std::vector<int> AllRows(const TabularDataset& d) {
  std::vector<int> v(d.rows());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

struct GroupStats {
  std::vector<std::vector<double>> w2_to_pooled;  // [group][feature]
  std::vector<std::vector<double>> mean;          // [group][feature]
  double sup_log_odds = 0.0;                      // max over features and pairs
};

GroupStats Summarize(const TabularDataset& d, const std::vector<double>& lo,
                     const std::vector<double>& hi, int bins) {
  GroupStats s;
  const int g = d.num_groups();
  const std::vector<int> all = AllRows(d);
  for (int z = 0; z < g; ++z) {
    const std::vector<int> rows = d.RowsWithGroup(z);
    s.w2_to_pooled.emplace_back();
    s.mean.emplace_back();
    for (int j = 0; j < d.dim(); ++j) {
      const std::vector<double> col = Column(d, rows, j);
      const PointCloud a = PointCloud::FromValues(col);
      const PointCloud b = PointCloud::FromValues(Column(d, all, j));
      s.w2_to_pooled.back().push_back(std::sqrt(std::max(0.0, W2Squared1d(a, b))));
      double m = 0.0;
      for (double v : col) m += v;
      s.mean.back().push_back(m / col.size());
    }
  }
  for (int j = 0; j < d.dim(); ++j) {
    std::vector<CategoricalPMF> pmfs;
    for (int z = 0; z < g; ++z) {
      pmfs.push_back(EmpiricalPmf(
          BinValues(Column(d, d.RowsWithGroup(z), j), lo[j], hi[j], bins),
          std::max(bins, 2)));
    }
    for (int a = 0; a < g; ++a) {
      for (int b = a + 1; b < g; ++b) {
        s.sup_log_odds = std::max(s.sup_log_odds, EmpiricalSupLogOdds(pmfs[a], pmfs[b]));
      }
    }
  }
  return s;
}

nlohmann::json StatsJson(const GroupStats& s) {
  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t z = 0; z < s.mean.size(); ++z) {
    groups.push_back({{"group", z}, {"mean", s.mean[z]}, {"w2_to_pooled", s.w2_to_pooled[z]}});
  }
  return {{"groups", groups}, {"binned_sup_log_odds", JsonNumber(s.sup_log_odds)}};
}

}  // namespace

RunReport RunBarycenter(const ExperimentConfig& c, const fs::path& out_dir) {
  Stopwatch clock;
  const std::uint64_t seed = c.GetSeed("seed", 7);
  const auto data_path = c.GetPath("data_csv");
  const int num_groups = c.GetInt("num_groups", 2);
  const int rows_per_group = c.GetInt("rows_per_group", 500);
  const double shift = c.GetDouble("shift", 2.0);
  const double scale = c.GetDouble("scale", 1.0);
  BarycenterOptions opt;
  opt.tol = c.GetDouble("tol", 1e-9);
  opt.max_iter = c.GetInt("max_iter", 100);
  opt.support_size = c.GetInt("support_size", 0);
  opt.seed = seed;
  opt.sinkhorn.reg_scale = c.GetDouble("sinkhorn_reg_scale", opt.sinkhorn.reg_scale);
  opt.sinkhorn.max_iter = c.GetInt("sinkhorn_max_iter", opt.sinkhorn.max_iter);
  const int bins = c.GetInt("bins", 20);
  const double w2_threshold = c.GetDouble("w2_threshold", 1e-6);
  c.RequireAllUsed();
  EnsureDir(out_dir);

  TabularDataset data;
  if (data_path) {
    data = ReadInput(*data_path);
  } else {
    data = MakeShiftedGroups(num_groups, rows_per_group, shift, scale, seed);
    WriteDatasetCsv(data, (out_dir / "data.csv").string());
  }
  const NeutralizeResult res = NeutralizeDataset(data, opt);
  WriteNeutralizedCsv(res, (out_dir / "neutralized.csv").string());

  std::vector<double> lo(data.dim());
  std::vector<double> hi(data.dim());
  for (int j = 0; j < data.dim(); ++j) {
    lo[j] = data.features.col(j).minCoeff();
    hi[j] = data.features.col(j).maxCoeff();
    if (!(hi[j] > lo[j])) hi[j] = lo[j] + 1.0;
  }
  const GroupStats pre = Summarize(data, lo, hi, bins);
  const GroupStats post = Summarize(res.data, lo, hi, bins);
  double max_post = 0.0;
  for (const auto& g : post.w2_to_pooled) {
    for (double v : g) max_post = std::max(max_post, v);
  }
  RunReport report;
  report.json = {
      {"command", "barycenter"},
      {"config", c.Echo()},
      {"seed", seed},
      {"outputs", {"neutralized.csv"}},
      {"converged", res.barycenter.converged},
      {"iterations", res.barycenter.iterations},
      {"last_change", res.barycenter.last_change},
      {"approximate", res.barycenter.approximate},
      {"pre", StatsJson(pre)},
      {"post", StatsJson(post)},
      {"max_post_w2_to_pooled", max_post},
      {"w2_threshold", w2_threshold},
      {"within_threshold", max_post <= w2_threshold},
  };
  WriteJson(report.json, out_dir / "report.json");
  if (!res.barycenter.converged) report.exit_code = ExitCodeFor(ErrorKind::kNonConvergence);
  Log().info("barycenter finished in {:.2f} s", clock.seconds());
  return report;
}

// ---- audit ---------------------------------------------------------------------------------

RunReport RunAudit(const ExperimentConfig& c, const fs::path& out_dir) {
  const auto path = c.GetPath("outputs");
  const double epsilon = c.GetDouble("epsilon", 0.5);
  const double prior = c.GetDouble("prior", 0.5);
  c.GetSeed("seed", 0);  // accepted for a uniform CLI; unused
  c.RequireAllUsed();
  if (!path) throw ConfigError("audit needs an outputs file");
  EnsureDir(out_dir);
  const AuditResult audit = AuditOutputs(ReadAuditCsv(path->string()), epsilon, prior);
  WriteJson(ToJson(audit.certificate), out_dir / "certificate.json");
  RunReport report;
  report.json = ToJson(audit);
  WriteJson(report.json, out_dir / "audit.json");
  if (audit.vacuous) {
    Log().error("vacuous certificate: mu = {:.6g} exceeds the admissible {:.6g}",
                audit.mu.nats(), MaxAdmissibleMu(epsilon));
  }
  if (!audit.passed) report.exit_code = ExitCodeFor(ErrorKind::kAuditFailure);
  return report;
}

RunReport RunSynth(const ExperimentConfig& c, const fs::path& out_dir) {
  const std::uint64_t seed = c.GetSeed("seed", 1);
  const std::string kind = c.GetString("kind", "classes");
  EnsureDir(out_dir);
  RunReport report;
  if (kind == "classes") {
    const int k = c.GetInt("num_classes", 3);
    const int removed = c.GetInt("removed_class", k - 1);
    const TabularDataset all =
        MakeBlobs(k, c.GetInt("rows_per_class", 300), c.GetInt("dim", 2),
                  c.GetDouble("radius", 3.0), c.GetDouble("noise", 1.0), seed);
    c.RequireAllUsed();
    std::vector<int> keep;
    std::vector<int> drop;
    for (int i = 0; i < all.rows(); ++i) (all.labels[i] == removed ? drop : keep).push_back(i);
    WriteDatasetCsv(all.Subset(keep), (out_dir / "retain.csv").string());
    WriteDatasetCsv(all.Subset(drop), (out_dir / "unlearn.csv").string());
    report.json = {{"outputs", {"retain.csv", "unlearn.csv"}}};
  } else if (kind == "feature") {
    const TabularDataset d =
        MakeFeatureData(c.GetInt("rows", 2000), c.GetDouble("corr", 0.6), seed);
    c.RequireAllUsed();
    WriteDatasetCsv(d, (out_dir / "data.csv").string());
    report.json = {{"outputs", {"data.csv"}}};
  } else if (kind == "groups") {
    const TabularDataset d =
        MakeShiftedGroups(c.GetInt("num_groups", 2), c.GetInt("rows_per_group", 500),
                          c.GetDouble("shift", 2.0), c.GetDouble("scale", 1.0), seed);
    c.RequireAllUsed();
    WriteDatasetCsv(d, (out_dir / "data.csv").string());
    report.json = {{"outputs", {"data.csv"}}};
  } else {
    throw ConfigError("unknown synth kind '" + kind + "'");
  }
  return report;
}

}  // namespace unlearn
