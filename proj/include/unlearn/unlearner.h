#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unlearn/dataset.h"
#include "unlearn/densities.h"
#include "unlearn/infotheory.h"
#include "unlearn/smallnet.h"

namespace unlearn {

enum class Method { kMarginalMi, kGradDiff, kKlAnchor, kFeatureMi };

std::string ToString(Method method);
Method MethodFromString(const std::string& text);

// ---- Marginal pair -------------------------------------------------------

// Z = 1 <-> retain only, Z = 0 <-> mixture of retain and unlearn.
template <typename Measure>
struct MarginalPair {
  Measure p0;  // alpha * retain + (1 - alpha) * unlearn
  Measure p1;  // retain
};

MarginalPair<CategoricalPMF> BuildMarginalPair(const CategoricalPMF& retain,
                                               const CategoricalPMF& unlearn,
                                               double alpha);
MarginalPair<GridDensity> BuildMarginalPair(const GridDensity& retain,
                                            const GridDensity& unlearn,
                                            double alpha);

InfoValue MarginalMiLoss(const CategoricalPMF& p0, const CategoricalPMF& p1,
                         double prior = 0.5);
InfoValue MarginalMiLoss(const GridDensity& p0, const GridDensity& p1,
                         double prior = 0.5);

// Row means of a probability matrix.
CategoricalPMF MeanPmf(const Matrix& probs);

// ---- Losses on softmax outputs ---------------------------------------------
// Gradients are with respect to the probability rows fed in.

struct PairLoss {
  double total = 0.0;
  double utility = 0.0;
  double reg = 0.0;
  Matrix grad_retain;
  Matrix grad_unlearn;
};

// (1 - lambda) CE(retain) + lambda I over the batch-mean marginal pair.
PairLoss LossMarginal(const Matrix& probs_r, std::span<const int> labels_r,
                      const Matrix& probs_u, double lambda, double alpha,
                      double prior = 0.5);

// (1 - lambda) CE(retain) - lambda CE(unlearn); each unlearn sample's CE is
// capped at c_max before negation.
PairLoss LossGradDiff(const Matrix& probs_r, std::span<const int> labels_r,
                      const Matrix& probs_u, std::span<const int> labels_u,
                      double lambda, double c_max = 20.0);

// (1 - lambda) mean KL(teacher || student) on retain - lambda CE(unlearn).
PairLoss LossKlAnchor(const Matrix& teacher_r, const Matrix& probs_r,
                      const Matrix& probs_u, std::span<const int> labels_u,
                      double lambda, double c_max = 20.0);

struct FeatureMi {
  InfoValue value;
  bool skipped_group = false;  // some group had no rows; weights renormalized
};

// sum_z p(z) KL(P_z || P) over batch group means of the probability rows.
FeatureMi FeatureMiLoss(const Matrix& probs, std::span<const int> groups,
                        int num_groups);

struct FeatureLoss {
  double total = 0.0;
  double utility = 0.0;
  double reg = 0.0;
  bool skipped_group = false;
  Matrix grad;
};

FeatureLoss LossFeatureMi(const Matrix& probs, std::span<const int> labels,
                          std::span<const int> groups, int num_groups,
                          double lambda);

// ---- Losses on scalar outputs through the grid KDE -------------------------

struct KdeContext {
  Grid grid;
  double bandwidth;  // output bandwidth h_y
};

struct ScalarPairLoss {
  double total = 0.0;
  double utility = 0.0;
  double reg = 0.0;
  std::vector<double> grad_retain;
  std::vector<double> grad_unlearn;
};

// (1 - lambda) H(target_r || p_f(Xr)) + lambda I(marginal pair of p_f(Xr),
// p_f(Xu)).
ScalarPairLoss KdeLossMarginal(std::span<const double> out_r,
                               std::span<const double> out_u,
                               const KdeContext& kde,
                               const GridDensity& target_r, double lambda,
                               double alpha, double prior = 0.5);

// (1 - lambda) H(target_r || p_f(Xr)) - lambda min(H(target_u || p_f(Xu)),
// c_max).
ScalarPairLoss KdeLossGradDiff(std::span<const double> out_r,
                               std::span<const double> out_u,
                               const KdeContext& kde,
                               const GridDensity& target_r,
                               const GridDensity& target_u, double lambda,
                               double c_max = 20.0);

// (1 - lambda) KL(anchor_r || p_f(Xr)) - lambda min(H(target_u || p_f(Xu)),
// c_max).
ScalarPairLoss KdeLossKlAnchor(std::span<const double> out_r,
                               std::span<const double> out_u,
                               const KdeContext& kde,
                               const GridDensity& anchor_r,
                               const GridDensity& target_u, double lambda,
                               double c_max = 20.0);

struct ScalarFeatureLoss {
  double total = 0.0;
  double utility = 0.0;
  double reg = 0.0;
  bool skipped_group = false;
  std::vector<double> grad;
};

// (1 - lambda) H(target || p_f(X)) + lambda sum_z p(z) KL(p_z || p).
ScalarFeatureLoss KdeLossFeatureMi(std::span<const double> outputs,
                                   std::span<const int> groups, int num_groups,
                                   const KdeContext& kde,
                                   const GridDensity& target, double lambda);

// ---- Metrics ---------------------------------------------------------------

// |E[p1 | Z=1] - E[p1 | Z=0]|; with more groups, max minus min group mean.
double DpGap(std::span<const double> class1_probs, std::span<const int> groups);
// (1/n) sum_i p_{i, y_i}.
double AccRand(const Matrix& probs, std::span<const int> labels);
double Accuracy(const Matrix& probs, std::span<const int> labels);
std::vector<int> ArgmaxRows(const Matrix& probs);

// ---- Early stopping ---------------------------------------------------------

enum class StopKind { kNone, kMiRatio, kKdRatio, kChanceAccuracy };

std::string ToString(StopKind kind);
StopKind StopKindFromString(const std::string& text);

struct EarlyStopRule {
  StopKind kind = StopKind::kMiRatio;
  double threshold = 0.85;  // mi_ratio, kd_ratio
  double margin = 0.02;     // chance_accuracy
  int min_epochs = 1;
  int patience = 1;

  // The rule conventionally paired with a method.
  static EarlyStopRule DefaultFor(Method method);
  void Validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double retain_acc = 0.0;
  double unlearn_acc = 0.0;
  InfoValue mi_margin;       // split-level softmax means
  InfoValue mi_binned;       // split-level argmax histograms
  double kd = 0.0;           // student mass on the teacher's class, unlearn split
  double loss_total = 0.0;
  double loss_utility = 0.0;
  double loss_reg = 0.0;
};

struct TrainTrajectory {
  int num_classes = 2;
  EpochRecord baseline;  // epoch 0, before any update
  std::vector<EpochRecord> epochs;
  bool stopped = false;
  int stop_epoch = 0;
};

struct StopDecision {
  bool stop = false;
  int epoch = 0;
};

// Stop iff the rule's predicate held on the last `patience` recorded epochs
// and at least min_epochs epochs have run.
StopDecision EarlyStopCheck(const EarlyStopRule& rule,
                            const TrainTrajectory& trajectory);
bool StopPredicate(const EarlyStopRule& rule, const TrainTrajectory& trajectory,
                   const EpochRecord& record);

void WriteTrajectoryCsv(const TrainTrajectory& trajectory,
                        const std::string& path);

// ---- Training loops ----------------------------------------------------------

struct UnlearnConfig {
  double lambda = 0.5;
  Method method = Method::kMarginalMi;
  int epochs = 30;
  int batch_size = 128;
  double alpha = -1.0;  // <= 0: |R| / (|R| + |U|)
  double prior = 0.5;
  EarlyStopRule stop_rule;
  std::uint64_t seed = 1337;
  AdamConfig adam;
  double c_max = 20.0;
  double holdout_fraction = 0.2;

  void Validate() const;
};

struct UnlearnResult {
  ModelParams params;
  TrainTrajectory trajectory;
  double alpha = 0.0;
};

// Softmax classifiers only; `init` doubles as the frozen teacher.
UnlearnResult TrainUnlearn(const UnlearnConfig& config, const ModelParams& init,
                           const TabularDataset& retain,
                           const TabularDataset& unlearn);

// Plain cross-entropy training, used for fine-tuning before unlearning.
ModelParams TrainErm(const ModelParams& init, const TabularDataset& data,
                     int epochs, int batch_size, const AdamConfig& adam,
                     std::uint64_t seed);

struct FeatureRecord {
  int epoch = 0;
  double accuracy = 0.0;  // held-out split
  double acc_rand = 0.0;
  double dp_gap = 0.0;
  InfoValue mi_feature;
  double loss_total = 0.0;
  double loss_utility = 0.0;
  double loss_reg = 0.0;
  bool skipped_group = false;
};

struct FeatureTrajectory {
  FeatureRecord baseline;
  std::vector<FeatureRecord> epochs;
};

struct FeatureResult {
  ModelParams params;
  FeatureTrajectory trajectory;
};

FeatureResult TrainFeature(const UnlearnConfig& config, const ModelParams& init,
                           const TabularDataset& data);

void WriteFeatureTrajectoryCsv(const FeatureTrajectory& trajectory,
                               const std::string& path);

// Scalar residual net trained through the grid KDE (the 1D forget task).
struct ScalarUnlearnConfig {
  Method method = Method::kMarginalMi;
  double lambda = 0.9;
  int steps = 2000;
  double alpha = -1.0;  // <= 0: |R| / (|R| + |U|)
  double prior = 0.5;
  double c_max = 20.0;
  AdamConfig adam{1e-2, 0.9, 0.999, 1e-8, 0.0};
};

struct ScalarRecord {
  int step = 0;
  InfoValue mi_margin;
  double tv_unlearn_retain = 0.0;  // TV(p_f(Xu), p_f(Xr))
  double tv_retain_uniform = 0.0;  // TV(p_f(Xr), uniform)
  double loss_total = 0.0;
  double loss_utility = 0.0;
  double loss_reg = 0.0;
};

struct ScalarResult {
  ModelParams params;
  std::vector<ScalarRecord> records;  // records[0] is the starting point
  double alpha = 0.0;
};

// Fits p_f(Xr) to `target` by minimizing KL(target || p_f(Xr)).
ModelParams PretrainScalar(const ModelParams& init,
                           std::span<const double> x_retain,
                           const KdeContext& kde, const GridDensity& target,
                           int steps, const AdamConfig& adam);

// Full-batch unlearning. `target_r`/`target_u` are the input KDEs; the
// anchor for kKlAnchor is p_f_init(Xr). `on_step` sees every step's outputs.
using ScalarStepHook = std::function<void(int step, std::span<const double> out_r,
                                          std::span<const double> out_u)>;
ScalarResult TrainUnlearnScalar(const ScalarUnlearnConfig& config,
                                const ModelParams& init,
                                std::span<const double> x_retain,
                                std::span<const double> x_unlearn,
                                const KdeContext& kde,
                                const GridDensity& target_r,
                                const GridDensity& target_u,
                                const ScalarStepHook& on_step = {});

std::vector<double> ScalarOutputs(const ModelParams& params,
                                  std::span<const double> inputs);

}  // namespace unlearn
