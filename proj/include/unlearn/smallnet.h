#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unlearn/dataset.h"
#include "unlearn/densities.h"

namespace unlearn {

enum class Architecture {
  kMlp,             // ReLU hidden layers, softmax head
  kResidualScalar,  // f(x) = x + g(x), g a ReLU net with linear output
};

// Weights are (out x in); a batch is one row per sample.
struct Layer {
  Matrix weights;
  Vector biases;
};

struct ModelParams {
  Architecture arch = Architecture::kMlp;
  std::vector<Layer> layers;
  std::uint64_t seed = 0;

  int input_dim() const { return static_cast<int>(layers.front().weights.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weights.rows()); }
  int num_parameters() const;

  // Throws unless consecutive layers chain and every entry is finite.
  void Validate() const;
  ModelParams ZerosLike() const;

  // Layer-major, weights (row-major) then biases.
  std::vector<double> Flatten() const;
  void Unflatten(std::span<const double> flat);

  ModelParams& operator+=(const ModelParams& other);
};

ModelParams InitMlp(int input_dim, const std::vector<int>& hidden,
                    int num_classes, std::uint64_t seed);

struct ResidualInit {
  std::vector<int> hidden = {32};
  double input_scale = 3.0;   // first-layer biases ~ U[-input_scale, input_scale]
  double output_std = 0.01;   // last-layer weights ~ N(0, output_std^2)
};
// With output_std = 0 the network is exactly the identity.
ModelParams InitResidualScalar(const ResidualInit& init, std::uint64_t seed);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // per layer, before activation
  std::vector<Matrix> post;  // per layer, after activation (softmax on head)
  Matrix outputs;
};

ForwardCache Forward(const ModelParams& params, const Matrix& inputs);

// Reverse-mode gradient of a scalar loss given dLoss/dOutputs.
ModelParams Backward(const ModelParams& params, const ForwardCache& cache,
                     const Matrix& output_gradient);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  AdamConfig config;
  ModelParams m;
  ModelParams v;
  long step = 0;

  static OptimizerState For(const ModelParams& params, AdamConfig config);
};

// Bias-corrected Adam with decoupled weight decay. A non-finite gradient
// raises NonFiniteGradientError before anything is modified.
void AdamStep(OptimizerState& state, ModelParams& params,
              const ModelParams& grads);

nlohmann::json ToJson(const ModelParams& params);
ModelParams ModelParamsFromJson(const nlohmann::json& j);
void SaveModel(const ModelParams& params, const std::string& path);
ModelParams LoadModel(const std::string& path);

// Floor applied to probabilities inside log terms of training losses.
inline constexpr double kLogFloor = 1e-12;

// Pull a gradient with respect to the KDE grid values back to the samples.
std::vector<double> KdeAdjoint(std::span<const double> samples,
                               const Grid& grid, double bandwidth,
                               std::span<const double> density_gradient);

enum class KdeLossKind { kCrossEntropy, kKlFrom, kMiMixture };

struct KdeLoss {
  KdeLossKind kind = KdeLossKind::kCrossEntropy;
  // Target for kCrossEntropy (H(target || p)), reference for kKlFrom
  // (KL(reference || p)), fixed partner P0 for kMiMixture (p plays P1).
  std::vector<double> other;
  double prior = 0.5;
};

struct KdeLossValue {
  double value = 0.0;
  std::vector<double> sample_gradient;
};

KdeLossValue KdeLossGradient(std::span<const double> samples, const Grid& grid,
                             double bandwidth, const KdeLoss& loss);

}  // namespace unlearn
