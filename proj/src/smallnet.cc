#include "unlearn/smallnet.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "unlearn/error.h"

namespace unlearn {
namespace {

std::string ArchName(Architecture arch) {
  return arch == Architecture::kMlp ? "mlp" : "residual_scalar";
}

Architecture ArchFromName(const std::string& name) {
  if (name == "mlp") return Architecture::kMlp;
  if (name == "residual_scalar") return Architecture::kResidualScalar;
  throw DataError("unknown architecture '" + name + "'");
}

Layer GaussianLayer(int in, int out, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Layer layer{Matrix(out, in), Vector::Zero(out)};
  for (int r = 0; r < out; ++r) {
    for (int c = 0; c < in; ++c) layer.weights(r, c) = std * normal(rng);
  }
  return layer;
}

bool AllFinite(const Layer& layer) {
  return layer.weights.allFinite() && layer.biases.allFinite();
}

}  // namespace

int ModelParams::num_parameters() const {
  int n = 0;
  for (const Layer& l : layers) {
    n += static_cast<int>(l.weights.size() + l.biases.size());
  }
  return n;
}

void ModelParams::Validate() const {
  if (layers.empty()) throw InvalidArgument("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.biases.size() != l.weights.rows()) {
      throw InvalidArgument(fmt::format("layer {}: bias length mismatch", i));
    }
    if (i > 0 && l.weights.cols() != layers[i - 1].weights.rows()) {
      throw InvalidArgument(fmt::format("layer {}: input width mismatch", i));
    }
    if (!AllFinite(l)) {
      throw InvalidArgument(fmt::format("layer {}: non-finite parameter", i));
    }
  }
  if (arch == Architecture::kResidualScalar &&
      (input_dim() != 1 || output_dim() != 1)) {
    throw InvalidArgument("residual scalar net must map R to R");
  }
  if (arch == Architecture::kMlp && output_dim() < 2) {
    throw InvalidArgument("softmax head needs at least 2 classes");
  }
}

ModelParams ModelParams::ZerosLike() const {
  ModelParams out = *this;
  for (Layer& l : out.layers) {
    l.weights.setZero();
    l.biases.setZero();
  }
  return out;
}

std::vector<double> ModelParams::Flatten() const {
  std::vector<double> flat;
  flat.reserve(num_parameters());
  for (const Layer& l : layers) {
    flat.insert(flat.end(), l.weights.data(), l.weights.data() + l.weights.size());
    flat.insert(flat.end(), l.biases.data(), l.biases.data() + l.biases.size());
  }
  return flat;
}

void ModelParams::Unflatten(std::span<const double> flat) {
  if (static_cast<int>(flat.size()) != num_parameters()) {
    throw InvalidArgument("flat parameter vector has the wrong length");
  }
  std::size_t at = 0;
  for (Layer& l : layers) {
    std::copy_n(flat.begin() + at, l.weights.size(), l.weights.data());
    at += l.weights.size();
    std::copy_n(flat.begin() + at, l.biases.size(), l.biases.data());
    at += l.biases.size();
  }
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weights += other.layers[i].weights;
    layers[i].biases += other.layers[i].biases;
  }
  return *this;
}

ModelParams InitMlp(int input_dim, const std::vector<int>& hidden,
                    int num_classes, std::uint64_t seed) {
  if (input_dim < 1 || num_classes < 2) {
    throw InvalidArgument("mlp needs input_dim >= 1 and >= 2 classes");
  }
  std::mt19937_64 rng(seed);
  ModelParams params;
  params.arch = Architecture::kMlp;
  params.seed = seed;
  int in = input_dim;
  for (int width : hidden) {
    if (width < 1) throw InvalidArgument("hidden width must be positive");
    params.layers.push_back(GaussianLayer(in, width, std::sqrt(2.0 / in), rng));
    in = width;
  }
  params.layers.push_back(
      GaussianLayer(in, num_classes, std::sqrt(1.0 / in), rng));
  return params;
}

ModelParams InitResidualScalar(const ResidualInit& init, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  params.arch = Architecture::kResidualScalar;
  params.seed = seed;
  int in = 1;
  for (std::size_t i = 0; i < init.hidden.size(); ++i) {
    const int width = init.hidden[i];
    if (width < 1) throw InvalidArgument("hidden width must be positive");
    if (i == 0) {
      // Unit slopes with kinks spread over the input range.
      Layer layer = GaussianLayer(in, width, 1.0, rng);
      std::uniform_real_distribution<double> uniform(-init.input_scale,
                                                     init.input_scale);
      for (int r = 0; r < width; ++r) layer.biases(r) = uniform(rng);
      params.layers.push_back(std::move(layer));
    } else {
      params.layers.push_back(GaussianLayer(in, width, std::sqrt(2.0 / in), rng));
    }
    in = width;
  }
  params.layers.push_back(GaussianLayer(in, 1, init.output_std, rng));
  return params;
}

ForwardCache Forward(const ModelParams& params, const Matrix& inputs) {
  if (inputs.cols() != params.input_dim()) {
    throw InvalidArgument(fmt::format("input width {} does not match model {}",
                                      inputs.cols(), params.input_dim()));
  }
  if (!inputs.allFinite()) throw InvalidArgument("non-finite input");
  ForwardCache cache;
  cache.input = inputs;
  const std::size_t n_layers = params.layers.size();
  const Matrix* a = &cache.input;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const Layer& l = params.layers[i];
    Matrix z = (*a) * l.weights.transpose();
    z.rowwise() += l.biases.transpose();
    cache.pre.push_back(z);
    if (i + 1 < n_layers) {
      cache.post.push_back(z.cwiseMax(0.0));
    } else if (params.arch == Architecture::kMlp) {
      Matrix p = z;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double shift = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - shift).exp();
        p.row(r) /= p.row(r).sum();
      }
      cache.post.push_back(p);
    } else {
      cache.post.push_back(z);
    }
    a = &cache.post.back();
  }
  if (params.arch == Architecture::kMlp) {
    cache.outputs = cache.post.back();
  } else {
    cache.outputs = inputs + cache.post.back();
  }
  return cache;
}

ModelParams Backward(const ModelParams& params, const ForwardCache& cache,
                     const Matrix& output_gradient) {
  if (output_gradient.rows() != cache.outputs.rows() ||
      output_gradient.cols() != cache.outputs.cols() ||
      cache.pre.size() != params.layers.size()) {
    throw InvalidArgument("backward: shape mismatch with forward cache");
  }
  ModelParams grads = params.ZerosLike();
  Matrix dz;
  if (params.arch == Architecture::kMlp) {
    const Matrix& p = cache.outputs;
    const Vector inner = (p.cwiseProduct(output_gradient)).rowwise().sum();
    dz = p.cwiseProduct(output_gradient - inner.replicate(1, p.cols()));
  } else {
    dz = output_gradient;
  }
  for (int i = static_cast<int>(params.layers.size()) - 1; i >= 0; --i) {
    const Matrix& a_prev = i == 0 ? cache.input : cache.post[i - 1];
    grads.layers[i].weights = dz.transpose() * a_prev;
    grads.layers[i].biases = dz.colwise().sum().transpose();
    if (i == 0) break;
    Matrix da = dz * params.layers[i].weights;
    dz = da.cwiseProduct(
        (cache.pre[i - 1].array() > 0.0).cast<double>().matrix());
  }
  return grads;
}

OptimizerState OptimizerState::For(const ModelParams& params, AdamConfig config) {
  return {config, params.ZerosLike(), params.ZerosLike(), 0};
}

void AdamStep(OptimizerState& state, ModelParams& params,
              const ModelParams& grads) {
  for (std::size_t i = 0; i < grads.layers.size(); ++i) {
    if (!AllFinite(grads.layers[i])) {
      throw NonFiniteGradientError(static_cast<int>(i));
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p -= c.lr * c.weight_decay * p;
    p.array() -= c.lr * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + c.eps);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weights, state.m.layers[i].weights,
           state.v.layers[i].weights, grads.layers[i].weights);
    update(params.layers[i].biases, state.m.layers[i].biases,
           state.v.layers[i].biases, grads.layers[i].biases);
  }
}

nlohmann::json ToJson(const ModelParams& params) {
  nlohmann::json j;
  j["architecture"] = ArchName(params.arch);
  j["seed"] = params.seed;
  std::vector<int> sizes{params.input_dim()};
  for (const Layer& l : params.layers) sizes.push_back(static_cast<int>(l.weights.rows()));
  j["layer_sizes"] = sizes;
  j["layers"] = nlohmann::json::array();
  for (const Layer& l : params.layers) {
    j["layers"].push_back({
        {"weights", std::vector<double>(l.weights.data(),
                                        l.weights.data() + l.weights.size())},
        {"biases", std::vector<double>(l.biases.data(),
                                       l.biases.data() + l.biases.size())},
    });
  }
  return j;
}

ModelParams ModelParamsFromJson(const nlohmann::json& j) {
  try {
    ModelParams params;
    params.arch = ArchFromName(j.at("architecture").get<std::string>());
    params.seed = j.value("seed", std::uint64_t{0});
    const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
    const auto& layers = j.at("layers");
    if (sizes.size() != layers.size() + 1) {
      throw DataError("model json: layer_sizes does not match layers");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto w = layers[i].at("weights").get<std::vector<double>>();
      const auto b = layers[i].at("biases").get<std::vector<double>>();
      const int in = sizes[i];
      const int out = sizes[i + 1];
      if (static_cast<int>(w.size()) != in * out ||
          static_cast<int>(b.size()) != out) {
        throw DataError(fmt::format("model json: layer {} has wrong size", i));
      }
      Layer layer{Eigen::Map<const Matrix>(w.data(), out, in),
                  Eigen::Map<const Vector>(b.data(), out)};
      params.layers.push_back(std::move(layer));
    }
    params.Validate();
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed model json: {}", e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kData) throw;
    throw DataError(e.what());
  }
}

void SaveModel(const ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << ToJson(params).dump(1) << '\n';
}

ModelParams LoadModel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return ModelParamsFromJson(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

std::vector<double> KdeAdjoint(std::span<const double> samples,
                               const Grid& grid, double bandwidth,
                               std::span<const double> density_gradient) {
  if (samples.empty()) throw InvalidArgument("no samples");
  if (static_cast<int>(density_gradient.size()) != grid.size()) {
    throw InvalidArgument("density gradient size does not match grid");
  }
  const double h = std::max(bandwidth, MinBandwidth(grid));
  const int n = grid.size();
  const double inv_h2 = 1.0 / (h * h);
  const double scale = 1.0 / (samples.size() * grid.dx());
  std::vector<double> q(n);
  std::vector<double> out(samples.size());
  for (std::size_t l = 0; l < samples.size(); ++l) {
    const double s = samples[l];
    if (!std::isfinite(s)) throw InvalidArgument("non-finite input");
    double max_exponent = -INFINITY;
    for (int k = 0; k < n; ++k) {
      const double d = grid.point(k) - s;
      q[k] = -0.5 * d * d * inv_h2;
      max_exponent = std::max(max_exponent, q[k]);
    }
    double norm = 0.0;
    for (int k = 0; k < n; ++k) {
      q[k] = std::exp(q[k] - max_exponent);
      norm += q[k];
    }
    // d q_k / d s = q_k (a_k - sum_j q_j a_j), a_k = (x_k - s) / h^2.
    double a_bar = 0.0;
    double g_bar = 0.0;
    double ga = 0.0;
    for (int k = 0; k < n; ++k) {
      q[k] /= norm;
      const double a = (grid.point(k) - s) * inv_h2;
      a_bar += q[k] * a;
      g_bar += q[k] * density_gradient[k];
      ga += q[k] * density_gradient[k] * a;
    }
    out[l] = scale * (ga - g_bar * a_bar);
  }
  return out;
}

KdeLossValue KdeLossGradient(std::span<const double> samples, const Grid& grid,
                             double bandwidth, const KdeLoss& loss) {
  const GridDensity p = KdeOnGrid(samples, grid, bandwidth);
  const int n = grid.size();
  if (static_cast<int>(loss.other.size()) != n) {
    throw InvalidArgument("kde loss: companion density does not match grid");
  }
  const double dx = grid.dx();
  std::vector<double> dp(n, 0.0);
  KdeLossValue out;
  switch (loss.kind) {
    case KdeLossKind::kCrossEntropy:
    case KdeLossKind::kKlFrom:
      for (int k = 0; k < n; ++k) {
        const double t = loss.other[k];
        if (t == 0.0) continue;
        const double pk = std::max(p[k], kLogFloor);
        out.value -= t * std::log(pk) * dx;
        if (loss.kind == KdeLossKind::kKlFrom) out.value += t * std::log(t) * dx;
        if (p[k] > kLogFloor) dp[k] = -t / p[k] * dx;
      }
      break;
    case KdeLossKind::kMiMixture: {
      const double pi = loss.prior;
      if (!(pi > 0.0 && pi < 1.0)) {
        throw InvalidArgument("kde loss: prior must lie in (0, 1)");
      }
      for (int k = 0; k < n; ++k) {
        const double p1 = std::max(p[k], kLogFloor);
        const double p0 = std::max(loss.other[k], kLogFloor);
        const double m = pi * p1 + (1.0 - pi) * p0;
        out.value += (pi * p[k] * std::log(p1 / m) +
                      (1.0 - pi) * loss.other[k] * std::log(p0 / m)) * dx;
        dp[k] = pi * std::log(p1 / m) * dx;
      }
      break;
    }
  }
  out.sample_gradient = KdeAdjoint(samples, grid, bandwidth, dp);
  return out;
}

}  // namespace unlearn
