#pragma once

// Loss closures over flattened parameters, paired with their analytic
// gradients, for the finite-difference checks.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracle.h"
#include "unlearn/densities.h"
#include "unlearn/smallnet.h"
#include "unlearn/unlearner.h"

namespace gradcheck {

using Flat = std::vector<double>;

struct Case {
  std::string name;
  std::function<double(const Flat&)> loss;
  std::function<Flat(const Flat&)> grad;
  Flat theta;
};

inline unlearn::ModelParams With(const unlearn::ModelParams& shape, const Flat& theta) {
  unlearn::ModelParams p = shape;
  p.Unflatten(theta);
  return p;
}

inline unlearn::Matrix RandomRows(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  unlearn::Matrix m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = normal(rng);
  }
  return m;
}

inline std::vector<int> RandomInts(std::mt19937_64& rng, int n, int k) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::vector<int> v(n);
  for (int& x : v) x = pick(rng);
  return v;
}

inline unlearn::Matrix Column(std::span<const double> g) {
  unlearn::Matrix m(g.size(), 1);
  for (std::size_t i = 0; i < g.size(); ++i) m(i, 0) = g[i];
  return m;
}

inline Flat Sum(const unlearn::ModelParams& a, const unlearn::ModelParams& b) {
  unlearn::ModelParams s = a;
  s += b;
  return s.Flatten();
}

// Softmax path: 3 inputs, 5 hidden, 3 classes (38 parameters).
inline std::vector<Case> SoftmaxCases(std::uint64_t seed) {
  using namespace unlearn;
  std::mt19937_64 rng(seed);
  const ModelParams shape = InitMlp(3, {5}, 3, seed);
  const ModelParams teacher = InitMlp(3, {5}, 3, seed + 1000);
  const Matrix xr = RandomRows(rng, 12, 3);
  const Matrix xu = RandomRows(rng, 8, 3);
  const std::vector<int> yr = RandomInts(rng, 12, 3);
  const std::vector<int> yu = RandomInts(rng, 8, 3);
  const Matrix t_r = Forward(teacher, xr).outputs;
  std::vector<int> groups = RandomInts(rng, 12, 2);
  groups[0] = 0;
  groups[1] = 1;
  const double lambda = 0.6;
  const double alpha = 12.0 / 20.0;

  using PairFn = std::function<PairLoss(const Matrix&, const Matrix&)>;
  auto pair_case = [&](const std::string& name, PairFn fn) {
    Case c;
    c.name = name;
    c.theta = shape.Flatten();
    c.loss = [=](const Flat& th) {
      const ModelParams p = With(shape, th);
      return fn(Forward(p, xr).outputs, Forward(p, xu).outputs).total;
    };
    c.grad = [=](const Flat& th) {
      const ModelParams p = With(shape, th);
      const ForwardCache cr = Forward(p, xr);
      const ForwardCache cu = Forward(p, xu);
      const PairLoss l = fn(cr.outputs, cu.outputs);
      return Sum(Backward(p, cr, l.grad_retain), Backward(p, cu, l.grad_unlearn));
    };
    return c;
  };

  std::vector<Case> cases;
  cases.push_back(pair_case("softmax/marginal", [=](const Matrix& pr, const Matrix& pu) {
    return LossMarginal(pr, yr, pu, lambda, alpha);
  }));
  cases.push_back(pair_case("softmax/grad_diff", [=](const Matrix& pr, const Matrix& pu) {
    return LossGradDiff(pr, yr, pu, yu, lambda);
  }));
  cases.push_back(pair_case("softmax/kl_anchor", [=](const Matrix& pr, const Matrix& pu) {
    return LossKlAnchor(t_r, pr, pu, yu, lambda);
  }));

  Case f;
  f.name = "softmax/feature_mi";
  f.theta = shape.Flatten();
  f.loss = [=](const Flat& th) {
    return LossFeatureMi(Forward(With(shape, th), xr).outputs, yr, groups, 2, lambda).total;
  };
  f.grad = [=](const Flat& th) {
    const ModelParams p = With(shape, th);
    const ForwardCache c = Forward(p, xr);
    return Backward(p, c, LossFeatureMi(c.outputs, yr, groups, 2, lambda).grad).Flatten();
  };
  cases.push_back(f);
  return cases;
}

// KDE path: residual scalar net with 8 hidden units (25 parameters).
inline std::vector<Case> KdeCases(std::uint64_t seed) {
  using namespace unlearn;
  std::mt19937_64 rng(seed);
  ResidualInit init;
  init.hidden = {8};
  init.output_std = 0.3;
  const ModelParams shape = InitResidualScalar(init, seed);
  std::uniform_real_distribution<double> unif(-2.5, 2.5);
  std::normal_distribution<double> bump(0.0, 0.5);
  std::vector<double> xr(15);
  std::vector<double> xu(10);
  for (double& x : xr) x = unif(rng);
  for (double& x : xu) x = bump(rng);
  const Grid grid(-3.0, 3.0, 101);
  const KdeContext kde{grid, 0.2};
  const GridDensity target_r = KdeOnGrid(xr, grid, 0.2);
  const GridDensity target_u = KdeOnGrid(xu, grid, 0.2);
  // Anchor from a different network; at the anchor itself the KL term is
  // stationary and the check would only see noise.
  ResidualInit teacher_init = init;
  teacher_init.output_std = 0.2;
  const GridDensity anchor_r =
      KdeOnGrid(ScalarOutputs(InitResidualScalar(teacher_init, seed + 1000), xr), grid, 0.2);
  std::vector<int> groups = RandomInts(rng, 15, 2);
  groups[0] = 0;
  groups[1] = 1;
  const double lambda = 0.6;
  const double alpha = 15.0 / 25.0;
  auto as_matrix = [](const std::vector<double>& v) { return Column(v); };
  const Matrix mr = as_matrix(xr);
  const Matrix mu = as_matrix(xu);
  auto column_of = [](const Matrix& m) {
    return std::vector<double>(m.data(), m.data() + m.rows());
  };

  using PairFn = std::function<ScalarPairLoss(std::span<const double>, std::span<const double>)>;
  auto pair_case = [&](const std::string& name, PairFn fn) {
    Case c;
    c.name = name;
    c.theta = shape.Flatten();
    c.loss = [=](const Flat& th) {
      const ModelParams p = With(shape, th);
      return fn(column_of(Forward(p, mr).outputs), column_of(Forward(p, mu).outputs)).total;
    };
    c.grad = [=](const Flat& th) {
      const ModelParams p = With(shape, th);
      const ForwardCache cr = Forward(p, mr);
      const ForwardCache cu = Forward(p, mu);
      const ScalarPairLoss l = fn(column_of(cr.outputs), column_of(cu.outputs));
      return Sum(Backward(p, cr, Column(l.grad_retain)), Backward(p, cu, Column(l.grad_unlearn)));
    };
    return c;
  };

  std::vector<Case> cases;
  cases.push_back(pair_case("kde/marginal", [=](std::span<const double> r, std::span<const double> u) {
    return KdeLossMarginal(r, u, kde, target_r, lambda, alpha);
  }));
  cases.push_back(pair_case("kde/grad_diff", [=](std::span<const double> r, std::span<const double> u) {
    return KdeLossGradDiff(r, u, kde, target_r, target_u, lambda);
  }));
  cases.push_back(pair_case("kde/kl_anchor", [=](std::span<const double> r, std::span<const double> u) {
    return KdeLossKlAnchor(r, u, kde, anchor_r, target_u, lambda);
  }));

  Case f;
  f.name = "kde/feature_mi";
  f.theta = shape.Flatten();
  f.loss = [=](const Flat& th) {
    return KdeLossFeatureMi(column_of(Forward(With(shape, th), mr).outputs), groups, 2, kde,
                            target_r, lambda)
        .total;
  };
  f.grad = [=](const Flat& th) {
    const ModelParams p = With(shape, th);
    const ForwardCache c = Forward(p, mr);
    const ScalarFeatureLoss l =
        KdeLossFeatureMi(column_of(c.outputs), groups, 2, kde, target_r, lambda);
    return Backward(p, c, Column(l.grad)).Flatten();
  };
  cases.push_back(f);
  return cases;
}

inline std::vector<Case> AllCases(std::uint64_t seed) {
  std::vector<Case> all = SoftmaxCases(seed);
  for (Case& c : KdeCases(seed)) all.push_back(std::move(c));
  return all;
}

inline double CheckCase(const Case& c, double step = 1e-5) {
  return oracle::RelativeError(c.grad(c.theta),
                               oracle::CentralDifference(c.loss, c.theta, step));
}

}  // namespace gradcheck
