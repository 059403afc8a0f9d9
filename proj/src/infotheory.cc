#include "unlearn/infotheory.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <fmt/format.h>

#include "unlearn/error.h"

namespace unlearn {
namespace {

template <typename Measure>
InfoValue Kl(const Measure& p, const Measure& q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return InfoValue::Infinite();
    sum += p[i] * std::log(p[i] / q[i]);
  }
  return InfoValue::Nats(std::max(0.0, sum * p.cell_weight()));
}

template <typename Measure>
InfoValue JsMixture(const Measure& p0, const Measure& p1, double prior) {
  if (!(prior > 0.0 && prior < 1.0)) {
    throw InvalidArgument("mutual information: prior must lie in (0, 1)");
  }
  double kl1 = 0.0;
  double kl0 = 0.0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    const double m = prior * p1[i] + (1.0 - prior) * p0[i];
    if (p1[i] > 0.0) kl1 += p1[i] * std::log(p1[i] / m);
    if (p0[i] > 0.0) kl0 += p0[i] * std::log(p0[i] / m);
  }
  const double w = p0.cell_weight();
  return InfoValue::Nats(
      std::max(0.0, (prior * kl1 + (1.0 - prior) * kl0) * w));
}

}  // namespace

InfoValue Entropy(const CategoricalPMF& p) {
  double sum = 0.0;
  for (double pi : p.probs()) {
    if (pi > 0.0) sum -= pi * std::log(pi);
  }
  return InfoValue::Nats(std::max(0.0, sum));
}

InfoValue GridEntropy(const GridDensity& p) {
  double sum = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) sum -= v * std::log(v);
  }
  return InfoValue::Nats(sum * p.grid().dx());
}

InfoValue KlDivergence(const CategoricalPMF& p, const CategoricalPMF& q) {
  if (!SameSupport(p, q)) throw InvalidArgument("kl: mismatched support");
  return Kl(p, q);
}

InfoValue KlDivergence(const GridDensity& p, const GridDensity& q) {
  if (!SameSupport(p, q)) throw InvalidArgument("kl: mismatched support");
  return Kl(p, q);
}

InfoValue CrossEntropyGrid(const GridDensity& p, const GridDensity& q) {
  if (!SameSupport(p, q)) {
    throw InvalidArgument("cross entropy: mismatched support");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] == 0.0) return InfoValue::Infinite();
    sum -= p[k] * std::log(q[k]);
  }
  return InfoValue::Nats(sum * p.grid().dx());
}

InfoValue MutualInfoMixture(const CategoricalPMF& p0, const CategoricalPMF& p1,
                            double prior) {
  if (!SameSupport(p0, p1)) {
    throw InvalidArgument("mutual information: mismatched support");
  }
  return JsMixture(p0, p1, prior);
}

InfoValue MutualInfoMixture(const GridDensity& p0, const GridDensity& p1,
                            double prior) {
  if (!SameSupport(p0, p1)) {
    throw InvalidArgument("mutual information: mismatched support");
  }
  return JsMixture(p0, p1, prior);
}

InfoValue BinaryEntropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InvalidArgument("binary entropy: argument outside [0, 1]");
  }
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return InfoValue::Nats(h);
}

double BinaryEntropyInverse(InfoValue y) {
  const double target = y.nats();
  if (!(target >= 0.0)) {
    throw InvalidArgument("binary entropy inverse: negative argument");
  }
  if (target > std::numbers::ln2 + 1e-15) {
    throw InvalidArgument(fmt::format(
        "binary entropy inverse: {:.17g} nats exceeds ln 2", target));
  }
  if (target == 0.0) return 0.0;
  double lo = 0.0;
  double hi = 0.5;
  // Bisect until the bracket collapses in floating point; H2 is increasing
  // on [0, 1/2].
  for (int iter = 0; iter < 2000; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (BinaryEntropy(mid).nats() < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double e_lo = std::abs(BinaryEntropy(lo).nats() - target);
  const double e_hi = std::abs(BinaryEntropy(hi).nats() - target);
  return e_lo <= e_hi ? lo : hi;
}

double FanoAccuracyBound(double prior, InfoValue mi) {
  if (!(prior > 0.0 && prior < 1.0)) {
    throw InvalidArgument("fano: prior must lie in (0, 1)");
  }
  const double residual = BinaryEntropy(prior).nats() - mi.nats();
  return 1.0 - BinaryEntropyInverse(InfoValue::Nats(std::max(0.0, residual)));
}

double PinskerBound(InfoValue kl) {
  if (!(kl.nats() >= 0.0)) throw InvalidArgument("pinsker: negative KL");
  return std::sqrt(kl.nats() / 2.0);
}

}  // namespace unlearn
