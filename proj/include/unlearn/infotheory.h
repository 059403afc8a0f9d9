#pragma once

#include <cmath>
#include <limits>

#include "unlearn/densities.h"

namespace unlearn {

// An information quantity stored in nats. Divergences that fail absolute
// continuity are represented by the tagged value +infinity.
class InfoValue {
 public:
  constexpr InfoValue() = default;
  static constexpr InfoValue Nats(double nats) { return InfoValue(nats); }
  static InfoValue Bits(double bits) { return InfoValue(bits * std::log(2.0)); }
  static constexpr InfoValue Infinite() {
    return InfoValue(std::numeric_limits<double>::infinity());
  }

  constexpr double nats() const { return nats_; }
  double bits() const { return nats_ / std::log(2.0); }
  bool is_infinite() const { return std::isinf(nats_); }

  friend constexpr bool operator==(InfoValue a, InfoValue b) = default;

 private:
  constexpr explicit InfoValue(double nats) : nats_(nats) {}
  double nats_ = 0.0;
};

// Shannon entropy -sum p log p with 0 log 0 = 0.
InfoValue Entropy(const CategoricalPMF& p);
// Grid (discretized differential) entropy -sum p log p dx; may be negative.
InfoValue GridEntropy(const GridDensity& p);

InfoValue KlDivergence(const CategoricalPMF& p, const CategoricalPMF& q);
InfoValue KlDivergence(const GridDensity& p, const GridDensity& q);

// -sum_k p_k log q_k dx.
InfoValue CrossEntropyGrid(const GridDensity& p, const GridDensity& q);

// prior * KL(p1 || M) + (1 - prior) * KL(p0 || M), M = prior p1 + (1-prior) p0.
// Equals I(S; Z) for Z ~ Bernoulli(prior), S | Z=1 ~ p1, S | Z=0 ~ p0.
InfoValue MutualInfoMixture(const CategoricalPMF& p0, const CategoricalPMF& p1,
                            double prior);
InfoValue MutualInfoMixture(const GridDensity& p0, const GridDensity& p1,
                            double prior);

InfoValue BinaryEntropy(double p);
// Inverse of BinaryEntropy restricted to [0, 1/2]; bisection to 1e-12.
double BinaryEntropyInverse(InfoValue y);

// Upper bound on the Bayes accuracy of guessing Z ~ Bernoulli(prior) from an
// output carrying `mi` nats about it (binary Fano inequality).
double FanoAccuracyBound(double prior, InfoValue mi);

// sqrt(KL / 2), an upper bound on total variation.
double PinskerBound(InfoValue kl);

}  // namespace unlearn
