#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unlearn/densities.h"
#include "unlearn/infotheory.h"

namespace unlearn {

enum class BoundName { kCompressionRate, kOddsInference, kEmpiricalSup };

std::string ToString(BoundName name);
BoundName BoundNameFromString(const std::string& text);

// A bound reported inside [0, 1] together with the unclamped value.
struct ClampedBound {
  double value = 0.0;
  double raw = 0.0;
  bool clamped = false;

  static ClampedBound Of(double raw);
};

struct UnlearningCertificate {
  InfoValue mu;
  double epsilon = 0.0;
  double confidence = 0.0;
  double confidence_raw = 0.0;
  BoundName bound_name = BoundName::kCompressionRate;
  double prior = 0.5;
  bool clamped = false;
};

nlohmann::json ToJson(const UnlearningCertificate& cert);
UnlearningCertificate CertificateFromJson(const nlohmann::json& j);

// min(1, sqrt(I / (2 pi (1 - pi)))): TV between the two conditional output
// laws given I(S; Z) at prior pi.
ClampedBound TvFromMiBound(InfoValue mi, double prior);

// Largest mu for which the compression-rate certificate is non-vacuous:
// 2 ((e^eps - 1) / (e^eps + 1))^2.
double MaxAdmissibleMu(double epsilon);

// 1 - (e^eps + 1)/(e^eps - 1) sqrt(mu / 2). Throws VacuousCertificateError
// when mu > MaxAdmissibleMu(eps).
double CompressionRateConfidence(InfoValue mu, double epsilon);

// Builds the certificate without throwing; a vacuous bound is reported as
// confidence 0 with clamped = true and the negative raw value kept.
UnlearningCertificate CompressionRateCertificate(InfoValue mu, double epsilon,
                                                 double prior = 0.5);

struct OddsInference {
  double probability = 0.0;  // max(0, 1 - sqrt(I/2) / eps)
  double raw = 0.0;
  double log_odds_cap = 0.0;  // log((1 + eps) / (1 - eps))
};
OddsInference OddsInferenceProbability(InfoValue mi, double eps);

ClampedBound AnchorDistanceBound(InfoValue delta, InfoValue delta_g,
                                 InfoValue eps_u, double prior,
                                 double anchor_tv);

struct GroupBound {
  double kl_bound = 0.0;  // I / p(z)
  double tv_bound = 0.0;  // sqrt(I / (2 p(z)))
};
std::vector<GroupBound> GroupwiseBounds(InfoValue mi,
                                        std::span<const double> group_probs);

struct TailBounds {
  ClampedBound kl_tail;  // min(1, I / tau^2)
  ClampedBound tv_tail;  // min(1, I / (2 tau^2))
};
TailBounds TailBoundsFor(InfoValue mi, double tau);

// max_k |log(p0_k / p1_k)| over atoms carrying mass under either law; equals
// the supremum over events by the mediant inequality. +inf when an atom has
// mass under exactly one law.
double EmpiricalSupLogOdds(const CategoricalPMF& p0, const CategoricalPMF& p1);

// delta (e^eps - 1) min_density / w1.
double LipschitzThreshold(double delta, double eps, double min_density,
                          double w1);

}  // namespace unlearn
