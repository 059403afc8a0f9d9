#include "unlearn/certificates.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "unlearn/error.h"

namespace unlearn {
namespace {

void CheckPrior(double prior, const char* who) {
  if (!(prior > 0.0 && prior < 1.0)) {
    throw InvalidArgument(fmt::format("{}: prior must lie in (0, 1)", who));
  }
}

void CheckNonNegative(InfoValue v, const char* who) {
  if (!(v.nats() >= 0.0)) {
    throw InvalidArgument(fmt::format("{}: information must be >= 0", who));
  }
}

}  // namespace

std::string ToString(BoundName name) {
  switch (name) {
    case BoundName::kCompressionRate:
      return "compression_rate";
    case BoundName::kOddsInference:
      return "odds_inference";
    case BoundName::kEmpiricalSup:
      return "empirical_sup";
  }
  return "unknown";
}

BoundName BoundNameFromString(const std::string& text) {
  if (text == "compression_rate") return BoundName::kCompressionRate;
  if (text == "odds_inference") return BoundName::kOddsInference;
  if (text == "empirical_sup") return BoundName::kEmpiricalSup;
  throw DataError("unknown bound name '" + text + "'");
}

ClampedBound ClampedBound::Of(double raw) {
  ClampedBound b;
  b.raw = raw;
  b.value = std::clamp(raw, 0.0, 1.0);
  b.clamped = b.value != raw;
  return b;
}

nlohmann::json ToJson(const UnlearningCertificate& cert) {
  return nlohmann::json{
      {"mu_nats", cert.mu.nats()},
      {"epsilon", cert.epsilon},
      {"confidence", cert.confidence},
      {"confidence_raw", cert.confidence_raw},
      {"bound_name", ToString(cert.bound_name)},
      {"prior", cert.prior},
      {"clamped", cert.clamped},
  };
}

UnlearningCertificate CertificateFromJson(const nlohmann::json& j) {
  try {
    UnlearningCertificate cert;
    cert.mu = InfoValue::Nats(j.at("mu_nats").get<double>());
    cert.epsilon = j.at("epsilon").get<double>();
    cert.confidence = j.at("confidence").get<double>();
    cert.confidence_raw = j.value("confidence_raw", cert.confidence);
    cert.bound_name = BoundNameFromString(j.at("bound_name").get<std::string>());
    cert.prior = j.at("prior").get<double>();
    cert.clamped = j.at("clamped").get<bool>();
    return cert;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed certificate: {}", e.what()));
  }
}

ClampedBound TvFromMiBound(InfoValue mi, double prior) {
  CheckPrior(prior, "tv_from_mi_bound");
  CheckNonNegative(mi, "tv_from_mi_bound");
  return ClampedBound::Of(std::sqrt(mi.nats() / (2.0 * prior * (1.0 - prior))));
}

double MaxAdmissibleMu(double epsilon) {
  const double t = std::tanh(epsilon / 2.0);  // (e^eps - 1) / (e^eps + 1)
  return 2.0 * t * t;
}

double CompressionRateConfidence(InfoValue mu, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument("compression rate: epsilon must be positive");
  }
  CheckNonNegative(mu, "compression rate");
  const double limit = MaxAdmissibleMu(epsilon);
  if (mu.nats() > limit) throw VacuousCertificateError(mu.nats(), limit);
  const double c = 1.0 - std::sqrt(mu.nats() / 2.0) / std::tanh(epsilon / 2.0);
  return std::clamp(c, 0.0, 1.0);
}

UnlearningCertificate CompressionRateCertificate(InfoValue mu, double epsilon,
                                                 double prior) {
  CheckPrior(prior, "certificate");
  UnlearningCertificate cert;
  cert.mu = mu;
  cert.epsilon = epsilon;
  cert.prior = prior;
  cert.bound_name = BoundName::kCompressionRate;
  try {
    cert.confidence = CompressionRateConfidence(mu, epsilon);
    cert.confidence_raw = cert.confidence;
  } catch (const VacuousCertificateError&) {
    cert.confidence_raw =
        1.0 - std::sqrt(mu.nats() / 2.0) / std::tanh(epsilon / 2.0);
    cert.confidence = 0.0;
    cert.clamped = true;
  }
  return cert;
}

OddsInference OddsInferenceProbability(InfoValue mi, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) {
    throw InvalidArgument("odds inference: eps must lie in (0, 1)");
  }
  CheckNonNegative(mi, "odds inference");
  OddsInference out;
  out.raw = 1.0 - std::sqrt(mi.nats() / 2.0) / eps;
  out.probability = std::max(0.0, out.raw);
  out.log_odds_cap = std::log1p(eps) - std::log1p(-eps);
  return out;
}

ClampedBound AnchorDistanceBound(InfoValue delta, InfoValue delta_g,
                                 InfoValue eps_u, double prior,
                                 double anchor_tv) {
  CheckPrior(prior, "anchor bound");
  CheckNonNegative(delta, "anchor bound");
  CheckNonNegative(delta_g, "anchor bound");
  CheckNonNegative(eps_u, "anchor bound");
  if (!(anchor_tv >= 0.0 && anchor_tv <= 1.0)) {
    throw InvalidArgument("anchor bound: anchor_tv must lie in [0, 1]");
  }
  const double utility =
      std::sqrt(0.5) * (std::sqrt(delta.nats()) + std::sqrt(delta_g.nats()));
  const double membership =
      std::sqrt(eps_u.nats() / (2.0 * prior * (1.0 - prior)));
  return ClampedBound::Of(utility + membership + anchor_tv);
}

std::vector<GroupBound> GroupwiseBounds(InfoValue mi,
                                        std::span<const double> group_probs) {
  CheckNonNegative(mi, "groupwise bounds");
  double sum = 0.0;
  for (double p : group_probs) {
    if (!(p > 0.0)) {
      throw InvalidArgument("groupwise bounds: zero group probability");
    }
    sum += p;
  }
  if (group_probs.empty() || std::abs(sum - 1.0) > 1e-12) {
    throw InvalidArgument("groupwise bounds: group probabilities must sum to 1");
  }
  std::vector<GroupBound> out;
  out.reserve(group_probs.size());
  for (double p : group_probs) {
    out.push_back({mi.nats() / p, std::sqrt(mi.nats() / (2.0 * p))});
  }
  return out;
}

TailBounds TailBoundsFor(InfoValue mi, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tail bounds: tau must be positive");
  CheckNonNegative(mi, "tail bounds");
  const double t2 = tau * tau;
  return {ClampedBound::Of(mi.nats() / t2),
          ClampedBound::Of(mi.nats() / (2.0 * t2))};
}

double EmpiricalSupLogOdds(const CategoricalPMF& p0, const CategoricalPMF& p1) {
  if (!SameSupport(p0, p1)) {
    throw InvalidArgument("sup log-odds: mismatched support");
  }
  double sup = 0.0;
  for (std::size_t k = 0; k < p0.size(); ++k) {
    if (p0[k] == 0.0 && p1[k] == 0.0) continue;
    if (p0[k] == 0.0 || p1[k] == 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    sup = std::max(sup, std::abs(std::log(p0[k] / p1[k])));
  }
  return sup;
}

double LipschitzThreshold(double delta, double eps, double min_density,
                          double w1) {
  if (w1 == 0.0) throw InvalidArgument("identical distributions");
  if (!(delta > 0.0 && eps > 0.0 && min_density > 0.0 && w1 > 0.0)) {
    throw InvalidArgument("lipschitz threshold: arguments must be positive");
  }
  return delta * std::expm1(eps) * min_density / w1;
}

}  // namespace unlearn
