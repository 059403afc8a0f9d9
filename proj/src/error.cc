#include "unlearn/error.h"

#include <fmt/format.h>

namespace unlearn {

VacuousCertificateError::VacuousCertificateError(double mu,
                                                 double max_admissible_mu)
    : Error(ErrorKind::kAuditFailure,
            fmt::format("vacuous certificate: mu = {:.6g} nats exceeds the "
                        "maximal admissible mu = {:.6g} nats",
                        mu, max_admissible_mu)),
      mu_(mu),
      max_admissible_mu_(max_admissible_mu) {}

NonFiniteGradientError::NonFiniteGradientError(int layer)
    : Error(ErrorKind::kNonConvergence,
            fmt::format("non-finite gradient in layer {}", layer)),
      layer_(layer) {}

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kAuditFailure:
      return 4;
    case ErrorKind::kNonConvergence:
      return 5;
  }
  return 1;
}

}  // namespace unlearn
