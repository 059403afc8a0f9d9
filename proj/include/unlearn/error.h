#pragma once

#include <stdexcept>
#include <string>

namespace unlearn {

// Error categories; the CLI maps them onto process exit codes.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kData,
  kAuditFailure,
  kNonConvergence,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error InvalidArgument(const std::string& what) {
  return Error(ErrorKind::kInvalidArgument, what);
}
inline Error ConfigError(const std::string& what) {
  return Error(ErrorKind::kConfig, what);
}
inline Error DataError(const std::string& what) {
  return Error(ErrorKind::kData, what);
}

// Raised when a compression-rate certificate would carry no information.
class VacuousCertificateError : public Error {
 public:
  VacuousCertificateError(double mu, double max_admissible_mu);

  double mu() const { return mu_; }
  double max_admissible_mu() const { return max_admissible_mu_; }

 private:
  double mu_;
  double max_admissible_mu_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : Error(ErrorKind::kNonConvergence, what), residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

class NonFiniteGradientError : public Error {
 public:
  explicit NonFiniteGradientError(int layer);

  int layer() const { return layer_; }

 private:
  int layer_;
};

// 0 success, 2 config, 3 data, 4 audit failure, 5 non-convergence.
int ExitCodeFor(ErrorKind kind);

}  // namespace unlearn
