#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace proxdm {

/// Invalid configuration or argument supplied by the caller (CLI exit code 2).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure while running an experiment (CLI exit code 3).
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A backward-type step was requested with gamma >= 2, where the prox
/// regularization strength would turn negative.
class StepSizeError : public ConfigError {
  public:
    StepSizeError(const std::string& what, double gamma)
        : ConfigError(what), gamma_(gamma) {}
    double gamma() const { return gamma_; }

  private:
    double gamma_;
};

/// Newton prox solver failed on every start.
class ProxSolverError : public NumericError {
  public:
    ProxSolverError(const std::string& what, double best_residual)
        : NumericError(what), best_residual_(best_residual) {}
    double best_residual() const { return best_residual_; }

  private:
    double best_residual_;
};

}  // namespace proxdm
