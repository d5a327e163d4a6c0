#pragma once

#include <cstddef>
#include <vector>

namespace proxdm {

/// Noise rate beta(t) of the variance-preserving forward SDE on [0, T].
///
/// Two kinds are supported: a linear ramp beta_min + (beta_max - beta_min) t,
/// and a constant rate. Constant(2) is the Ornstein-Uhlenbeck setting used by
/// the convergence theory. Integrals of beta are always evaluated from the
/// closed-form antiderivative.
class ScheduleSpec {
  public:
    enum class Kind { Linear, Constant };

    static ScheduleSpec linear(double beta_min, double beta_max, double horizon);
    static ScheduleSpec constant(double beta, double horizon);

    Kind kind() const { return kind_; }
    double beta_min() const { return beta_min_; }
    double beta_max() const { return beta_max_; }
    double horizon() const { return horizon_; }

    /// Antiderivative of beta, B(t) = int_0^t beta(s) ds. Not range checked.
    double integrated(double t) const;

    bool operator==(const ScheduleSpec&) const = default;

  private:
    ScheduleSpec(Kind kind, double beta_min, double beta_max, double horizon);

    Kind kind_;
    double beta_min_;
    double beta_max_;  // equal to beta_min_ for Constant
    double horizon_;
};

/// Ascending knots 0 = t_0 < t_1 < ... < t_N = T.
class TimeGrid {
  public:
    /// Validates strict monotonicity and t_0 == 0.
    explicit TimeGrid(std::vector<double> knots);

    std::size_t steps() const { return knots_.size() - 1; }
    double horizon() const { return knots_.back(); }
    double operator[](std::size_t k) const { return knots_[k]; }
    const std::vector<double>& knots() const { return knots_; }

  private:
    std::vector<double> knots_;
};

/// gamma_k = int_{t_{k-1}}^{t_k} beta(s) ds for k = 1..N, stored at index k-1.
struct StepWeights {
    std::vector<double> gamma;

    double at(std::size_t k) const { return gamma.at(k - 1); }
    double max() const;
};

double beta_at(const ScheduleSpec& spec, double t);
double alpha_bar(const ScheduleSpec& spec, double t);
TimeGrid make_uniform_grid(double horizon, std::size_t steps);
StepWeights step_weights(const ScheduleSpec& spec, const TimeGrid& grid);

/// VE-mode weights: gamma_k = t_k - t_{k-1}.
StepWeights ve_step_weights(const TimeGrid& grid);

}  // namespace proxdm
