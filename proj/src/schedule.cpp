#include "proxdm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "proxdm/errors.hpp"

namespace proxdm {

namespace {

void check_time(const ScheduleSpec& spec, double t) {
    if (!(t >= 0.0 && t <= spec.horizon())) {
        std::ostringstream os;
        os << "time " << t << " outside schedule horizon [0, " << spec.horizon() << "]";
        throw std::domain_error(os.str());
    }
}

}  // namespace

ScheduleSpec::ScheduleSpec(Kind kind, double beta_min, double beta_max, double horizon)
    : kind_(kind), beta_min_(beta_min), beta_max_(beta_max), horizon_(horizon) {
    if (!(beta_min > 0.0)) throw ConfigError("schedule: beta_min must be > 0");
    if (!(beta_max >= beta_min)) throw ConfigError("schedule: beta_max must be >= beta_min");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw ConfigError("schedule: horizon must be a positive finite time");
}

ScheduleSpec ScheduleSpec::linear(double beta_min, double beta_max, double horizon) {
    return {Kind::Linear, beta_min, beta_max, horizon};
}

ScheduleSpec ScheduleSpec::constant(double beta, double horizon) {
    return {Kind::Constant, beta, beta, horizon};
}

double ScheduleSpec::integrated(double t) const {
    if (kind_ == Kind::Constant) return beta_min_ * t;
    return beta_min_ * t + 0.5 * (beta_max_ - beta_min_) * t * t;
}

TimeGrid::TimeGrid(std::vector<double> knots) : knots_(std::move(knots)) {
    if (knots_.empty()) throw ConfigError("time grid needs at least one knot");
    if (knots_.front() != 0.0) throw ConfigError("time grid must start at t = 0");
    for (std::size_t i = 1; i < knots_.size(); ++i) {
        if (!(knots_[i] > knots_[i - 1]))
            throw ConfigError("time grid knots must be strictly increasing");
    }
}

double StepWeights::max() const {
    return gamma.empty() ? 0.0 : *std::max_element(gamma.begin(), gamma.end());
}

double beta_at(const ScheduleSpec& spec, double t) {
    check_time(spec, t);
    if (spec.kind() == ScheduleSpec::Kind::Constant) return spec.beta_min();
    return spec.beta_min() + (spec.beta_max() - spec.beta_min()) * t;
}

double alpha_bar(const ScheduleSpec& spec, double t) {
    check_time(spec, t);
    return std::exp(-spec.integrated(t));
}

TimeGrid make_uniform_grid(double horizon, std::size_t steps) {
    if (steps == 0) throw ConfigError("uniform grid needs N >= 1 steps");
    if (!(horizon > 0.0)) throw ConfigError("uniform grid needs a positive horizon");
    std::vector<double> knots(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k)
        knots[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    knots.back() = horizon;
    return TimeGrid(std::move(knots));
}

StepWeights step_weights(const ScheduleSpec& spec, const TimeGrid& grid) {
    if (grid.steps() == 0) return {};
    // Relative slack so T = N * (T/N) round-off does not trip the check.
    if (std::abs(grid.horizon() - spec.horizon()) > 1e-12 * std::max(1.0, spec.horizon()))
        throw ConfigError("time grid horizon does not match the schedule horizon");
    StepWeights w;
    w.gamma.reserve(grid.steps());
    for (std::size_t k = 1; k <= grid.steps(); ++k) {
        const double a = grid[k - 1];
        const double b = grid[k];
        // Interval form avoids cancellation in B(b) - B(a) for small steps.
        double g;
        if (spec.kind() == ScheduleSpec::Kind::Constant) {
            g = spec.beta_min() * (b - a);
        } else {
            g = (b - a) * (spec.beta_min() + 0.5 * (spec.beta_max() - spec.beta_min()) * (a + b));
        }
        w.gamma.push_back(g);
    }
    return w;
}

StepWeights ve_step_weights(const TimeGrid& grid) {
    StepWeights w;
    w.gamma.reserve(grid.steps());
    for (std::size_t k = 1; k <= grid.steps(); ++k) w.gamma.push_back(grid[k] - grid[k - 1]);
    return w;
}

}  // namespace proxdm
