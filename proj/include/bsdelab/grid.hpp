#pragma once

#include <vector>

#include "bsdelab/errors.hpp"

namespace bsdelab {

/// Strictly increasing time instants from 0 to the horizon inclusive.
/// Step widths are derived; grids may be non-uniform.
class TimeGrid {
  public:
    explicit TimeGrid(std::vector<double> times) : times_(std::move(times)) {
        if (times_.size() < 2) throw ConfigError("grid.times: need at least 2 instants");
        if (times_.front() != 0.0) throw ConfigError("grid.times: must start at 0");
        for (std::size_t i = 0; i + 1 < times_.size(); ++i)
            if (!(times_[i] < times_[i + 1]))
                throw ConfigError("grid.times: not strictly increasing at index " +
                                  std::to_string(i + 1));
    }

    static TimeGrid uniform(double horizon, int steps) {
        if (!(horizon > 0.0)) throw ConfigError("grid.horizon: must be positive");
        if (steps < 1) throw ConfigError("grid.steps: must be >= 1");
        std::vector<double> t(static_cast<std::size_t>(steps) + 1);
        for (int i = 0; i <= steps; ++i)
            t[static_cast<std::size_t>(i)] = horizon * static_cast<double>(i) / steps;
        t.back() = horizon;
        return TimeGrid(std::move(t));
    }

    // Uniform refinement of the last span [splitFrom, T]: instants before
    // splitFrom are kept as-is, the tail is cut into `tailSteps` equal steps.
    // Used to resolve a short activation window without a huge global grid.
    static TimeGrid tail_refined(double horizon, double splitFrom, int coarseSteps, int tailSteps) {
        if (!(splitFrom > 0.0) || !(splitFrom < horizon))
            throw ConfigError("grid.splitFrom: must lie strictly inside (0, horizon)");
        std::vector<double> t;
        t.reserve(static_cast<std::size_t>(coarseSteps + tailSteps) + 1);
        for (int i = 0; i < coarseSteps; ++i)
            t.push_back(splitFrom * static_cast<double>(i) / coarseSteps);
        for (int i = 0; i <= tailSteps; ++i)
            t.push_back(splitFrom + (horizon - splitFrom) * static_cast<double>(i) / tailSteps);
        t.back() = horizon;
        return TimeGrid(std::move(t));
    }

    int steps() const { return static_cast<int>(times_.size()) - 1; }
    int nodes() const { return static_cast<int>(times_.size()); }
    double t(int i) const { return times_[static_cast<std::size_t>(i)]; }
    double dt(int i) const { return t(i + 1) - t(i); }
    double horizon() const { return times_.back(); }
    const std::vector<double>& times() const { return times_; }

  private:
    std::vector<double> times_;
};

}  // namespace bsdelab
