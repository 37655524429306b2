#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsdelab/grid.hpp"

namespace bsdelab {

// Radial profile configuration for the sphere-valued terminal field. The
// winding angle phi(r) tightens as lambda grows; lambda = 0 requests the
// smallest admissible value for the given epsilon (5% margin).
struct CounterexampleConfig {
    double epsilon = 0.5;    // in (0, 1]
    double lambda = 0.0;     // 0 = pick automatically
    double delta = 0.1;      // activation window of the stopped model
    double liftWidth = 1.0;  // radius by which the blend reaches 2 pi; in (0, 1]
};

struct RadialGrid {
    double dr = 1.0 / 256.0;  // on [0, 1]; 1/dr must be an integer
    double dt = 0.0;          // explicit scheme; must satisfy dt <= 0.25 dr^2
    double tMax = 1.0;
};

struct PDESolution {
    int nr = 0;      // radii r_j = j dr, j = 0..nr
    double dr = 0.0;
    std::vector<double> sampleTimes;  // achieved snapshot times, ascending
    std::vector<double> g;            // sampleTimes.size() x (nr + 1)
    std::vector<double> traceTimes;   // per integration step
    std::vector<double> trace;        // one-sided dr g(t, 0+) per step
    std::optional<double> blowUpTime;
    double coveredTime = 0.0;  // last time integrated (= halt time)

    const double* row(int s) const { return g.data() + static_cast<std::size_t>(s) * (nr + 1); }
};

/// Smallest lambda making the winding admissible for this epsilon (the r = 1
/// constraint is the binding one), inflated by a 5% margin.
double choose_lambda(double epsilon);

/// Initial profile on radii j*dr: the admissibility lower bound blended up to
/// 2 pi at r = 1 by a quintic smoothstep. Validates the profile pointwise.
std::vector<double> build_g0(const CounterexampleConfig& cfg, double dr);

/// Explicit finite-difference integration of the radial flow
/// dt g = drr g + dr g / r - sin g cos g / r^2 with g(t,0) = 0 and g(t,1)
/// pinned to boundaryValue. Halts at tMax or on a confirmed threshold
/// crossing of the origin derivative trace, recording blowUpTime.
PDESolution solve_pde(const std::vector<double>& g0, const RadialGrid& grid,
                      double blowThreshold, const std::vector<double>& sampleTimes = {},
                      double boundaryValue = 6.283185307179586476925286766559);

/// Sphere-valued field u(t, x) = (x1/r sin g, x2/r sin g, cos g) at backward
/// time t, bilinear in (t, r); (0,0,1) at the origin. Queries past the
/// recorded blow-up or integration cover throw std::domain_error.
std::array<double, 3> u_field(const PDESolution& pde, double t, const double* x);

/// 3x2 spatial gradient of u_field by central differences with step dr/2.
void u_field_gradient(const PDESolution& pde, double t, const double* x, double* out);

struct CounterexampleReport {
    double delta = 0.0;
    double K = 0.0;  // 4 delta
    double epsilon = 0.0;
    double lambda = 0.0;
    double DXi = 0.0;  // 1.02 x grid sup of the terminal field gradient
    std::optional<double> certificateR;
    std::optional<double> blowUpTime;  // PDE backward-time estimate
    bool windowCovered = false;        // PDE integrated through [0, delta]
    double supZ = 0.0;                 // sup over live nodes and paths of |Z|_F
    double supYDeviation = 0.0;        // sup | |Y| - 1 |
    double fracZAbove = 0.0;           // fraction of paths with max |Z| >= zLevel
    double zLevel = 100.0;
    std::int64_t pathsEvaluated = 0;
    std::int64_t nodesEvaluated = 0;
    bool certificateRegime = false;  // certificate exists and supZ <= 1.1 R
    std::vector<double> residualDts;  // per refinement level, descending
    std::vector<double> residuals;    // max over steps of |mean signed defect|
    double residualDecayMinRatio = 0.0;
};

/// Assembles Y = u(T-t, M_t), Z = grad u(T-t, M_t) on a streamed ensemble of
/// the stopped model with window cfg.delta, measures sup |Z|, the sphere
/// deviation, the one-step defect decay across dt refinements, and evaluates
/// the smallness certificate with rho(x) = x + x^2/2, K = 4 delta.
CounterexampleReport verify_counterexample(const CounterexampleConfig& cfg, const TimeGrid& grid,
                                           std::int64_t paths, std::uint64_t seed,
                                           const RadialGrid& pdeGrid, double blowThreshold = 1e3,
                                           std::int64_t residualPaths = 20000);

void write_trace_csv(const PDESolution& pde, const std::string& path, int thinning = 1);
void write_snapshots_csv(const PDESolution& pde, const std::string& path);

}  // namespace bsdelab
