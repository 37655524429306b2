#include "bsdelab/stability.hpp"

#include <algorithm>
#include <cmath>

#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

StabilityReport stability_gap(const Ensemble& ens, const DiscreteSolution& sol,
                              const DiscreteSolution& solBar, double deltaXiNormSq,
                              double driverGapNormSq, double K, double Cy, double Cz) {
    if (sol.paths != solBar.paths || sol.nodes != solBar.nodes || sol.dim != solBar.dim)
        throw ConfigError("stability_gap: solutions have different shapes");
    if (sol.paths != ens.paths() || sol.nodes != ens.grid().nodes() || sol.dim != ens.dim())
        throw ConfigError("stability_gap: solutions were not produced on this ensemble");
    if (deltaXiNormSq < 0.0 || driverGapNormSq < 0.0 || K < 0.0 || Cy < 0.0 || Cz < 0.0)
        throw ConfigError("stability_gap: norm and constant inputs must be nonnegative");

    const int P = sol.paths;
    const int N = sol.nodes - 1;
    const int n = sol.dim;
    const double ms = ens.m_scale();

    // sup over nodes of the cross-path mean of dY^2.
    double supMean = 0.0;
    for (int i = 0; i <= N; ++i) {
        double meanSq = par::sum(P, [&](int p) {
                            double d = sol.y(p, i) - solBar.y(p, i);
                            return d * d;
                        }) /
                        P;
        supMean = std::max(supMean, meanSq);
    }

    // Clock-weighted squared gaps of Y and Zm along the paths.
    double h2 = par::sum(P, [&](int p) {
                    double acc = 0.0;
                    for (int i = 0; i < N; ++i) {
                        double da = ens.dA(p, i);
                        if (da == 0.0) continue;
                        double dy = sol.y(p, i) - solBar.y(p, i);
                        double zz = 0.0;
                        for (int c = 0; c < n; ++c) {
                            double dz = (sol.z(p, i, c) - solBar.z(p, i, c)) * ms;
                            zz += dz * dz;
                        }
                        acc += (dy * dy + zz) * da;
                    }
                    return acc;
                }) /
                P;

    StabilityReport rep;
    rep.measured = supMean + h2;
    rep.bound = 2.0 * std::exp(K * (2.0 * Cy + 2.0 * Cz * Cz + 2.0)) *
                (deltaXiNormSq + driverGapNormSq);
    rep.ok = rep.measured <= rep.bound + 1e-8 + 1e-6 * std::fabs(rep.bound);
    return rep;
}

ComparisonReport check_comparison(const DiscreteSolution& sol, const DiscreteSolution& solBar,
                                  double tolerance) {
    if (sol.dim != 1 || solBar.dim != 1)
        throw UnsupportedError("check_comparison supports scalar noise only");
    if (sol.paths != solBar.paths || sol.nodes != solBar.nodes)
        throw ConfigError("check_comparison: solutions have different shapes");

    ComparisonReport rep;
    rep.nodesChecked = static_cast<std::int64_t>(sol.paths) * sol.nodes;
    const int nodes = sol.nodes;
    rep.violations = static_cast<std::int64_t>(par::sum(sol.paths, [&](int p) {
        double cnt = 0.0;
        for (int i = 0; i < nodes; ++i)
            if (sol.y(p, i) > solBar.y(p, i) + tolerance) cnt += 1.0;
        return cnt;
    }));
    rep.maxViolation = std::max(0.0, par::max(sol.paths, [&](int p) {
                                    double m = -1.0;
                                    for (int i = 0; i < nodes; ++i)
                                        m = std::max(m, sol.y(p, i) - solBar.y(p, i));
                                    return m;
                                }));
    rep.violationFraction = static_cast<double>(rep.violations) / rep.nodesChecked;
    rep.pass = rep.violations == 0;
    return rep;
}

}  // namespace bsdelab
