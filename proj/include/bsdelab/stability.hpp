#pragma once

#include <cstdint>

#include "bsdelab/solver.hpp"

namespace bsdelab {

struct StabilityReport {
    double measured = 0.0;  // sup_i mean dY^2 + E sum dY^2 dA + E sum |dZm|^2 dA
    double bound = 0.0;     // 2 e^{K(2Cy + 2Cz^2 + 2)} (deltaXiNormSq + driverGapNormSq)
    bool ok = false;        // measured <= bound within abs 1e-8 + rel 1e-6
};

/// Compares two solutions of perturbed problems on the same ensemble against
/// the a-priori stability estimate. The caller supplies the squared terminal
/// gap E|dxi|^2 and the squared driver gap E int |df|^2 dA.
StabilityReport stability_gap(const Ensemble& ens, const DiscreteSolution& sol,
                              const DiscreteSolution& solBar, double deltaXiNormSq,
                              double driverGapNormSq, double K, double Cy, double Cz);

struct ComparisonReport {
    std::int64_t nodesChecked = 0;
    std::int64_t violations = 0;
    double violationFraction = 0.0;
    double maxViolation = 0.0;  // max over nodes of (Y - Ybar), 0 if none positive
    bool pass = false;          // no node with Y > Ybar + tolerance
};

/// Scalar-valued order check: with xi <= xiBar and f <= fBar (asserted by the
/// caller), Y should not exceed Ybar anywhere. Scalar solutions only.
ComparisonReport check_comparison(const DiscreteSolution& sol, const DiscreteSolution& solBar,
                                  double tolerance = 1e-8);

}  // namespace bsdelab
