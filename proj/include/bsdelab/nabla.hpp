#pragma once

#include <cstdint>
#include <vector>

#include "bsdelab/solver.hpp"

namespace bsdelab {

// A single pathwise bump: shift component e of the path by h from grid node
// uIndex onward.
struct BumpSpec {
    int uIndex = 0;
    std::vector<double> e;  // unit row vector, length = ensemble dim
    double h = 0.0;         // nonzero; default_bump_size gives 1e-4 sqrt(K)
};

double default_bump_size(const Ensemble& ens);

// Difference quotients of the solved (Y, Z) under a bump, node by node.
struct NablaResult {
    int paths = 0, nodes = 0, dim = 0;
    int uIndex = 0;
    double h = 0.0;
    std::vector<double> dY;  // paths x nodes
    std::vector<double> dZ;  // paths x (nodes-1) x dim

    double y(int p, int i) const {
        return dY[static_cast<std::size_t>(p) * nodes + static_cast<std::size_t>(i)];
    }
    double z(int p, int i, int c) const {
        return dZ[(static_cast<std::size_t>(p) * (nodes - 1) + static_cast<std::size_t>(i)) * dim +
                  static_cast<std::size_t>(c)];
    }
};

/// Bump-and-recompute quotient (solve(bumped) - solve(base)) / h. The bumped
/// run replays the base regression coefficients on the bumped ensemble, so
/// the quotient differentiates the fitted scheme itself and vanishes exactly
/// at nodes before the bump. Central quotients resolve two bumped ensembles.
NablaResult numeric_nabla(const Ensemble& ens, const DiscreteSolution& base,
                          const TerminalFunctional& xi, const Driver& f,
                          const RegressionBasis& basis, const BumpSpec& bump,
                          bool central = false);

// Coefficients of the linearized driver g(t,y,z) = zeta + eta y + theta . z
// along a base solution; identically zero at nodes before uIndex.
struct LinearCoeffs {
    int paths = 0, steps = 0, dim = 0;
    int uIndex = 0;
    std::vector<double> zeta;   // paths x steps
    std::vector<double> eta;    // paths x steps
    std::vector<double> theta;  // paths x steps x dim, contracted against z rows

    double zetaAt(int p, int i) const {
        return zeta[static_cast<std::size_t>(p) * steps + static_cast<std::size_t>(i)];
    }
    double etaAt(int p, int i) const {
        return eta[static_cast<std::size_t>(p) * steps + static_cast<std::size_t>(i)];
    }
    const double* thetaAt(int p, int i) const {
        return theta.data() +
               (static_cast<std::size_t>(p) * steps + static_cast<std::size_t>(i)) * dim;
    }
};

/// zeta by a path-bump quotient of the driver at the frozen (Y, Zm) arguments;
/// eta and theta by central differences in y and each z component.
LinearCoeffs linearized_coeffs(const Ensemble& ens, const DiscreteSolution& base,
                               const Driver& f, const BumpSpec& bump, double fdStep = 1e-6);

/// Solves the linear BSDE with driver from `coeffs` and terminal values `Xi`
/// (one per path). U and V vanish at nodes before coeffs.uIndex.
DiscreteSolution solve_differentiated(const Ensemble& ens, const LinearCoeffs& coeffs,
                                      std::vector<double> Xi, const RegressionBasis& basis,
                                      SolveOptions opts = {});

struct DeltaHedgeEntry {
    int uIndex = 0;
    int direction = 0;  // index of the bumped component
    std::int64_t pathsCompared = 0;
    std::int64_t pathsNearStop = 0;  // stopped within one step of u, excluded
    double meanAbs = 0.0;            // mean |dY_u - Z_u e*| over compared paths
    double maxAbs = 0.0;
    bool pass = false;  // meanAbs <= tolerance
};

struct DeltaHedgeReport {
    double tolerance = 0.0;  // max(1e-2, 20 h)
    std::vector<DeltaHedgeEntry> entries;
    double maxMeanAbs = 0.0;
    bool pass = false;
};

/// For each bump, compares the quotient of Y at the bump instant against the
/// regression Z there projected on the bump direction.
DeltaHedgeReport delta_hedge_check(const Ensemble& ens, const TerminalFunctional& xi,
                                   const Driver& f, const RegressionBasis& basis,
                                   const SolveOptions& opts, const std::vector<BumpSpec>& bumps);

void write_delta_hedge_csv(const DeltaHedgeReport& rep, const std::string& path);

}  // namespace bsdelab
