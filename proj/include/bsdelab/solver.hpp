#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bsdelab/functionals.hpp"
#include "bsdelab/regression.hpp"

namespace bsdelab {

struct SolveOptions {
    // Global Picard sweeps. Sweep 1 runs the plain backward recursion; later
    // sweeps re-evaluate the driver at the previous sweep's (Y, Z m) and refit.
    int picardIters = 3;
    // Explicit: y* = E_i[Y_{i+1}]. Implicit: y* solves y = E_i[Y_{i+1}] +
    // f(i, path, y, Zm) dA by an inner fixed point (contraction needs
    // Cy * max dA < 1, enforced).
    bool implicitY = false;
    int implicitMaxIters = 20;
    double implicitTol = 1e-10;
    // Optional a-priori bound: project Y onto [-yClamp, yClamp] each step.
    std::optional<double> yClamp;
    // Solve only nodes [startNode, N]; Y and Z at earlier nodes are zero.
    int startNode = 0;
};

struct StepDiagnostics {
    double condition = 1.0;
    int droppedColumns = 0;
    std::int64_t rows = 0;
};

// Regression coefficients of one (sweep, step), enough to replay the step's
// conditional-expectation operator on another ensemble.
struct FrozenStep {
    bool hasFit = false;
    FittedFn yFit;
    std::vector<FittedFn> zFit;  // n raw fits of (Y_{i+1}-E)(dM_c); empty on dead-clock steps
};

class DiscreteSolution {
  public:
    int paths = 0, nodes = 0, dim = 0;
    SolveOptions opts;
    std::vector<double> Y;                        // paths x nodes
    std::vector<double> Z;                        // paths x (nodes-1) x dim
    std::vector<double> residual;                 // per step, final sweep
    std::vector<double> sweepResidual;            // per sweep, mean over live steps
    std::vector<StepDiagnostics> diagnostics;     // per step, final sweep
    int picardIterationsUsed = 0;
    std::vector<std::vector<FrozenStep>> frozen;  // [sweep][step]

    double y(int p, int i) const {
        return Y[static_cast<std::size_t>(p) * nodes + static_cast<std::size_t>(i)];
    }
    double z(int p, int i, int c) const {
        return Z[(static_cast<std::size_t>(p) * (nodes - 1) + static_cast<std::size_t>(i)) * dim +
                 static_cast<std::size_t>(c)];
    }
};

/// Backward regression solver for the scalar BSDE with terminal xi and driver
/// f on a sampled ensemble. Deterministic given (ensemble, options).
DiscreteSolution solve(const Ensemble& ens, const TerminalFunctional& xi, const Driver& f,
                       const RegressionBasis& basis, const SolveOptions& opts = {});

/// Re-runs the backward recursion on `ens` with the regression coefficients
/// frozen in `base`: the conditional-expectation operator is held fixed while
/// the input paths change. On the ensemble `base` was solved on, this
/// reproduces `base` bit for bit.
DiscreteSolution replay(const Ensemble& ens, const DiscreteSolution& base,
                        const TerminalFunctional& xi, const Driver& f,
                        const RegressionBasis& basis);

void write_solution_csv(const DiscreteSolution& sol, const Ensemble& ens, const std::string& path);

}  // namespace bsdelab
