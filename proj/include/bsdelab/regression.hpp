#pragma once

#include <functional>
#include <vector>

#include "bsdelab/martingale.hpp"

namespace bsdelab {

/// Per-time feature map from a path prefix to a feature vector. The constant
/// term is handled by the fitter (unpenalized intercept), so `fill` writes
/// only the `count` non-constant features. `ridge` penalizes standardized
/// slope coefficients and must be >= 0.
struct RegressionBasis {
    int count = 0;
    double ridge = 1e-8;
    std::function<void(const PathView&, int node, double* out)> fill;
};

// Monomials of the current state M_t: each component up to `degree`, plus
// pairwise cross terms when degree >= 2.
RegressionBasis polynomial_basis(int n, int degree, double ridge = 1e-8);

// Appends the running maximum of component 1 to an existing basis.
RegressionBasis with_running_max(RegressionBasis base);

// Appends the k increments of the uniform k-partition restriction of
// component 1, zero for partition instants after the current node.
RegressionBasis with_restrict_increments(RegressionBasis base, int k);

/// One fitted prediction function: intercept plus ridge slopes on
/// standardized features. Dropped (zero-variance) features carry invsd = 0.
struct FittedFn {
    std::vector<double> mean;
    std::vector<double> invsd;
    std::vector<double> beta;
    double intercept = 0.0;

    double predict(const double* feat) const {
        double s = intercept;
        for (std::size_t k = 0; k < beta.size(); ++k)
            s += beta[k] * (feat[k] - mean[k]) * invsd[k];
        return s;
    }
};

/// Shared design for several targets at one time step: feature statistics and
/// the (Gram + ridge) factorization are built once; each target costs one
/// reduction pass and one small triangular solve. Deterministic: all
/// cross-path reductions are fixed-block sums.
class StepFitter {
  public:
    // featureRows: rows x k row-major buffer of raw features.
    StepFitter(const double* featureRows, std::int64_t rows, int k, double ridge);

    FittedFn solve_for(const std::function<double(std::int64_t row)>& target) const;

    double condition() const { return condition_; }
    int dropped_columns() const { return dropped_; }
    std::int64_t rows() const { return rows_; }

  private:
    const double* feats_;
    std::int64_t rows_;
    int k_;
    double ridge_;
    int kept_ = 0;
    int dropped_ = 0;
    double condition_ = 1.0;
    std::vector<int> keptIdx_;
    std::vector<double> mean_, invsd_;
    std::vector<double> gram_;  // (Gram/rows + ridge*I), kept x kept row-major
};

}  // namespace bsdelab
