#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "bsdelab/functionals.hpp"
#include "bsdelab/solver.hpp"

namespace bsdelab {

enum class UtilityKind { Power, Exponential };

// Power: kappa in (-inf, 0) u (0, 1], wealth x > 0, objective X^k e^{-k xi}/k.
// Exponential: kappa > 0, objective -exp(-kappa (X - xi)).
struct UtilitySpec {
    UtilityKind kind = UtilityKind::Power;
    double kappa = 0.5;
    double x = 1.0;
};

// Constrained controls: p = 0 on C. `project` maps a row onto C; the C*m
// projector follows from the scalar volatility factor.
struct ClosedSetPenalty {
    std::function<void(const double* v, double* out, int n)> project;
};
ClosedSetPenalty ball_set(double radius);
ClosedSetPenalty box_set(std::vector<double> lo, std::vector<double> hi);
ClosedSetPenalty orthant_cone();  // componentwise nonnegative cone

// p(pi) = |pi (I - w)|^beta, concentration measured away from the mix w.
struct DiversificationPenalty {
    Eigen::MatrixXd w;
    double beta = 2.0;
};

// p(pi) = sum_i C_i 1{pi^i != 0}: a flat fee per actively traded asset.
// Requires theta = 0 and the isotropic volatility factor.
struct InfoCostPenalty {
    std::vector<double> costs;
};

using Penalty = std::variant<ClosedSetPenalty, DiversificationPenalty, InfoCostPenalty>;

struct MarketSpec {
    Model model;
    std::vector<double> theta;  // drift loading, one per asset
};

double penalty_value(const Penalty& penalty, const double* pi, int n);

/// The candidate optimizer k(s, z) of the penalized quadratic G below; z is
/// the row Z_s m_s. Throws UnsupportedError for combinations without a
/// closed form and ConfigError for singular diversification algebra.
std::vector<double> optimal_control(const Penalty& penalty, const UtilitySpec& utility,
                                    const MarketSpec& market, int step, const double* z);

/// The pointwise objective whose minimum over controls defines the driver:
/// power: -k/2 |pi m - z|^2 + 1/2 |pi m|^2 + p(pi) - pi.theta
/// exponential: k/2 |pi m - z|^2 + p(pi) - pi.theta
double big_g(const Penalty& penalty, const UtilitySpec& utility, const MarketSpec& market,
             int step, const double* pi, const double* z);

/// f(s, z) = G(s, k(s,z), z) with declared regularity constants.
Driver driver_from_penalty(const Penalty& penalty, const UtilitySpec& utility,
                           const MarketSpec& market);

enum class WealthDynamics { Multiplicative, Additive };

struct ControlProcess {
    int paths = 0, steps = 0, dim = 0;
    std::vector<double> delta;  // paths x steps x dim rows
    double bound = 0.0;         // sup norm across all entries

    const double* at(int p, int i) const {
        return delta.data() +
               (static_cast<std::size_t>(p) * steps + static_cast<std::size_t>(i)) * dim;
    }
};

/// Wealth along the ensemble under the given control. Multiplicative applies
/// the exact exponential one-step update (drift (pi.theta - p(pi)) dA minus
/// the 1/2 |pi m|^2 dA compensator); Additive sums the increments directly.
/// Returns paths x nodes values starting at x.
std::vector<double> simulate_wealth(const MarketSpec& market, const Penalty& penalty,
                                    const Ensemble& ens, const ControlProcess& control,
                                    WealthDynamics dynamics, double x);

/// Named in-place edit of a candidate control, applied to a copy of the
/// optimum before re-simulation.
struct ControlModifier {
    std::string name;
    std::function<void(ControlProcess&)> apply;
};

/// Scalings {0, 0.5, 0.9, 1.1, 1.5}, a constant shift, and a seeded bounded
/// random control: under- and over-investment plus misdirection.
std::vector<ControlModifier> default_perturbations(std::uint64_t seed);

struct ControlReport {
    std::string name;
    double value = 0.0;  // Monte Carlo mean of the terminal objective
    double se = 0.0;
    bool dominated = true;    // value <= optimal value + 2 combined SE
    double worstDrift = 0.0;  // max over steps of mean dU, in units of the value SE
    bool driftOk = false;     // optimal: |drift| <= 3 everywhere; others: drift <= 3
};

struct MartingaleMethodReport {
    double y0 = 0.0;
    double closedFormValue = 0.0;
    double optimalValue = 0.0;
    double optimalSE = 0.0;
    bool valueMatch = false;  // |optimal MC - closed form| <= 2 SE
    std::vector<ControlReport> controls;  // [0] is the candidate optimum
    bool pass = false;
};

/// Solves the derived BSDE, builds the candidate control k(s, Z m), and
/// verifies the optimality principle by Monte Carlo: value vs closed form,
/// dominance over scaled/shifted/random perturbations, and per-step drift of
/// the utility process (zero for the candidate, nonpositive otherwise).
MartingaleMethodReport verify_martingale_method(const MarketSpec& market, const Penalty& penalty,
                                                const UtilitySpec& utility,
                                                const TerminalFunctional& xi, const Ensemble& ens,
                                                const RegressionBasis& basis,
                                                const SolveOptions& opts,
                                                const std::vector<ControlModifier>& perturbations);

void write_martingale_report_csv(const MartingaleMethodReport& rep, const std::string& path);

}  // namespace bsdelab
