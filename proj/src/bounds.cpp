#include "bsdelab/bounds.hpp"

#include <cmath>

#include "bsdelab/errors.hpp"

namespace bsdelab {

namespace {

void require_nonneg(double v, const char* name) {
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + ": must be nonnegative");
}

}  // namespace

double y_bound(double CXi, double Cf, double K, double Cy, double Cz) {
    require_nonneg(CXi, "CXi");
    require_nonneg(Cf, "Cf");
    require_nonneg(K, "K");
    require_nonneg(Cy, "Cy");
    require_nonneg(Cz, "Cz");
    return std::sqrt(CXi * CXi + Cf * Cf) * std::exp(0.5 * K * (2.0 * Cy + Cz * Cz + 1.0));
}

double z_bound_multi(double DXi, double Df, double K, double Cy, double Cz) {
    require_nonneg(DXi, "DXi");
    require_nonneg(Df, "Df");
    require_nonneg(K, "K");
    require_nonneg(Cy, "Cy");
    require_nonneg(Cz, "Cz");
    return std::sqrt(DXi * DXi + Df * Df * K) * std::exp(0.5 * K * (2.0 * Cy + Cz * Cz + 1.0));
}

double z_bound_onedim(double DXi, double Df, double K, double Cy, int n) {
    require_nonneg(DXi, "DXi");
    require_nonneg(Df, "Df");
    require_nonneg(K, "K");
    require_nonneg(Cy, "Cy");
    if (n < 1) throw ConfigError("n: must be >= 1");
    const double root = std::sqrt(static_cast<double>(n));
    if (Cy == 0.0) return root * (DXi + Df * K);
    // (DXi + Df/Cy)*e^{CyK} - Df/Cy written via expm1 so the K -> 0 and
    // Df/Cy -> large regimes stay exact instead of cancelling.
    return root * (DXi * std::exp(Cy * K) + Df * std::expm1(Cy * K) / Cy);
}

std::optional<double> smallness_radius(double DXi, double Df, double K,
                                       const std::function<double(double)>& rho, double Rmax,
                                       int scanPoints) {
    require_nonneg(DXi, "DXi");
    require_nonneg(Df, "Df");
    require_nonneg(K, "K");
    if (!(Rmax > 0.0)) throw ConfigError("Rmax: must be positive");
    if (scanPoints < 2) throw ConfigError("scanPoints: must be >= 2");

    const double base = std::sqrt(DXi * DXi + Df * Df * K);
    const auto lhs = [&](double R) {
        const double r = rho ? rho(R) : 0.0;
        return base * std::exp(0.5 * K * (r + 1.0) * (r + 1.0));
    };
    const auto ok = [&](double R) { return lhs(R) <= R; };

    const auto refine = [&](double lo, double hi) {
        for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            if (ok(mid))
                hi = mid;
            else
                lo = mid;
        }
        return hi;
    };

    double prev = Rmax / scanPoints;
    if (ok(prev)) return refine(0.0, prev);
    for (int i = 2; i <= scanPoints; ++i) {
        const double R = Rmax * static_cast<double>(i) / scanPoints;
        if (ok(R)) {
            // Bracket (prev, R]: lhs(prev) > prev, lhs(R) <= R. Bisect on
            // the sign of lhs(x) - x to sharpen the smallest feasible R.
            return refine(prev, R);
        }
        prev = R;
    }
    return std::nullopt;
}

}  // namespace bsdelab
