#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "bsdelab/martingale.hpp"

namespace bsdelab {

/// Terminal functional xi(path) with declared regularity constants.
/// DXi: Lipschitz constant w.r.t. the sup norm of the path; CXi: uniform
/// bound when one is known. The backward solver is scalar (d = 1).
struct TerminalFunctional {
    std::function<double(const PathView&)> eval;
    double DXi = 0.0;
    std::optional<double> CXi;
};

enum class Regularity {
    Lipschitz,            // C_y in y, C_z in z
    LocallyLipschitzZ,    // C_y in y, rho(|z| v |z'|) in z
    LocallyLipschitzBoth  // rho(|z| v |z'|) in both arguments
};

/// Driver f(step, path prefix, y, z) with z a row of length n (the product
/// Z m already applied by the caller). Declared constants feed the bound
/// calculators; rho must be nondecreasing for the locally Lipschitz kinds.
struct Driver {
    std::function<double(int step, const PathView& path, double y, const double* z)> eval;
    Regularity kind = Regularity::Lipschitz;
    double Cy = 0.0;
    double Cz = 0.0;
    std::function<double(double)> rho;  // locally Lipschitz modulus
    double Df = 0.0;                    // path-Lipschitz constant
    std::optional<double> Cf;           // bound on sqrt(integrated |f(s,0,0)|^2)
};

inline double row_norm(const double* z, int n) {
    double s = 0.0;
    for (int c = 0; c < n; ++c) s += z[c] * z[c];
    return std::sqrt(s);
}

/// Radial z-truncation: evaluates f at z*R/(|z| v R), which is globally
/// Lipschitz with constants C_y = C_z = rho(R). Arguments with |z| <= R are
/// passed through untouched, so truncation is idempotent.
inline Driver truncate_driver(const Driver& f, double R, int n) {
    if (!(R > 0.0)) throw ConfigError("truncate.R: must be positive");
    if (n < 1 || n > 16) throw ConfigError("truncate: dimension out of supported range");
    Driver out = f;
    const double cy = f.kind == Regularity::LocallyLipschitzBoth && f.rho ? f.rho(R) : f.Cy;
    const double cz = f.rho ? f.rho(R) : f.Cz;
    out.kind = Regularity::Lipschitz;
    out.Cy = cy;
    out.Cz = cz;
    out.eval = [inner = f.eval, R, n](int step, const PathView& path, double y,
                                      const double* z) -> double {
        const double norm = row_norm(z, n);
        if (norm <= R) return inner(step, path, y, z);
        double scaled[16];
        const double factor = R / norm;
        for (int c = 0; c < n; ++c) scaled[c] = z[c] * factor;
        return inner(step, path, y, scaled);
    };
    return out;
}

}  // namespace bsdelab
