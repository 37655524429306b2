#pragma once

#include <functional>
#include <optional>

namespace bsdelab {

// A-priori estimates for the backward solution, as functions of the declared
// constants and the clock bound K. All inputs must be nonnegative.

// sqrt(CXi^2 + Cf^2) * exp(K*(2*Cy + Cz^2 + 1)/2)
double y_bound(double CXi, double Cf, double K, double Cy, double Cz);

// sqrt(DXi^2 + Df^2*K) * exp(K*(2*Cy + Cz^2 + 1)/2)
double z_bound_multi(double DXi, double Df, double K, double Cy, double Cz);

// sqrt(n) * [(DXi + Df/Cy) * exp(Cy*K) - Df/Cy], with the Cy -> 0 limit
// sqrt(n) * (DXi + Df*K) returned exactly when Cy = 0.
double z_bound_onedim(double DXi, double Df, double K, double Cy, int n);

// Smallest R in (0, Rmax] with sqrt(DXi^2 + Df^2*K) * exp(K*(rho(R)+1)^2/2)
// <= R, located by an ascending scan and refined by bisection on the
// bracketing interval. Absence of such an R is a value, not an error.
std::optional<double> smallness_radius(double DXi, double Df, double K,
                                       const std::function<double(double)>& rho, double Rmax,
                                       int scanPoints = 4096);

}  // namespace bsdelab
