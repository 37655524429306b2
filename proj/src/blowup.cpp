#include "bsdelab/blowup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "bsdelab/bounds.hpp"
#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/martingale.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double phi_of(double r, double epsilon, double lambda) {
    const double p = std::pow(r, 2.0 * (1.0 + epsilon));
    const double c = (lambda * lambda - p) / (lambda * lambda + p);
    return std::acos(std::clamp(c, -1.0, 1.0));
}

// Admissibility at radius r: cos phi(r) >= 1/(1+epsilon).
bool winding_ok(double r, double epsilon, double lambda) {
    const double p = std::pow(r, 2.0 * (1.0 + epsilon));
    return (lambda * lambda - p) / (lambda * lambda + p) >= 1.0 / (1.0 + epsilon) - 1e-12;
}

double smoothstep5(double t) { return t * t * t * (10.0 + t * (-15.0 + 6.0 * t)); }

int radial_nodes(double dr) {
    if (!(dr > 0.0) || dr > 0.5) throw ConfigError("radial step must lie in (0, 1/2]");
    const int nr = static_cast<int>(std::lround(1.0 / dr));
    if (std::fabs(nr * dr - 1.0) > 1e-9)
        throw ConfigError("radial step must divide the unit interval");
    if (nr < 4) throw ConfigError("radial grid needs at least 4 cells");
    return nr;
}

double lower_bound_profile(double r, double epsilon, double lambda) {
    return 2.0 * std::atan(r) + phi_of(r, epsilon, lambda);
}

void check_time_domain(const PDESolution& pde, double t) {
    if (t < 0.0) throw std::domain_error("field queried at negative time");
    if (pde.blowUpTime && t >= *pde.blowUpTime)
        throw std::domain_error("field queried at or beyond the blow-up time");
    if (t > pde.coveredTime + 1e-12)
        throw std::domain_error("field queried beyond the integrated horizon");
}

double interp_row(const PDESolution& pde, int s, double r) {
    const double* row = pde.row(s);
    const double x = r / pde.dr;
    if (x >= pde.nr)  // linear continuation past the rim for FD probes
        return row[pde.nr] + (x - pde.nr) * (row[pde.nr] - row[pde.nr - 1]);
    const int j = static_cast<int>(x);
    const double w = x - j;
    return row[j] + w * (row[j + 1] - row[j]);
}

double g_at(const PDESolution& pde, double t, double r) {
    const auto& ts = pde.sampleTimes;
    const auto hi = std::upper_bound(ts.begin(), ts.end(), t);
    if (hi == ts.begin()) return interp_row(pde, 0, r);
    const int s1 = static_cast<int>(hi - ts.begin());
    if (s1 == static_cast<int>(ts.size()))
        return interp_row(pde, s1 - 1, r);
    const int s0 = s1 - 1;
    const double w = (t - ts[s0]) / (ts[s1] - ts[s0]);
    return (1.0 - w) * interp_row(pde, s0, r) + w * interp_row(pde, s1, r);
}

}  // namespace

double choose_lambda(double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1.0) throw ConfigError("epsilon must lie in (0, 1]");
    // The r = 1 constraint binds; scan then bisect for the smallest admissible
    // lambda and inflate by 5%.
    const double hi = 100.0;
    const int scan = 4096;
    double first = -1.0;
    for (int i = 1; i <= scan; ++i) {
        const double lam = hi * i / scan;
        if (winding_ok(1.0, epsilon, lam)) {
            first = lam;
            break;
        }
    }
    if (first < 0.0) throw ConfigError("no admissible lambda up to 100");
    double lo = std::max(first - hi / scan, 1e-12), up = first;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + up);
        (winding_ok(1.0, epsilon, mid) ? up : lo) = mid;
    }
    return up * 1.05;
}

std::vector<double> build_g0(const CounterexampleConfig& cfg, double dr) {
    if (!(cfg.epsilon > 0.0) || cfg.epsilon > 1.0) throw ConfigError("epsilon must lie in (0, 1]");
    if (!(cfg.liftWidth > 0.0) || cfg.liftWidth > 1.0)
        throw ConfigError("liftWidth must lie in (0, 1]");
    const double lambda = cfg.lambda > 0.0 ? cfg.lambda : choose_lambda(cfg.epsilon);
    const int nr = radial_nodes(dr);

    const double bound1 = lower_bound_profile(1.0, cfg.epsilon, lambda);
    const double lift = kTwoPi - bound1;
    if (lift < 0.0)
        throw ConfigError("profile infeasible: admissibility bound exceeds 2 pi at the rim");

    std::vector<double> g0(nr + 1);
    for (int j = 0; j <= nr; ++j) {
        const double r = j * dr;
        if (!winding_ok(r, cfg.epsilon, lambda))
            throw ConfigError("lambda too small for the winding constraint at r = " +
                              std::to_string(r));
        const double bound = lower_bound_profile(r, cfg.epsilon, lambda);
        // the blend completes by liftWidth; the quintic step is C^2 flat at
        // its top, so narrowing it keeps the profile smooth while
        // concentrating the excess winding near the origin
        g0[j] = bound + lift * smoothstep5(std::min(r / cfg.liftWidth, 1.0));
        if (g0[j] < bound - 1e-12)
            throw ConfigError("profile dips below its admissibility bound at r = " +
                              std::to_string(r));
    }
    g0[0] = 0.0;
    g0[nr] = kTwoPi;
    return g0;
}

PDESolution solve_pde(const std::vector<double>& g0, const RadialGrid& grid,
                      double blowThreshold, const std::vector<double>& sampleTimes,
                      double boundaryValue) {
    const int nr = radial_nodes(grid.dr);
    const double dr = grid.dr;
    const double dt = grid.dt;
    if (static_cast<int>(g0.size()) != nr + 1)
        throw ConfigError("initial profile size does not match the radial grid");
    if (!(dt > 0.0)) throw ConfigError("time step must be positive");
    if (dt > 0.25 * dr * dr * (1.0 + 1e-12))
        throw ConfigError("explicit scheme needs dt <= 0.25 dr^2");
    if (!(grid.tMax > 0.0)) throw ConfigError("tMax must be positive");
    if (std::fabs(g0.front()) > 1e-12) throw ConfigError("profile must vanish at the origin");
    if (std::fabs(g0.back() - boundaryValue) > 1e-9)
        throw ConfigError("profile does not meet the rim boundary value");
    if (!(blowThreshold > 0.0)) throw ConfigError("blow threshold must be positive");

    std::vector<double> req = sampleTimes;
    std::sort(req.begin(), req.end());
    req.erase(std::unique(req.begin(), req.end()), req.end());
    if (!req.empty() && req.front() < 0.0) throw ConfigError("snapshot times must be nonnegative");

    PDESolution out;
    out.nr = nr;
    out.dr = dr;

    std::vector<double> cur = g0, nxt(nr + 1);
    const std::int64_t maxSteps =
        static_cast<std::int64_t>(std::ceil(grid.tMax / dt - 1e-9));
    std::size_t k = 0;
    int confirmLeft = -1;  // >= 0 while a threshold crossing awaits confirmation
    double pending = 0.0;

    for (std::int64_t step = 0;; ++step) {
        const double t = step * dt;
        const double tr = (4.0 * cur[1] - cur[2]) / (2.0 * dr);
        out.traceTimes.push_back(t);
        out.trace.push_back(tr);

        while (k < req.size() && req[k] <= t + 0.5 * dt) {
            if (out.sampleTimes.empty() || out.sampleTimes.back() < t) {
                out.sampleTimes.push_back(t);
                out.g.insert(out.g.end(), cur.begin(), cur.end());
            }
            ++k;
        }

        bool rowBad = !std::isfinite(tr);
        if (!rowBad && (step & 255) == 0)
            for (int j = 1; j < nr && !rowBad; ++j) rowBad = !std::isfinite(cur[j]);
        if (rowBad) {
            if (confirmLeft >= 0) {  // diverged while confirming: blow-up is real
                out.blowUpTime = pending;
                out.coveredTime = t;
                return out;
            }
            throw InstabilityError("non-finite value at t = " + std::to_string(t));
        }

        if (confirmLeft >= 0) {
            if (tr < 0.5 * blowThreshold) {
                confirmLeft = -1;  // oscillation, not blow-up
            } else if (--confirmLeft == 0) {
                out.blowUpTime = pending;
                out.coveredTime = t;
                return out;
            }
        } else if (tr > blowThreshold) {
            pending = t;
            confirmLeft = 50;
        }

        if (step >= maxSteps) {
            out.coveredTime = t;
            return out;
        }

        nxt[0] = 0.0;
        nxt[nr] = boundaryValue;
        // Node nearest the origin uses the regularized limit operator 2 drr.
        nxt[1] = cur[1] + dt * 2.0 * (cur[2] - 2.0 * cur[1] + cur[0]) / (dr * dr);
        for (int j = 2; j < nr; ++j) {
            const double r = j * dr;
            const double lap = (cur[j + 1] - 2.0 * cur[j] + cur[j - 1]) / (dr * dr);
            const double adv = (cur[j + 1] - cur[j - 1]) / (2.0 * dr * r);
            const double rot = 0.5 * std::sin(2.0 * cur[j]) / (r * r);
            nxt[j] = cur[j] + dt * (lap + adv - rot);
        }
        std::swap(cur, nxt);
    }
}

std::array<double, 3> u_field(const PDESolution& pde, double t, const double* x) {
    check_time_domain(pde, t);
    const double r = std::hypot(x[0], x[1]);
    if (r < 1e-14) return {0.0, 0.0, 1.0};
    const double g = g_at(pde, t, r);
    const double s = std::sin(g);
    return {x[0] / r * s, x[1] / r * s, std::cos(g)};
}

void u_field_gradient(const PDESolution& pde, double t, const double* x, double* out) {
    check_time_domain(pde, t);
    const double h = 0.5 * pde.dr;
    for (int c = 0; c < 2; ++c) {
        double xp[2] = {x[0], x[1]};
        double xm[2] = {x[0], x[1]};
        xp[c] += h;
        xm[c] -= h;
        const auto up = u_field(pde, t, xp);
        const auto dn = u_field(pde, t, xm);
        for (int row = 0; row < 3; ++row) out[row * 2 + c] = (up[row] - dn[row]) / (2.0 * h);
    }
}

namespace {

// Frobenius gradient magnitude of the terminal field along the profile:
// |grad u|_F^2 = g_r^2 + sin(g)^2 / r^2, with the origin limit 2 g_r(0)^2.
double profile_gradient_sup(const std::vector<double>& g0, double dr) {
    const int nr = static_cast<int>(g0.size()) - 1;
    double sup = 0.0;
    for (int j = 0; j <= nr; ++j) {
        double gr;
        if (j == 0)
            gr = (4.0 * g0[1] - g0[2]) / (2.0 * dr);
        else if (j == nr)
            gr = (3.0 * g0[nr] - 4.0 * g0[nr - 1] + g0[nr - 2]) / (2.0 * dr);
        else
            gr = (g0[j + 1] - g0[j - 1]) / (2.0 * dr);
        double sq;
        if (j == 0) {
            sq = 2.0 * gr * gr;
        } else {
            const double r = j * dr;
            const double s = std::sin(g0[j]) / r;
            sq = gr * gr + s * s;
        }
        sup = std::max(sup, std::sqrt(sq));
    }
    return sup;
}

struct SupStats {
    double supZ = 0.0;
    double supYDev = 0.0;
    std::int64_t nodes = 0;
    std::int64_t pathsAbove = 0;
};

bool evaluable(const PDESolution& pde, double b) {
    if (b < 0.0 || b > pde.coveredTime) return false;
    if (pde.blowUpTime && b >= *pde.blowUpTime) return false;
    return true;
}

}  // namespace

CounterexampleReport verify_counterexample(const CounterexampleConfig& cfg, const TimeGrid& grid,
                                           std::int64_t paths, std::uint64_t seed,
                                           const RadialGrid& pdeGrid, double blowThreshold,
                                           std::int64_t residualPaths) {
    if (!(cfg.delta > 0.0)) throw ConfigError("delta must be positive");
    const double T = grid.horizon();
    if (cfg.delta > T) throw ConfigError("delta cannot exceed the horizon");
    if (paths < 1) throw ConfigError("need at least one path");

    CounterexampleReport rep;
    rep.delta = cfg.delta;
    rep.K = 4.0 * cfg.delta;
    rep.epsilon = cfg.epsilon;
    rep.lambda = cfg.lambda > 0.0 ? cfg.lambda : choose_lambda(cfg.epsilon);

    CounterexampleConfig resolved = cfg;
    resolved.lambda = rep.lambda;
    const std::vector<double> g0 = build_g0(resolved, pdeGrid.dr);
    rep.DXi = 1.02 * profile_gradient_sup(g0, pdeGrid.dr);
    rep.certificateR = smallness_radius(rep.DXi, 0.0, rep.K,
                                        [](double x) { return x + 0.5 * x * x; }, 1e3);

    const Model model = StoppedScaledBm{T, cfg.delta};
    const int nodes = grid.nodes();
    int act = nodes - 1;
    for (int i = 0; i < nodes; ++i)
        if (grid.t(i) >= T - cfg.delta - 1e-9) {
            act = i;
            break;
        }
    const int nAct = grid.steps() - act;

    // Residual refinement levels (coarse to fine) on the same window.
    std::vector<TimeGrid> rgrids;
    if (residualPaths > 0) {
        const int q = std::max(4, nAct / 4);
        for (int mult : {1, 2, 4})
            rgrids.push_back(TimeGrid::tail_refined(T, T - cfg.delta, 8, q * mult));
    }

    // One PDE run covering backward time [0, delta], sampled at every backward
    // node time any evaluation below will query.
    std::vector<double> req;
    for (int i = act; i < nodes; ++i) req.push_back(std::max(0.0, T - grid.t(i)));
    for (const TimeGrid& rg : rgrids)
        for (int i = 0; i < rg.nodes(); ++i)
            if (rg.t(i) >= T - cfg.delta - 1e-9) req.push_back(std::max(0.0, T - rg.t(i)));

    RadialGrid pg = pdeGrid;
    if (!(pg.dt > 0.0)) pg.dt = 0.2 * pg.dr * pg.dr;
    pg.dt = std::min(pg.dt, cfg.delta / 8.0);
    pg.tMax = cfg.delta;
    const PDESolution pde = solve_pde(g0, pg, blowThreshold, req);

    rep.blowUpTime = pde.blowUpTime;
    rep.windowCovered = !pde.blowUpTime && pde.coveredTime >= cfg.delta - 0.51 * pg.dt;

    // Streamed sup statistics over the ensemble: paths are re-derived one at a
    // time, never stored ensemble-wide.
    const int nb = par::block_count(paths);
    std::vector<SupStats> part(nb);
    par::for_blocks(paths, [&](int b, std::int64_t lo, std::int64_t hi) {
        std::vector<double> buf(static_cast<std::size_t>(nodes) * 2);
        double zg[6];
        SupStats& st = part[b];
        for (std::int64_t p = lo; p < hi; ++p) {
            const int stop = simulate_path(model, grid, seed, static_cast<int>(p), buf.data());
            double maxZp = 0.0;
            for (int i = act; i < nodes; ++i) {
                const double bwd = std::max(0.0, T - grid.t(i));
                if (!evaluable(pde, bwd)) continue;
                const double* xi = buf.data() + static_cast<std::size_t>(i) * 2;
                const auto y = u_field(pde, bwd, xi);
                const double dev =
                    std::fabs(std::sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) - 1.0);
                st.supYDev = std::max(st.supYDev, dev);
                st.nodes++;
                if (i < nodes - 1 && i < stop) {
                    u_field_gradient(pde, bwd, xi, zg);
                    double fr = 0.0;
                    for (int e = 0; e < 6; ++e) fr += zg[e] * zg[e];
                    fr = std::sqrt(fr);
                    st.supZ = std::max(st.supZ, fr);
                    maxZp = std::max(maxZp, fr);
                }
            }
            if (maxZp >= rep.zLevel) st.pathsAbove++;
        }
    });
    std::int64_t above = 0;
    for (const SupStats& st : part) {
        rep.supZ = std::max(rep.supZ, st.supZ);
        rep.supYDeviation = std::max(rep.supYDeviation, st.supYDev);
        rep.nodesEvaluated += st.nodes;
        above += st.pathsAbove;
    }
    rep.pathsEvaluated = paths;
    rep.fracZAbove = static_cast<double>(above) / static_cast<double>(paths);
    rep.certificateRegime = rep.certificateR && rep.supZ <= 1.1 * *rep.certificateR;

    // One-step defect of the assembled (Y, Z) across dt refinements. The
    // second-moment control variate removes the leading martingale noise so
    // the per-step signed mean isolates the discretization bias.
    for (const TimeGrid& rg : rgrids) {
        const int rn = rg.nodes();
        int ractNode = rn - 1;
        for (int i = 0; i < rn; ++i)
            if (rg.t(i) >= T - cfg.delta - 1e-9) {
                ractNode = i;
                break;
            }
        const int steps = rg.steps();
        const double dtl = rg.dt(steps - 1);  // uniform inside the window
        const int rnb = par::block_count(residualPaths);
        std::vector<std::vector<double>> sums(rnb, std::vector<double>(steps * 3, 0.0));
        std::vector<std::vector<std::int64_t>> cnts(rnb,
                                                    std::vector<std::int64_t>(steps, 0));
        par::for_blocks(residualPaths, [&](int b, std::int64_t lo, std::int64_t hi) {
            std::vector<double> buf(static_cast<std::size_t>(rn) * 2);
            double zg[6], hess[12], gp[6], gm[6];
            for (std::int64_t p = lo; p < hi; ++p) {
                const int stop = simulate_path(model, rg, seed, static_cast<int>(p), buf.data());
                for (int i = ractNode; i < steps; ++i) {
                    if (stop <= i + 1) break;  // exclude the projection step
                    const double b0 = std::max(0.0, T - rg.t(i));
                    const double b1 = std::max(0.0, T - rg.t(i + 1));
                    if (!evaluable(pde, b0) || !evaluable(pde, b1)) continue;
                    const double* x0 = buf.data() + static_cast<std::size_t>(i) * 2;
                    const double* x1 = buf.data() + static_cast<std::size_t>(i + 1) * 2;
                    const auto y0 = u_field(pde, b0, x0);
                    const auto y1 = u_field(pde, b1, x1);
                    u_field_gradient(pde, b0, x0, zg);
                    // Hessian of each field component by differencing the
                    // gradient; only the symmetric part matters.
                    const double h = 0.5 * pde.dr;
                    for (int c = 0; c < 2; ++c) {
                        double xp[2] = {x0[0], x0[1]};
                        double xm[2] = {x0[0], x0[1]};
                        xp[c] += h;
                        xm[c] -= h;
                        u_field_gradient(pde, b0, xp, gp);
                        u_field_gradient(pde, b0, xm, gm);
                        for (int row = 0; row < 3; ++row)
                            for (int cc = 0; cc < 2; ++cc)
                                hess[(row * 2 + cc) * 2 + c] =
                                    (gp[row * 2 + cc] - gm[row * 2 + cc]) / (2.0 * h);
                    }
                    const double dM[2] = {x1[0] - x0[0], x1[1] - x0[1]};
                    const double dA = 4.0 * dtl;
                    double zf = 0.0;
                    for (int e = 0; e < 6; ++e) zf += zg[e] * zg[e];
                    const double ynorm = std::sqrt(y0[0] * y0[0] + y0[1] * y0[1] + y0[2] * y0[2]);
                    const double scale = 0.25 * zf / std::max(ynorm, 1.0);
                    for (int row = 0; row < 3; ++row) {
                        double d = y1[row] - y0[row] + scale * y0[row] * dA;
                        d -= zg[row * 2 + 0] * dM[0] + zg[row * 2 + 1] * dM[1];
                        for (int a = 0; a < 2; ++a)
                            for (int bb = 0; bb < 2; ++bb) {
                                const double m2 =
                                    dM[a] * dM[bb] - (a == bb ? 2.0 * dtl : 0.0);
                                d -= 0.5 * hess[(row * 2 + a) * 2 + bb] * m2;
                            }
                        sums[b][static_cast<std::size_t>(i) * 3 + row] += d;
                    }
                    cnts[b][static_cast<std::size_t>(i)]++;
                }
            }
        });
        double worst = 0.0;
        const std::int64_t minCount = std::max<std::int64_t>(100, residualPaths / 10);
        for (int i = ractNode; i < steps; ++i) {
            std::int64_t c = 0;
            double v[3] = {0.0, 0.0, 0.0};
            for (int b = 0; b < rnb; ++b) {
                c += cnts[b][static_cast<std::size_t>(i)];
                for (int row = 0; row < 3; ++row)
                    v[row] += sums[b][static_cast<std::size_t>(i) * 3 + row];
            }
            if (c < minCount) continue;
            const double norm =
                std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / static_cast<double>(c);
            worst = std::max(worst, norm);
        }
        rep.residualDts.push_back(dtl);
        rep.residuals.push_back(worst);
    }
    if (rep.residuals.size() >= 2) {
        double minRatio = std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l + 1 < rep.residuals.size(); ++l) {
            if (rep.residuals[l + 1] <= 0.0) continue;
            minRatio = std::min(minRatio, rep.residuals[l] / rep.residuals[l + 1]);
        }
        if (std::isfinite(minRatio)) rep.residualDecayMinRatio = minRatio;
    }
    return rep;
}

void write_trace_csv(const PDESolution& pde, const std::string& path, int thinning) {
    if (thinning < 1) throw ConfigError("thinning must be at least 1");
    CsvWriter w(path, {"t", "originDeriv"});
    for (std::size_t i = 0; i < pde.trace.size(); i += static_cast<std::size_t>(thinning)) {
        w.cell(pde.traceTimes[i]);
        w.cell(pde.trace[i]);
        w.end_row();
    }
}

void write_snapshots_csv(const PDESolution& pde, const std::string& path) {
    CsvWriter w(path, {"t", "r", "g"});
    for (std::size_t s = 0; s < pde.sampleTimes.size(); ++s) {
        for (int j = 0; j <= pde.nr; ++j) {
            w.cell(pde.sampleTimes[s]);
            w.cell(j * pde.dr);
            w.cell(pde.g[s * (pde.nr + 1) + j]);
            w.end_row();
        }
    }
}

}  // namespace bsdelab
