#include "bsdelab/nabla.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

namespace {

void validate_bump(const Ensemble& ens, const BumpSpec& bump) {
    if (bump.uIndex < 0 || bump.uIndex >= ens.grid().nodes())
        throw ConfigError("bump uIndex outside the grid");
    if (static_cast<int>(bump.e.size()) != ens.dim())
        throw ConfigError("bump direction length differs from the model dimension");
    double nrm = 0.0;
    for (double v : bump.e) nrm += v * v;
    if (std::fabs(std::sqrt(nrm) - 1.0) > 1e-9)
        throw ConfigError("bump direction must be a unit vector");
    if (bump.h == 0.0) throw ConfigError("bump size h must be nonzero");
}

}  // namespace

double default_bump_size(const Ensemble& ens) { return 1e-4 * std::sqrt(ens.clock_bound()); }

NablaResult numeric_nabla(const Ensemble& ens, const DiscreteSolution& base,
                          const TerminalFunctional& xi, const Driver& f,
                          const RegressionBasis& basis, const BumpSpec& bump, bool central) {
    validate_bump(ens, bump);
    const int P = base.paths;
    const int nodes = base.nodes;
    const int n = base.dim;

    NablaResult out;
    out.paths = P;
    out.nodes = nodes;
    out.dim = n;
    out.uIndex = bump.uIndex;
    out.h = bump.h;
    out.dY.assign(static_cast<std::size_t>(P) * nodes, 0.0);
    out.dZ.assign(static_cast<std::size_t>(P) * (nodes - 1) * n, 0.0);

    const Ensemble up = bump_ensemble(ens, bump.uIndex, bump.e, bump.h);
    const DiscreteSolution solUp = replay(up, base, xi, f, basis);

    const DiscreteSolution* lo = &base;
    std::unique_ptr<DiscreteSolution> down;
    if (central) {
        const Ensemble dn = bump_ensemble(ens, bump.uIndex, bump.e, -bump.h);
        down = std::make_unique<DiscreteSolution>(replay(dn, base, xi, f, basis));
        lo = down.get();
    }
    const double denom = central ? 2.0 * bump.h : bump.h;

    par::for_blocks(P, [&](int, int lo_, int hi_) {
        for (int p = lo_; p < hi_; ++p) {
            for (int i = 0; i < nodes; ++i)
                out.dY[static_cast<std::size_t>(p) * nodes + i] =
                    (solUp.y(p, i) - lo->y(p, i)) / denom;
            for (int i = 0; i < nodes - 1; ++i)
                for (int c = 0; c < n; ++c)
                    out.dZ[(static_cast<std::size_t>(p) * (nodes - 1) + i) * n + c] =
                        (solUp.z(p, i, c) - lo->z(p, i, c)) / denom;
        }
    });
    return out;
}

LinearCoeffs linearized_coeffs(const Ensemble& ens, const DiscreteSolution& base,
                               const Driver& f, const BumpSpec& bump, double fdStep) {
    validate_bump(ens, bump);
    if (!(fdStep > 0.0)) throw ConfigError("fd step must be positive");
    if (base.paths != ens.paths() || base.nodes != ens.grid().nodes() || base.dim != ens.dim())
        throw ConfigError("base solution was not produced on this ensemble");

    const int P = base.paths;
    const int N = base.nodes - 1;
    const int n = base.dim;
    const double ms = ens.m_scale();

    LinearCoeffs co;
    co.paths = P;
    co.steps = N;
    co.dim = n;
    co.uIndex = bump.uIndex;
    co.zeta.assign(static_cast<std::size_t>(P) * N, 0.0);
    co.eta.assign(static_cast<std::size_t>(P) * N, 0.0);
    co.theta.assign(static_cast<std::size_t>(P) * N * n, 0.0);

    const Ensemble up = bump_ensemble(ens, bump.uIndex, bump.e, bump.h);

    const int nb = par::block_count(P);
    std::vector<std::int64_t> bad(nb, -1);
    par::for_blocks(P, [&](int b, int lo, int hi) {
        double zrow[16];
        double zpert[16];
        for (int p = lo; p < hi; ++p) {
            const PathView pv{&ens, p};
            const PathView pvUp{&up, p};
            for (int i = bump.uIndex; i < N; ++i) {
                const std::size_t at = static_cast<std::size_t>(p) * N + i;
                const double y = base.y(p, i);
                for (int c = 0; c < n; ++c) zrow[c] = base.z(p, i, c) * ms;
                const double f0 = f.eval(i, pv, y, zrow);
                co.zeta[at] = (f.eval(i, pvUp, y, zrow) - f0) / bump.h;
                co.eta[at] =
                    (f.eval(i, pv, y + fdStep, zrow) - f.eval(i, pv, y - fdStep, zrow)) /
                    (2.0 * fdStep);
                for (int c = 0; c < n; ++c) {
                    for (int cc = 0; cc < n; ++cc) zpert[cc] = zrow[cc];
                    zpert[c] = zrow[c] + fdStep;
                    const double fp = f.eval(i, pv, y, zpert);
                    zpert[c] = zrow[c] - fdStep;
                    const double fm = f.eval(i, pv, y, zpert);
                    co.theta[at * n + c] = (fp - fm) / (2.0 * fdStep);
                }
                bool ok = std::isfinite(co.zeta[at]) && std::isfinite(co.eta[at]);
                for (int c = 0; c < n; ++c) ok = ok && std::isfinite(co.theta[at * n + c]);
                if (!ok && bad[b] < 0) bad[b] = static_cast<std::int64_t>(at);
            }
        }
    });
    for (int b = 0; b < nb; ++b) {
        if (bad[b] >= 0) {
            const int p = static_cast<int>(bad[b] / N);
            const int i = static_cast<int>(bad[b] % N);
            throw DivergenceError("linearized coefficient not finite at step " +
                                  std::to_string(i) + ", path " + std::to_string(p));
        }
    }
    return co;
}

DiscreteSolution solve_differentiated(const Ensemble& ens, const LinearCoeffs& coeffs,
                                      std::vector<double> Xi, const RegressionBasis& basis,
                                      SolveOptions opts) {
    if (coeffs.paths != ens.paths() || coeffs.steps != ens.grid().steps() ||
        coeffs.dim != ens.dim())
        throw ConfigError("coefficient arrays do not match the ensemble shape");
    if (static_cast<int>(Xi.size()) != ens.paths())
        throw ConfigError("terminal derivative values: need one per path");

    auto xiValues = std::make_shared<std::vector<double>>(std::move(Xi));
    TerminalFunctional xi;
    xi.eval = [xiValues](const PathView& pv) { return (*xiValues)[pv.path]; };
    xi.DXi = 0.0;

    double cy = par::max(coeffs.paths, [&](int p) {
        double m = 0.0;
        for (int i = 0; i < coeffs.steps; ++i) m = std::max(m, std::fabs(coeffs.etaAt(p, i)));
        return m;
    });
    double cz = par::max(coeffs.paths, [&](int p) {
        double m = 0.0;
        for (int i = 0; i < coeffs.steps; ++i)
            m = std::max(m, row_norm(coeffs.thetaAt(p, i), coeffs.dim));
        return m;
    });

    Driver g;
    g.kind = Regularity::Lipschitz;
    g.Cy = cy;
    g.Cz = cz;
    const LinearCoeffs* co = &coeffs;
    g.eval = [co](int step, const PathView& pv, double y, const double* z) {
        double v = co->zetaAt(pv.path, step) + co->etaAt(pv.path, step) * y;
        const double* th = co->thetaAt(pv.path, step);
        for (int c = 0; c < co->dim; ++c) v += th[c] * z[c];
        return v;
    };

    opts.startNode = coeffs.uIndex;
    if (opts.startNode >= ens.grid().steps()) opts.startNode = ens.grid().steps() - 1;
    return solve(ens, xi, g, basis, opts);
}

DeltaHedgeReport delta_hedge_check(const Ensemble& ens, const TerminalFunctional& xi,
                                   const Driver& f, const RegressionBasis& basis,
                                   const SolveOptions& opts, const std::vector<BumpSpec>& bumps) {
    if (bumps.empty()) throw ConfigError("delta_hedge_check needs at least one bump");
    for (const BumpSpec& b : bumps) {
        validate_bump(ens, b);
        if (b.uIndex >= ens.grid().steps())
            throw ConfigError("delta hedge bump instant must precede the horizon (no Z there)");
    }

    const DiscreteSolution base = solve(ens, xi, f, basis, opts);
    const int n = ens.dim();

    DeltaHedgeReport rep;
    rep.tolerance = std::max(1e-2, 20.0 * std::fabs(bumps.front().h));
    rep.pass = true;

    for (const BumpSpec& bump : bumps) {
        const NablaResult q = numeric_nabla(ens, base, xi, f, basis, bump);
        const int u = bump.uIndex;

        int direction = 0;
        for (int c = 0; c < n; ++c)
            if (std::fabs(bump.e[c]) > std::fabs(bump.e[direction])) direction = c;

        const int nb = par::block_count(ens.paths());
        std::vector<double> sumPart(nb, 0.0), maxPart(nb, 0.0);
        std::vector<std::int64_t> cntPart(nb, 0), nearPart(nb, 0);
        par::for_blocks(ens.paths(), [&](int b, int lo, int hi) {
            for (int p = lo; p < hi; ++p) {
                if (ens.stop_node(p) <= u + 1) {
                    nearPart[b]++;
                    continue;
                }
                double zproj = 0.0;
                for (int c = 0; c < n; ++c) zproj += base.z(p, u, c) * bump.e[c];
                const double d = std::fabs(q.y(p, u) - zproj);
                sumPart[b] += d;
                maxPart[b] = std::max(maxPart[b], d);
                cntPart[b]++;
            }
        });

        DeltaHedgeEntry e;
        e.uIndex = u;
        e.direction = direction;
        for (int b = 0; b < nb; ++b) {
            e.pathsCompared += cntPart[b];
            e.pathsNearStop += nearPart[b];
            e.meanAbs += sumPart[b];
            e.maxAbs = std::max(e.maxAbs, maxPart[b]);
        }
        if (e.pathsCompared > 0) e.meanAbs /= static_cast<double>(e.pathsCompared);
        e.pass = e.meanAbs <= rep.tolerance;
        rep.maxMeanAbs = std::max(rep.maxMeanAbs, e.meanAbs);
        rep.pass = rep.pass && e.pass;
        rep.entries.push_back(e);
    }
    return rep;
}

void write_delta_hedge_csv(const DeltaHedgeReport& rep, const std::string& path) {
    CsvWriter w(path, {"uIndex", "direction", "pathsCompared", "pathsNearStop", "meanAbs",
                       "maxAbs", "pass"});
    for (const DeltaHedgeEntry& e : rep.entries) {
        w.cell(e.uIndex);
        w.cell(e.direction);
        w.cell(e.pathsCompared);
        w.cell(e.pathsNearStop);
        w.cell(e.meanAbs);
        w.cell(e.maxAbs);
        w.cell(std::string(e.pass ? "true" : "false"));
        w.end_row();
    }
}

}  // namespace bsdelab
