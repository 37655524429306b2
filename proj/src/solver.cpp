#include "bsdelab/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

namespace {

// Paths ordered so that the live rows of step i are a prefix: counting sort by
// stopping node, latest stoppers first, path order within a bucket.
struct RowIndex {
    std::vector<int> sorted;     // path ids
    std::vector<int> liveCount;  // per step: #paths with stopNode > step
};

RowIndex build_row_index(const Ensemble& ens) {
    const int P = ens.paths();
    const int nodes = ens.grid().nodes();
    RowIndex idx;
    idx.sorted.resize(P);
    idx.liveCount.assign(nodes - 1, 0);
    std::vector<int> bucket(nodes + 1, 0);
    for (int p = 0; p < P; ++p) bucket[ens.stop_node(p)]++;
    std::vector<int> offset(nodes + 1, 0);
    int acc = 0;
    for (int s = nodes; s >= 0; --s) {
        offset[s] = acc;
        acc += bucket[s];
    }
    std::vector<int> cursor = offset;
    for (int p = 0; p < P; ++p) idx.sorted[cursor[ens.stop_node(p)]++] = p;
    for (int i = 0; i < nodes - 1; ++i) {
        int live = 0;
        for (int s = nodes; s > i; --s) live += bucket[s];
        idx.liveCount[i] = live;
    }
    return idx;
}

void check_rho_monotone(const Driver& f) {
    if (f.kind == Regularity::Lipschitz || !f.rho) return;
    double prev = f.rho(0.0);
    for (int k = 1; k <= 8; ++k) {
        double cur = f.rho(k * 0.5);
        if (!(cur >= prev - 1e-12))
            throw ConfigError("driver rho must be nondecreasing (violated near " +
                              std::to_string(k * 0.5) + ")");
        prev = cur;
    }
}

struct RunScratch {
    std::vector<double> feats;  // rows x k
    std::vector<double> preds;  // rows
};

DiscreteSolution run(const Ensemble& ens, const TerminalFunctional& xi, const Driver& f,
                     const RegressionBasis& basis, const SolveOptions& opts,
                     const DiscreteSolution* frozenSrc) {
    const TimeGrid& grid = ens.grid();
    const int P = ens.paths();
    const int N = grid.steps();
    const int nodes = grid.nodes();
    const int n = ens.dim();
    const double ms = ens.m_scale();
    const int k = basis.count;

    if (!xi.eval) throw ConfigError("terminal functional has no evaluator");
    if (!f.eval) throw ConfigError("driver has no evaluator");
    if (k > 0 && !basis.fill) throw ConfigError("basis.count > 0 but basis.fill is empty");
    if (k < 0) throw ConfigError("basis.count must be nonnegative");
    if (opts.picardIters < 1) throw ConfigError("picardIters must be >= 1");
    if (opts.startNode < 0 || opts.startNode >= N)
        throw ConfigError("startNode must lie in [0, steps)");
    if (opts.yClamp && !(*opts.yClamp > 0.0)) throw ConfigError("yClamp must be positive");
    check_rho_monotone(f);
    if (opts.implicitY) {
        double maxDa = 0.0;
        for (int i = 0; i < N; ++i) {
            double da = ens.dA(0, i);
            for (int p = 0; p < std::min(P, 64); ++p) da = std::max(da, ens.dA(p, i));
            maxDa = std::max(maxDa, da);
        }
        if (f.Cy * maxDa >= 1.0)
            throw ConfigError("implicit y-update needs Cy * max dA < 1 (got " +
                              std::to_string(f.Cy * maxDa) + ")");
    }

    DiscreteSolution sol;
    sol.paths = P;
    sol.nodes = nodes;
    sol.dim = n;
    sol.opts = opts;
    sol.Y.assign(static_cast<std::size_t>(P) * nodes, 0.0);
    sol.Z.assign(static_cast<std::size_t>(P) * N * n, 0.0);
    sol.residual.assign(N, 0.0);
    sol.diagnostics.assign(N, StepDiagnostics{});
    sol.sweepResidual.assign(opts.picardIters, 0.0);
    sol.frozen.assign(opts.picardIters, std::vector<FrozenStep>(N));

    const RowIndex rowIdx = build_row_index(ens);

    // Terminal values, exact per path.
    par::for_blocks(P, [&](int, int lo, int hi) {
        for (int p = lo; p < hi; ++p)
            sol.Y[static_cast<std::size_t>(p) * nodes + N] = xi.eval(PathView{&ens, p});
    });
    for (int p = 0; p < P; ++p) {
        double v = sol.Y[static_cast<std::size_t>(p) * nodes + N];
        if (!std::isfinite(v))
            throw DivergenceError("terminal value not finite on path " + std::to_string(p));
        if (xi.CXi && std::fabs(v) > *xi.CXi * (1.0 + 1e-9) + 1e-12)
            throw ConfigError("terminal value exceeds declared CXi on path " + std::to_string(p));
    }

    RunScratch scratch;
    if (k > 0) scratch.feats.resize(static_cast<std::size_t>(P) * k);
    scratch.preds.resize(P);
    // Previous sweep's Z m per live row, captured before the refit overwrites it.
    std::vector<double> zmPrev(static_cast<std::size_t>(P) * n, 0.0);

    int implicitItersUsed = 0;

    for (int sweep = 0; sweep < opts.picardIters; ++sweep) {
        const bool first = (sweep == 0);
        double sweepResSum = 0.0;
        int sweepResSteps = 0;

        for (int i = N - 1; i >= opts.startNode; --i) {
            const int rows = rowIdx.liveCount[i];
            const std::size_t yOff = static_cast<std::size_t>(i);
            FrozenStep& fz = sol.frozen[sweep][i];

            // Frozen paths copy forward; their Z stays zero.
            par::for_blocks(P - rows, [&](int, int lo, int hi) {
                for (int r = rows + lo; r < rows + hi; ++r) {
                    const int p = rowIdx.sorted[r];
                    std::size_t base = static_cast<std::size_t>(p) * nodes;
                    sol.Y[base + yOff] = sol.Y[base + yOff + 1];
                    std::size_t zb = (static_cast<std::size_t>(p) * N + i) * n;
                    for (int c = 0; c < n; ++c) sol.Z[zb + c] = 0.0;
                }
            });
            if (rows == 0) continue;

            const double da = ens.dA(rowIdx.sorted[0], i);
            const bool live = da > 0.0;

            // Features for the live rows, row r <-> path sorted[r].
            if (k > 0) {
                par::for_blocks(rows, [&](int, int lo, int hi) {
                    for (int r = lo; r < hi; ++r)
                        basis.fill(PathView{&ens, rowIdx.sorted[r]}, i,
                                   scratch.feats.data() + static_cast<std::size_t>(r) * k);
                });
            }

            const FrozenStep* src = frozenSrc ? &frozenSrc->frozen[sweep][i] : nullptr;
            if (src && !src->hasFit) {
                // The base run saw no live rows here; degrade to copy-forward.
                par::for_blocks(rows, [&](int, int lo, int hi) {
                    for (int r = lo; r < hi; ++r) {
                        const int p = rowIdx.sorted[r];
                        std::size_t base = static_cast<std::size_t>(p) * nodes;
                        sol.Y[base + yOff] = sol.Y[base + yOff + 1];
                        std::size_t zb = (static_cast<std::size_t>(p) * N + i) * n;
                        for (int c = 0; c < n; ++c) sol.Z[zb + c] = 0.0;
                    }
                });
                fz = *src;
                continue;
            }

            std::optional<StepFitter> fitter;
            if (!src) {
                fitter.emplace(scratch.feats.data(), rows, k, basis.ridge);
                fz.hasFit = true;
            }

            auto targetY = [&](std::int64_t r) {
                return sol.Y[static_cast<std::size_t>(rowIdx.sorted[r]) * nodes + yOff + 1];
            };

            const FittedFn yFit = src ? src->yFit : fitter->solve_for(targetY);
            if (!src) fz.yFit = yFit;

            par::for_blocks(rows, [&](int, int lo, int hi) {
                for (int r = lo; r < hi; ++r)
                    scratch.preds[r] =
                        yFit.predict(scratch.feats.data() + static_cast<std::size_t>(r) * k);
            });

            if (!first && live) {
                par::for_blocks(rows, [&](int, int lo, int hi) {
                    for (int r = lo; r < hi; ++r) {
                        const std::size_t zb =
                            (static_cast<std::size_t>(rowIdx.sorted[r]) * N + i) * n;
                        for (int c = 0; c < n; ++c)
                            zmPrev[static_cast<std::size_t>(r) * n + c] = sol.Z[zb + c] * ms;
                    }
                });
            }

            // Z from the covariation of the centered target with dM. The raw
            // fit estimates E_i[(Y_{i+1}-E_i Y_{i+1}) dM_c] = Z_c ms^2 da.
            if (live) {
                const double zScale = 1.0 / (ms * ms * da);
                if (src && static_cast<int>(src->zFit.size()) != n)
                    throw ConfigError("frozen step " + std::to_string(i) +
                                      " has no Z coefficients; replay grid mismatch");
                for (int c = 0; c < n; ++c) {
                    FittedFn zf;
                    if (src) {
                        zf = src->zFit[c];
                    } else {
                        zf = fitter->solve_for([&](std::int64_t r) {
                            const int p = rowIdx.sorted[r];
                            return (targetY(r) - scratch.preds[r]) * ens.increment(p, i, c);
                        });
                        fz.zFit.push_back(zf);
                    }
                    par::for_blocks(rows, [&](int, int lo, int hi) {
                        for (int r = lo; r < hi; ++r) {
                            const int p = rowIdx.sorted[r];
                            sol.Z[(static_cast<std::size_t>(p) * N + i) * n + c] =
                                zf.predict(scratch.feats.data() +
                                           static_cast<std::size_t>(r) * k) *
                                zScale;
                        }
                    });
                }
            } else {
                par::for_blocks(rows, [&](int, int lo, int hi) {
                    for (int r = lo; r < hi; ++r) {
                        std::size_t zb = (static_cast<std::size_t>(rowIdx.sorted[r]) * N + i) * n;
                        for (int c = 0; c < n; ++c) sol.Z[zb + c] = 0.0;
                    }
                });
            }
            if (src) fz = *src;

            // Driver, update, and one-step defect in a single pass. For
            // sweeps past the first, Y and Z at node i still hold the
            // previous sweep's values until overwritten below.
            const int nb = par::block_count(rows);
            std::vector<double> resPart(nb, 0.0);
            std::vector<int> itersPart(nb, 0);
            std::vector<int> badPart(nb, -1);
            par::for_blocks(rows, [&](int b, int lo, int hi) {
                double zArg[16];
                double acc = 0.0;
                int itMax = 0;
                for (int r = lo; r < hi; ++r) {
                    const int p = rowIdx.sorted[r];
                    const std::size_t yb = static_cast<std::size_t>(p) * nodes;
                    const std::size_t zb = (static_cast<std::size_t>(p) * N + i) * n;
                    const PathView pv{&ens, p};
                    double fval = 0.0;
                    if (live) {
                        if (first) {
                            for (int c = 0; c < n; ++c) zArg[c] = sol.Z[zb + c] * ms;
                            if (opts.implicitY) {
                                double y = scratch.preds[r];
                                int it = 0;
                                for (; it < opts.implicitMaxIters; ++it) {
                                    double yn =
                                        scratch.preds[r] + f.eval(i, pv, y, zArg) * da;
                                    if (std::fabs(yn - y) <= opts.implicitTol) {
                                        y = yn;
                                        break;
                                    }
                                    y = yn;
                                }
                                itMax = std::max(itMax, it + 1);
                                fval = f.eval(i, pv, y, zArg);
                            } else {
                                fval = f.eval(i, pv, scratch.preds[r], zArg);
                            }
                        } else {
                            // Previous sweep's node-i arguments: Y is not yet
                            // overwritten, Z m was captured into zmPrev.
                            fval = f.eval(i, pv, sol.Y[yb + yOff],
                                          zmPrev.data() + static_cast<std::size_t>(r) * n);
                        }
                    }
                    double yNew = scratch.preds[r] + fval * da;
                    if (opts.yClamp) yNew = std::clamp(yNew, -*opts.yClamp, *opts.yClamp);
                    double defect = yNew - sol.Y[yb + yOff + 1] - fval * da;
                    for (int c = 0; c < n; ++c)
                        defect += sol.Z[zb + c] * ens.increment(p, i, c);
                    acc += std::fabs(defect);
                    bool ok = std::isfinite(yNew);
                    for (int c = 0; c < n; ++c) ok = ok && std::isfinite(sol.Z[zb + c]);
                    if (!ok && badPart[b] < 0) badPart[b] = p;
                    sol.Y[yb + yOff] = yNew;
                }
                resPart[b] = acc;
                itersPart[b] = itMax;
            });
            for (int b = 0; b < nb; ++b) {
                if (badPart[b] >= 0)
                    throw DivergenceError("solution not finite at step " + std::to_string(i) +
                                          ", sweep " + std::to_string(sweep + 1) + ", path " +
                                          std::to_string(badPart[b]));
                implicitItersUsed = std::max(implicitItersUsed, itersPart[b]);
            }
            double res = 0.0;
            for (int b = 0; b < nb; ++b) res += resPart[b];
            res /= rows;
            sol.residual[i] = res;
            sweepResSum += res;
            sweepResSteps++;
            if (!src && fitter) {
                sol.diagnostics[i].condition = fitter->condition();
                sol.diagnostics[i].droppedColumns = fitter->dropped_columns();
                sol.diagnostics[i].rows = rows;
            } else {
                sol.diagnostics[i].rows = rows;
            }
        }
        sol.sweepResidual[sweep] = sweepResSteps > 0 ? sweepResSum / sweepResSteps : 0.0;
    }
    sol.picardIterationsUsed = std::max(1, implicitItersUsed);
    return sol;
}

}  // namespace

DiscreteSolution solve(const Ensemble& ens, const TerminalFunctional& xi, const Driver& f,
                       const RegressionBasis& basis, const SolveOptions& opts) {
    return run(ens, xi, f, basis, opts, nullptr);
}

DiscreteSolution replay(const Ensemble& ens, const DiscreteSolution& base,
                        const TerminalFunctional& xi, const Driver& f,
                        const RegressionBasis& basis) {
    if (ens.paths() != base.paths || ens.grid().nodes() != base.nodes || ens.dim() != base.dim)
        throw ConfigError("replay ensemble shape differs from the base solution");
    if (static_cast<int>(base.frozen.size()) != base.opts.picardIters)
        throw ConfigError("base solution carries no frozen regression coefficients");
    return run(ens, xi, f, basis, base.opts, &base);
}

void write_solution_csv(const DiscreteSolution& sol, const Ensemble& ens,
                        const std::string& path) {
    std::vector<std::string> header = {"path", "time", "Y"};
    for (int c = 0; c < sol.dim; ++c) header.push_back("Z" + std::to_string(c + 1));
    header.push_back("residual");
    CsvWriter w(path, header);
    for (int p = 0; p < sol.paths; ++p) {
        for (int i = 0; i < sol.nodes; ++i) {
            w.cell(static_cast<std::int64_t>(p));
            w.cell(ens.grid().t(i));
            w.cell(sol.y(p, i));
            for (int c = 0; c < sol.dim; ++c)
                w.cell(i < sol.nodes - 1 ? sol.z(p, i, c) : 0.0);
            w.cell(i < sol.nodes - 1 ? sol.residual[i] : 0.0);
            w.end_row();
        }
    }
}

}  // namespace bsdelab
