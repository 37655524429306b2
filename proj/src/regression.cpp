#include "bsdelab/regression.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

RegressionBasis polynomial_basis(int n, int degree, double ridge) {
    if (n < 1) throw ConfigError("basis: dimension must be >= 1");
    if (degree < 1) throw ConfigError("basis.degree: must be >= 1");
    if (ridge < 0.0) throw ConfigError("basis.ridge: must be >= 0");
    int count = n * degree;
    if (degree >= 2) count += n * (n - 1) / 2;
    RegressionBasis b;
    b.count = count;
    b.ridge = ridge;
    b.fill = [n, degree](const PathView& path, int node, double* out) {
        int k = 0;
        for (int c = 0; c < n; ++c) {
            const double x = path.value(node, c);
            double p = 1.0;
            for (int d = 1; d <= degree; ++d) {
                p *= x;
                out[k++] = p;
            }
        }
        if (degree >= 2)
            for (int a = 0; a < n; ++a)
                for (int c = a + 1; c < n; ++c)
                    out[k++] = path.value(node, a) * path.value(node, c);
    };
    return b;
}

RegressionBasis with_running_max(RegressionBasis base) {
    RegressionBasis b;
    b.count = base.count + 1;
    b.ridge = base.ridge;
    b.fill = [inner = std::move(base)](const PathView& path, int node, double* out) {
        inner.fill(path, node, out);
        double m = path.value(0, 0);
        for (int j = 1; j <= node; ++j) m = std::max(m, path.value(j, 0));
        out[inner.count] = m;
    };
    return b;
}

RegressionBasis with_restrict_increments(RegressionBasis base, int k) {
    if (k < 1) throw ConfigError("basis.restrictK: must be >= 1");
    RegressionBasis b;
    b.count = base.count + k;
    b.ridge = base.ridge;
    b.fill = [inner = std::move(base), k](const PathView& path, int node, double* out) {
        inner.fill(path, node, out);
        const TimeGrid& grid = path.ens->grid();
        const double T = grid.horizon();
        const double tNow = grid.t(node);
        double prev = path.value(0, 0);
        int prevNode = 0;
        for (int j = 1; j <= k; ++j) {
            const double tj = T * static_cast<double>(j) / k;
            double a = 0.0;
            if (tj <= tNow + 1e-9 * std::max(1.0, T)) {
                int gi = prevNode;
                while (gi < grid.nodes() - 1 && grid.t(gi) < tj - 1e-9 * std::max(1.0, T)) ++gi;
                a = path.value(gi, 0) - prev;
                prev = path.value(gi, 0);
                prevNode = gi;
            }
            out[inner.count + j - 1] = a;
        }
    };
    return b;
}

StepFitter::StepFitter(const double* featureRows, std::int64_t rows, int k, double ridge)
    : feats_(featureRows), rows_(rows), k_(k), ridge_(ridge) {
    if (rows < 1) throw RegressionError("regression: no rows to fit");
    mean_.assign(static_cast<std::size_t>(k), 0.0);
    invsd_.assign(static_cast<std::size_t>(k), 0.0);

    // Feature means and variances, fixed-block reduction.
    {
        const int nb = par::block_count(rows);
        std::vector<double> sums(static_cast<std::size_t>(nb) * k, 0.0);
        std::vector<double> sqSums(static_cast<std::size_t>(nb) * k, 0.0);
        par::for_blocks(rows, [&](int b, std::int64_t lo, std::int64_t hi) {
            double* s = sums.data() + static_cast<std::size_t>(b) * k;
            double* q = sqSums.data() + static_cast<std::size_t>(b) * k;
            for (std::int64_t r = lo; r < hi; ++r) {
                const double* f = feats_ + r * k;
                for (int j = 0; j < k; ++j) {
                    s[j] += f[j];
                    q[j] += f[j] * f[j];
                }
            }
        });
        for (int j = 0; j < k; ++j) {
            double s = 0.0, q = 0.0;
            for (int b = 0; b < nb; ++b) {
                s += sums[static_cast<std::size_t>(b) * k + j];
                q += sqSums[static_cast<std::size_t>(b) * k + j];
            }
            const double m = s / static_cast<double>(rows);
            const double var = q / static_cast<double>(rows) - m * m;
            mean_[static_cast<std::size_t>(j)] = m;
            if (var > 1e-20 * std::max(1.0, m * m)) {
                invsd_[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(var);
                keptIdx_.push_back(j);
            }
        }
    }
    kept_ = static_cast<int>(keptIdx_.size());
    dropped_ = k_ - kept_;
    if (kept_ == 0) return;  // intercept-only fit; solve_for handles it

    // Gram of standardized kept features, fixed-block reduction.
    const int kk = kept_;
    const int nb = par::block_count(rows);
    std::vector<double> partial(static_cast<std::size_t>(nb) * kk * kk, 0.0);
    par::for_blocks(rows, [&](int b, std::int64_t lo, std::int64_t hi) {
        double* g = partial.data() + static_cast<std::size_t>(b) * kk * kk;
        std::vector<double> x(static_cast<std::size_t>(kk));
        for (std::int64_t r = lo; r < hi; ++r) {
            const double* f = feats_ + r * k_;
            for (int a = 0; a < kk; ++a) {
                const int j = keptIdx_[static_cast<std::size_t>(a)];
                x[static_cast<std::size_t>(a)] = (f[j] - mean_[static_cast<std::size_t>(j)]) *
                                                 invsd_[static_cast<std::size_t>(j)];
            }
            for (int a = 0; a < kk; ++a)
                for (int c = a; c < kk; ++c)
                    g[a * kk + c] += x[static_cast<std::size_t>(a)] * x[static_cast<std::size_t>(c)];
        }
    });
    gram_.assign(static_cast<std::size_t>(kk) * kk, 0.0);
    for (int b = 0; b < nb; ++b) {
        const double* g = partial.data() + static_cast<std::size_t>(b) * kk * kk;
        for (int a = 0; a < kk; ++a)
            for (int c = a; c < kk; ++c) gram_[static_cast<std::size_t>(a) * kk + c] += g[a * kk + c];
    }
    for (int a = 0; a < kk; ++a)
        for (int c = a; c < kk; ++c) {
            gram_[static_cast<std::size_t>(a) * kk + c] /= static_cast<double>(rows);
            gram_[static_cast<std::size_t>(c) * kk + a] = gram_[static_cast<std::size_t>(a) * kk + c];
        }

    // Condition of the un-ridged Gram decides whether ridge = 0 is solvable.
    Eigen::MatrixXd G(kk, kk);
    for (int a = 0; a < kk; ++a)
        for (int c = 0; c < kk; ++c) G(a, c) = gram_[static_cast<std::size_t>(a) * kk + c];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double lmin = eig.eigenvalues().minCoeff();
    condition_ = lmax > 0.0 ? lmax / std::max(lmin, 1e-300) : 1.0;
    if (ridge_ == 0.0 && (lmin <= 1e-13 * lmax || !(lmin > 0.0)))
        throw RegressionError("regression: rank-deficient design beyond ridge rescue (condition " +
                              std::to_string(condition_) + ")");
    for (int a = 0; a < kk; ++a) gram_[static_cast<std::size_t>(a) * kk + a] += ridge_;
}

FittedFn StepFitter::solve_for(const std::function<double(std::int64_t)>& target) const {
    FittedFn fn;
    fn.mean = mean_;
    fn.invsd = invsd_;
    fn.beta.assign(static_cast<std::size_t>(k_), 0.0);

    const int kk = kept_;
    const int nb = par::block_count(rows_);
    // Means of the target and cross-moments with standardized kept features.
    std::vector<double> partial(static_cast<std::size_t>(nb) * (kk + 1), 0.0);
    par::for_blocks(rows_, [&](int b, std::int64_t lo, std::int64_t hi) {
        double* acc = partial.data() + static_cast<std::size_t>(b) * (kk + 1);
        for (std::int64_t r = lo; r < hi; ++r) {
            const double t = target(r);
            acc[kk] += t;
            const double* f = feats_ + r * k_;
            for (int a = 0; a < kk; ++a) {
                const int j = keptIdx_[static_cast<std::size_t>(a)];
                acc[a] += t * (f[j] - mean_[static_cast<std::size_t>(j)]) *
                          invsd_[static_cast<std::size_t>(j)];
            }
        }
    });
    std::vector<double> rhs(static_cast<std::size_t>(kk), 0.0);
    double tSum = 0.0;
    for (int b = 0; b < nb; ++b) {
        const double* acc = partial.data() + static_cast<std::size_t>(b) * (kk + 1);
        for (int a = 0; a < kk; ++a) rhs[static_cast<std::size_t>(a)] += acc[a];
        tSum += acc[kk];
    }
    const double tMean = tSum / static_cast<double>(rows_);
    fn.intercept = tMean;
    if (kk == 0) return fn;

    // Standardized features have (sample) mean zero, so E[x~ t] already is the
    // centered cross-moment and a constant shift of the target moves only the
    // intercept, up to rounding.
    Eigen::VectorXd b(kk);
    Eigen::MatrixXd G(kk, kk);
    for (int a = 0; a < kk; ++a) {
        b(a) = rhs[static_cast<std::size_t>(a)] / static_cast<double>(rows_);
        for (int c = 0; c < kk; ++c) G(a, c) = gram_[static_cast<std::size_t>(a) * kk + c];
    }
    Eigen::VectorXd beta = G.ldlt().solve(b);
    for (int a = 0; a < kk; ++a)
        fn.beta[static_cast<std::size_t>(keptIdx_[static_cast<std::size_t>(a)])] = beta(a);
    return fn;
}

}  // namespace bsdelab
