#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bsdelab/errors.hpp"
#include "bsdelab/regression.hpp"
#include "bsdelab/rng.hpp"

using namespace bsdelab;

namespace {
std::vector<double> random_features(std::int64_t rows, int k, std::uint64_t seed) {
    std::vector<double> f(static_cast<std::size_t>(rows) * k);
    PathRng gen(seed, 0);
    for (auto& v : f) v = gen.gaussian();
    return f;
}
}  // namespace

TEST_CASE("fitter recovers an exact linear target") {
    const std::int64_t rows = 4000;
    const int k = 3;
    const std::vector<double> f = random_features(rows, k, 12);
    StepFitter fit(f.data(), rows, k, 0.0);
    const auto fn = fit.solve_for([&](std::int64_t r) {
        const double* x = f.data() + r * k;
        return 2.0 + 1.5 * x[0] - 0.5 * x[1] + 0.25 * x[2];
    });
    for (std::int64_t r = 0; r < 50; ++r)
        CHECK_THAT(fn.predict(f.data() + r * k),
                   Catch::Matchers::WithinAbs(2.0 + 1.5 * f[r * k] - 0.5 * f[r * k + 1] +
                                                  0.25 * f[r * k + 2],
                                              1e-10));
}

TEST_CASE("constant shifts of the target move only the intercept") {
    const std::int64_t rows = 2000;
    const int k = 2;
    const std::vector<double> f = random_features(rows, k, 3);
    StepFitter fit(f.data(), rows, k, 1e-8);
    const auto target = [&](std::int64_t r) {
        const double* x = f.data() + r * k;
        return std::sin(x[0]) + 0.3 * x[1] * x[1];
    };
    const auto a = fit.solve_for(target);
    const double c = 5.25;
    const auto b = fit.solve_for([&](std::int64_t r) { return target(r) + c; });
    // the intercept is unpenalized, so the shift passes through untouched
    REQUIRE(a.beta.size() == b.beta.size());
    for (std::size_t j = 0; j < a.beta.size(); ++j)
        CHECK_THAT(b.beta[j], Catch::Matchers::WithinAbs(a.beta[j], 1e-12));
    for (std::int64_t r = 0; r < 20; ++r)
        CHECK_THAT(b.predict(f.data() + r * k),
                   Catch::Matchers::WithinAbs(a.predict(f.data() + r * k) + c, 1e-9));
}

TEST_CASE("duplicate column without ridge is rejected, with ridge survives") {
    const std::int64_t rows = 500;
    const int k = 2;
    std::vector<double> f(static_cast<std::size_t>(rows) * k);
    PathRng gen(9, 0);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double x = gen.gaussian();
        f[static_cast<std::size_t>(r) * k] = x;
        f[static_cast<std::size_t>(r) * k + 1] = x;  // exact copy
    }
    CHECK_THROWS_AS(StepFitter(f.data(), rows, k, 0.0), RegressionError);
    StepFitter ridged(f.data(), rows, k, 1e-8);
    const auto fn = ridged.solve_for(
        [&](std::int64_t r) { return f[static_cast<std::size_t>(r) * k]; });
    for (std::int64_t r = 0; r < 20; ++r)
        CHECK_THAT(fn.predict(f.data() + r * k),
                   Catch::Matchers::WithinAbs(f[static_cast<std::size_t>(r) * k], 1e-3));
}

TEST_CASE("zero-variance columns are dropped, not fatal") {
    const std::int64_t rows = 300;
    const int k = 2;
    std::vector<double> f(static_cast<std::size_t>(rows) * k);
    PathRng gen(4, 0);
    for (std::int64_t r = 0; r < rows; ++r) {
        f[static_cast<std::size_t>(r) * k] = gen.gaussian();
        f[static_cast<std::size_t>(r) * k + 1] = 7.0;  // constant
    }
    StepFitter fit(f.data(), rows, k, 0.0);
    CHECK(fit.dropped_columns() == 1);
    const auto fn = fit.solve_for(
        [&](std::int64_t r) { return 3.0 * f[static_cast<std::size_t>(r) * k]; });
    CHECK(fn.invsd[1] == 0.0);
    for (std::int64_t r = 0; r < 20; ++r)
        CHECK_THAT(fn.predict(f.data() + r * k),
                   Catch::Matchers::WithinAbs(3.0 * f[static_cast<std::size_t>(r) * k], 1e-10));
}

TEST_CASE("polynomial basis counts features as documented") {
    // degree-1: n features; degree-2 adds n squares and n(n-1)/2 cross terms
    CHECK(polynomial_basis(1, 1).count == 1);
    CHECK(polynomial_basis(1, 2).count == 2);
    CHECK(polynomial_basis(2, 2).count == 5);
    CHECK(polynomial_basis(3, 2).count == 9);
    CHECK(polynomial_basis(1, 4).count == 4);
    CHECK_THROWS_AS(polynomial_basis(0, 2), ConfigError);
    CHECK_THROWS_AS(polynomial_basis(2, 0), ConfigError);
}

TEST_CASE("running-max and restriction extensions append features") {
    const RegressionBasis base = polynomial_basis(1, 2);
    const RegressionBasis rm = with_running_max(polynomial_basis(1, 2));
    CHECK(rm.count == base.count + 1);
    const RegressionBasis ri = with_restrict_increments(polynomial_basis(1, 2), 4);
    CHECK(ri.count == base.count + 4);

    const Ensemble ens = simulate(StandardBm{1}, TimeGrid::uniform(1.0, 8), 16, 21);
    const PathView pv{&ens, 3};
    std::vector<double> feat(static_cast<std::size_t>(rm.count));
    rm.fill(pv, 4, feat.data());
    double runMax = 0.0;
    for (int i = 0; i <= 4; ++i) runMax = std::max(runMax, pv.value(i));
    CHECK(feat[static_cast<std::size_t>(base.count)] == runMax);

    std::vector<double> featR(static_cast<std::size_t>(ri.count));
    ri.fill(pv, 8, featR.data());
    // increments of the 4-partition at the terminal node telescope to M_T
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) sum += featR[static_cast<std::size_t>(base.count + j)];
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(pv.value(8) - pv.value(0), 1e-12));
}
