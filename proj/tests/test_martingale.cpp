#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bsdelab/errors.hpp"
#include "bsdelab/martingale.hpp"

using namespace bsdelab;

namespace {
double comp_mean_terminal(const Ensemble& ens, int comp) {
    double s = 0.0;
    const int last = ens.grid().nodes() - 1;
    for (int p = 0; p < ens.paths(); ++p) s += ens.value(p, last, comp);
    return s / ens.paths();
}
}  // namespace

TEST_CASE("standard model starts at zero with zero-mean terminals") {
    const Ensemble ens = simulate(StandardBm{2}, TimeGrid::uniform(1.0, 32), 50000, 7);
    REQUIRE(ens.dim() == 2);
    for (int p = 0; p < ens.paths(); ++p)
        for (int c = 0; c < 2; ++c) REQUIRE(ens.value(p, 0, c) == 0.0);
    // terminal component variance is T, so the mean is within 4 sd / sqrt(P)
    const double tol = 4.0 / std::sqrt(50000.0);
    CHECK(std::abs(comp_mean_terminal(ens, 0)) < tol);
    CHECK(std::abs(comp_mean_terminal(ens, 1)) < tol);
}

TEST_CASE("standard model clock is deterministic n*t") {
    const Ensemble ens = simulate(StandardBm{3}, TimeGrid::uniform(0.5, 16), 10, 1);
    CHECK(ens.clock_bound() == 1.5);
    CHECK(ens.m_scale() == 1.0 / std::sqrt(3.0));
    for (int p = 0; p < ens.paths(); ++p) {
        for (int i = 0; i <= 16; ++i)
            CHECK_THAT(ens.clockA(p, i), Catch::Matchers::WithinULP(3.0 * ens.grid().t(i), 8));
        for (int i = 0; i < 16; ++i)
            CHECK_THAT(ens.dA(p, i), Catch::Matchers::WithinULP(3.0 * ens.grid().dt(i), 16));
        CHECK(ens.stop_node(p) == ens.grid().nodes());
    }
    CHECK(ens.activation_node() == 0);
}

TEST_CASE("volatility factor has unit Frobenius norm") {
    for (int n : {1, 2, 5}) {
        const Model m = StandardBm{n};
        CHECK_THAT(model_m_scale(m) * std::sqrt(static_cast<double>(n)),
                   Catch::Matchers::WithinULP(1.0, 2));
    }
    const Model s = StoppedScaledBm{1.0, 0.25};
    CHECK_THAT(model_m_scale(s) * std::sqrt(2.0), Catch::Matchers::WithinULP(1.0, 2));
}

TEST_CASE("stopped model freezes on the unit disc") {
    const StoppedScaledBm model{1.0, 0.25};
    const Ensemble ens = simulate(model, TimeGrid::uniform(1.0, 64), 20000, 11);
    REQUIRE(ens.dim() == 2);
    CHECK(ens.clock_bound() == 1.0);  // 4 * window
    const int nodes = ens.grid().nodes();
    const int act = ens.activation_node();
    REQUIRE(act > 0);
    CHECK(ens.grid().t(act) >= 1.0 - 0.25 - 1e-9);
    int stopped = 0;
    for (int p = 0; p < ens.paths(); ++p) {
        double maxAbs = 0.0;
        for (int i = 0; i < nodes; ++i) {
            const double r = std::hypot(ens.value(p, i, 0), ens.value(p, i, 1));
            maxAbs = std::max(maxAbs, r);
            if (i < act) CHECK(r == 0.0);
        }
        CHECK(maxAbs <= 1.0 + 1e-12);
        const int sn = ens.stop_node(p);
        if (sn < nodes) {
            ++stopped;
            // frozen exactly on the circle, constant afterwards
            const double r = std::hypot(ens.value(p, sn, 0), ens.value(p, sn, 1));
            CHECK_THAT(r, Catch::Matchers::WithinAbs(1.0, 1e-12));
            for (int i = sn; i < nodes; ++i) {
                CHECK(ens.value(p, i, 0) == ens.value(p, sn, 0));
                CHECK(ens.value(p, i, 1) == ens.value(p, sn, 1));
            }
            for (int i = sn; i + 1 < nodes; ++i) CHECK(ens.dA(p, i) == 0.0);
        }
    }
    CHECK(stopped > 0);
    CHECK(stopped < ens.paths());
}

TEST_CASE("stopped model clock advances 4*dt while active") {
    const StoppedScaledBm model{1.0, 0.25};
    const TimeGrid grid = TimeGrid::uniform(1.0, 64);
    const Ensemble ens = simulate(model, grid, 500, 3);
    const int act = ens.activation_node();
    for (int p = 0; p < ens.paths(); ++p) {
        const int sn = ens.stop_node(p);
        for (int i = 0; i + 1 < ens.grid().nodes(); ++i) {
            if (i < act || i >= sn) {
                CHECK(ens.dA(p, i) == 0.0);
            } else {
                CHECK_THAT(ens.dA(p, i), Catch::Matchers::WithinULP(4.0 * grid.dt(i), 16));
            }
        }
        CHECK(ens.clockA(p, ens.grid().nodes() - 1) <= ens.clock_bound() + 1e-12);
    }
}

TEST_CASE("path p is bit-identical regardless of ensemble size") {
    const TimeGrid grid = TimeGrid::uniform(1.0, 16);
    const Ensemble small = simulate(StandardBm{2}, grid, 4, 42);
    const Ensemble large = simulate(StandardBm{2}, grid, 64, 42);
    for (int p = 0; p < 4; ++p)
        for (int i = 0; i < grid.nodes(); ++i)
            for (int c = 0; c < 2; ++c) REQUIRE(small.value(p, i, c) == large.value(p, i, c));
}

TEST_CASE("simulate_path reproduces the ensemble row") {
    for (const Model model : {Model{StandardBm{2}}, Model{StoppedScaledBm{1.0, 0.25}}}) {
        const TimeGrid grid = TimeGrid::uniform(1.0, 32);
        const Ensemble ens = simulate(model, grid, 8, 202);
        std::vector<double> buf(static_cast<std::size_t>(grid.nodes()) * 2);
        for (int p = 0; p < 8; ++p) {
            const int sn = simulate_path(model, grid, 202, p, buf.data());
            REQUIRE(sn == ens.stop_node(p));
            for (int i = 0; i < grid.nodes(); ++i)
                for (int c = 0; c < 2; ++c)
                    REQUIRE(buf[static_cast<std::size_t>(i) * 2 + c] == ens.value(p, i, c));
        }
    }
}

TEST_CASE("bump shifts values from the bump node on") {
    const TimeGrid grid = TimeGrid::uniform(1.0, 16);
    const Ensemble base = simulate(StandardBm{2}, grid, 32, 5);
    const std::vector<double> e = {1.0, 0.0};
    const Ensemble bumped = bump_ensemble(base, 5, e, 0.01);
    for (int p = 0; p < base.paths(); ++p)
        for (int i = 0; i < grid.nodes(); ++i) {
            const double shift = i >= 5 ? 0.01 : 0.0;
            CHECK_THAT(bumped.value(p, i, 0),
                       Catch::Matchers::WithinULP(base.value(p, i, 0) + shift, 4));
            CHECK(bumped.value(p, i, 1) == base.value(p, i, 1));
        }
}

TEST_CASE("bumping the stopped model can move the stopping step") {
    const StoppedScaledBm model{1.0, 0.25};
    const TimeGrid grid = TimeGrid::uniform(1.0, 128);
    const Ensemble base = simulate(model, grid, 4000, 17);
    const Ensemble bumped = bump_ensemble(base, base.activation_node(), {1.0, 0.0}, 0.05);
    int moved = 0;
    for (int p = 0; p < base.paths(); ++p) {
        if (bumped.stop_node(p) != base.stop_node(p)) ++moved;
        // the bumped path still respects the barrier
        for (int i = 0; i < grid.nodes(); ++i)
            CHECK(std::hypot(bumped.value(p, i, 0), bumped.value(p, i, 1)) <= 1.0 + 1e-12);
    }
    CHECK(moved > 0);
}

TEST_CASE("grid restriction is piecewise constant on the partition") {
    const TimeGrid grid = TimeGrid::uniform(1.0, 8);
    // single path, one component, values 0..8 at nodes
    std::vector<double> path(9);
    for (int i = 0; i <= 8; ++i) path[static_cast<std::size_t>(i)] = i;
    const std::vector<double> r = grid_restrict(path, grid, 1, 4);
    // partition instants at nodes 0,2,4,6,8; restriction holds the last one
    const std::vector<double> expect = {0, 0, 2, 2, 4, 4, 6, 6, 8};
    REQUIRE(r.size() == expect.size());
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == expect[i]);
    CHECK_THROWS_AS(grid_restrict(path, grid, 1, 3), ConfigError);
}

TEST_CASE("model validation rejects out-of-range parameters") {
    CHECK_THROWS_AS(simulate(StandardBm{0}, TimeGrid::uniform(1.0, 4), 2, 0), ConfigError);
    CHECK_THROWS_AS(simulate(StandardBm{17}, TimeGrid::uniform(1.0, 4), 2, 0), ConfigError);
    CHECK_THROWS_AS(simulate(StoppedScaledBm{1.0, 2.0}, TimeGrid::uniform(1.0, 4), 2, 0),
                    ConfigError);
    CHECK_THROWS_AS(simulate(StandardBm{1}, TimeGrid::uniform(1.0, 4), 0, 0), ConfigError);
}
