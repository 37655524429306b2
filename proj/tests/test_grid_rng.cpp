#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "bsdelab/errors.hpp"
#include "bsdelab/grid.hpp"
#include "bsdelab/rng.hpp"

using namespace bsdelab;

TEST_CASE("uniform grid hits both endpoints exactly") {
    const TimeGrid g = TimeGrid::uniform(0.7, 64);
    REQUIRE(g.steps() == 64);
    REQUIRE(g.nodes() == 65);
    CHECK(g.t(0) == 0.0);
    CHECK(g.horizon() == 0.7);
    double sum = 0.0;
    for (int i = 0; i < g.steps(); ++i) {
        CHECK(g.dt(i) > 0.0);
        sum += g.dt(i);
    }
    CHECK_THAT(sum, Catch::Matchers::WithinULP(0.7, 4));
}

TEST_CASE("tail-refined grid splits where asked") {
    const TimeGrid g = TimeGrid::tail_refined(1.0, 0.9, 8, 32);
    REQUIRE(g.steps() == 40);
    CHECK(g.t(0) == 0.0);
    CHECK(g.t(8) == 0.9);
    CHECK(g.horizon() == 1.0);
    // tail steps are uniform (node differencing costs a few ulps near t = 1)
    const double tail = g.dt(8);
    for (int i = 9; i < g.steps(); ++i) CHECK_THAT(g.dt(i), Catch::Matchers::WithinAbs(tail, 1e-15));
    CHECK(tail < g.dt(0) / 10.0);
}

TEST_CASE("grid constructors reject bad inputs") {
    CHECK_THROWS_AS(TimeGrid({0.0}), ConfigError);
    CHECK_THROWS_AS(TimeGrid({0.1, 0.5}), ConfigError);
    CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5}), ConfigError);
    CHECK_THROWS_AS(TimeGrid::uniform(-1.0, 8), ConfigError);
    CHECK_THROWS_AS(TimeGrid::uniform(1.0, 0), ConfigError);
    CHECK_THROWS_AS(TimeGrid::tail_refined(1.0, 1.5, 4, 4), ConfigError);
}

TEST_CASE("counter rng is a pure function of key and counter") {
    const std::uint64_t key = rng::path_key(1234, 7);
    CHECK(rng::path_key(1234, 7) == key);
    CHECK(rng::path_key(1234, 8) != key);
    CHECK(rng::path_key(1235, 7) != key);
    for (std::uint64_t c = 0; c < 100; ++c) {
        const double u = rng::uniform(key, c);
        CHECK(u > 0.0);
        CHECK(u <= 1.0);
        CHECK(rng::uniform(key, c) == u);
    }
}

TEST_CASE("gaussian stream is reproducible and roughly standard") {
    PathRng a(99, 3), b(99, 3);
    for (int i = 0; i < 16; ++i) REQUIRE(a.gaussian() == b.gaussian());

    const int n = 200000;
    double sum = 0.0, sumSq = 0.0;
    PathRng rng(2024, 0);
    for (int i = 0; i < n; ++i) {
        const double x = rng.gaussian();
        sum += x;
        sumSq += x * x;
    }
    const double mean = sum / n;
    const double var = sumSq / n - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("distinct path streams are distinct") {
    PathRng a(5, 0), b(5, 1);
    std::set<double> seen;
    int collisions = 0;
    for (int i = 0; i < 64; ++i) {
        const double x = a.gaussian(), y = b.gaussian();
        if (x == y) ++collisions;
        seen.insert(x);
    }
    CHECK(collisions == 0);
    CHECK(seen.size() == 64);
}
