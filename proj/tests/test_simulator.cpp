#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "biophys/simulator.hpp"

using namespace biophys;

namespace {
Field3D gaussian_bump(int n, double amp = 0.8, double sigma = 2.0) {
    Field3D f(n, n, n);
    const double c = (n - 1) / 2.0;
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z) {
                const double r2 = (x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c);
                f.at(x, y, z) = amp * std::exp(-r2 / (2.0 * sigma * sigma));
            }
    return f;
}
}  // namespace

TEST_CASE("stability bound formula", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(4, 4, 4, 1.5);
    p.rho = Field3D(4, 4, 4, 0.0);
    CHECK(cfl_bound(p) == Catch::Approx(1.0 / 9.0).epsilon(1e-12));
    p.d = Field3D(4, 4, 4, 0.02);
    CHECK(cfl_bound(p) == Catch::Approx(25.0 / 3.0).epsilon(1e-12));
    p.d = Field3D(4, 4, 4, 0.0);
    CHECK(std::isinf(cfl_bound(p)));
}

TEST_CASE("fixed points of the update", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(4, 4, 4, 0.5);
    p.rho = Field3D(4, 4, 4, 0.1);
    p.dt = 0.1;
    Field3D zero(4, 4, 4, 0.0), one(4, 4, 4, 1.0);
    for (double v : step(zero, p).data) CHECK(v == 0.0);
    for (double v : step(one, p).data) CHECK(v == 1.0);
}

TEST_CASE("zero-diffusion run matches the closed-form logistic curve", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(3, 3, 3, 0.0);
    p.rho = Field3D(3, 3, 3, 0.2);
    p.dt = 1e-3;
    p.steps = 10000;  // t = 10
    Field3D u0(3, 3, 3, 0.1);
    Field3D u = simulate(u0, p).final;
    const double expected = 1.0 / (1.0 + (0.9 / 0.1) * std::exp(-0.2 * 10.0));
    CHECK(expected == Catch::Approx(0.45085).margin(5e-5));
    for (double v : u.data) CHECK(v == Catch::Approx(expected).margin(1e-4));
}

TEST_CASE("pure diffusion conserves mass every step", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(8, 8, 8, 0.8);
    p.rho = Field3D(8, 8, 8, 0.0);
    p.dt = 0.9 / (6.0 * 0.8);
    Field3D u = gaussian_bump(8);
    const double m0 = u.sum();
    for (int s = 0; s < 200; ++s) {
        u = step(u, p);
        CHECK(std::abs(u.sum() - m0) / m0 < 1e-10);
    }
}

TEST_CASE("boundedness and the maximum principle", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(8, 8, 8, 1.0);
    p.rho = Field3D(8, 8, 8, 0.0);
    p.dt = 0.9 / 6.0;
    Field3D u(8, 8, 8, 0.0);
    u.at(4, 4, 4) = 1.0;  // single seeded voxel
    double prev_max = u.max();
    size_t prev_support = 1;
    for (int s = 0; s < 100; ++s) {
        u = step(u, p);
        CHECK(u.min() >= -1e-9);
        CHECK(u.max() <= 1.0 + 1e-9);
        CHECK(u.max() <= prev_max + 1e-15);
        size_t support = 0;
        for (double v : u.data) support += v > 0.0 ? 1 : 0;
        CHECK(support >= prev_support);
        prev_max = u.max();
        prev_support = support;
    }
}

TEST_CASE("reaction-diffusion run stays in [0,1] with reaction on", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(8, 8, 8, 0.5);
    p.rho = Field3D(8, 8, 8, 0.1);
    p.dt = 0.02;
    p.steps = 500;
    Field3D u = simulate(gaussian_bump(8), p).final;
    CHECK(u.min() >= -1e-9);
    CHECK(u.max() <= 1.0 + 1e-9);
}

TEST_CASE("first-order self-convergence under dt halving", "[simulator]") {
    const int n = 8;
    auto run = [&](double dt, int steps) {
        GrowthParams p;
        p.d = Field3D(n, n, n, 0.5);
        p.rho = Field3D(n, n, n, 0.1);
        p.dt = dt;
        p.steps = steps;
        return simulate(gaussian_bump(n), p).final;
    };
    // integrate to t = 10 at dt, dt/2, dt/4 and compare against the finest run
    Field3D a = run(0.02, 500), b = run(0.01, 1000), c = run(0.005, 2000);
    double ea = 0.0, eb = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        ea = std::max(ea, std::abs(a.data[i] - c.data[i]));
        eb = std::max(eb, std::abs(b.data[i] - c.data[i]));
    }
    // errors vs the dt/4 reference: e(dt) ~ C*dt*(1 - 1/4), e(dt/2) ~ C*dt*(1/2 - 1/4),
    // so the ratio is ~3 for a first-order scheme; the coarse check below only
    // asserts the dt-halving factor e(dt)/e(dt/2) band after removing the
    // shared reference offset: e(dt)-e(dt/2) ≈ e(dt/2)-e(dt/4) * 2.
    const double factor = ea / eb;
    CHECK(factor > 1.5 * 2.0 - 1.0);  // >= 2.0 nominal 3.0
    CHECK(factor < 4.0);
    // also the plain halving factor against a much finer reference
    Field3D ref = run(0.00125, 8000);
    double e1 = 0.0, e2 = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        e1 = std::max(e1, std::abs(a.data[i] - ref.data[i]));
        e2 = std::max(e2, std::abs(b.data[i] - ref.data[i]));
    }
    const double halving = e1 / e2;
    CHECK(halving > 1.5);
    CHECK(halving < 2.5);
}

TEST_CASE("coarse and half-step runs agree to 1e-2", "[simulator]") {
    const int n = 16;
    auto run = [&](double dt, int steps) {
        GrowthParams p;
        p.d = Field3D(n, n, n, 0.5);
        p.rho = Field3D(n, n, n, 0.1);
        p.dt = dt;
        p.steps = steps;
        return simulate(gaussian_bump(n), p).final;
    };
    Field3D a = run(0.02, 500), b = run(0.01, 1000);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        den += b.data[i] * b.data[i];
    }
    CHECK(std::sqrt(num / den) < 1e-2);
}

TEST_CASE("validation errors", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(4, 4, 4, 1.5);
    p.rho = Field3D(4, 4, 4, 0.1);
    p.dt = 0.2;  // above the 1/9 bound
    Field3D u(4, 4, 4, 0.5);
    CHECK_THROWS_WITH(step(u, p), Catch::Matchers::ContainsSubstring("bound") &&
                                      Catch::Matchers::ContainsSubstring("1.5"));
    p.dt = -1.0;
    CHECK_THROWS_AS(step(u, p), std::invalid_argument);
    p.dt = 0.05;
    p.rho = Field3D(4, 4, 4, -0.1);
    CHECK_THROWS_AS(step(u, p), std::invalid_argument);
    p.rho = Field3D(3, 3, 3, 0.1);
    CHECK_THROWS_AS(step(u, p), std::invalid_argument);
}

TEST_CASE("snapshots are recorded at strictly increasing times", "[simulator]") {
    GrowthParams p;
    p.d = Field3D(4, 4, 4, 0.5);
    p.rho = Field3D(4, 4, 4, 0.1);
    p.dt = 0.05;
    p.steps = 20;
    p.snapshot_every = 5;
    SimResult r = simulate(Field3D(4, 4, 4, 0.3), p);
    REQUIRE(r.snapshots.size() == 4);
    for (size_t i = 1; i < r.snapshots.size(); ++i)
        CHECK(r.snapshots[i].first > r.snapshots[i - 1].first);
    CHECK(r.snapshots.back().first == Catch::Approx(1.0));
}

TEST_CASE("physical unit conversion helpers", "[simulator]") {
    CHECK(diffusion_to_voxel_units(1.5, 2.0, 0.5) == Catch::Approx(1.5 * 0.5 / 4.0));
    CHECK(rate_to_step_units(0.2, 0.5) == Catch::Approx(0.1));
}
