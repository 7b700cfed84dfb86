#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "biophys/field.hpp"

using namespace biophys;

TEST_CASE("stencil weight table", "[field]") {
    double sum = 0.0;
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
                const double w = LaplacianKernel::weight(a, b, c);
                const int taxi = std::abs(a) + std::abs(b) + std::abs(c);
                if (taxi == 0)
                    CHECK(w == -6.0);
                else if (taxi == 1)
                    CHECK(w == 1.0);
                else
                    CHECK(w == 0.0);  // edges and corners
                sum += w;
            }
    CHECK(sum == 0.0);
    // symmetry under axis permutation and reflection
    CHECK(LaplacianKernel::weight(1, 0, 0) == LaplacianKernel::weight(0, 1, 0));
    CHECK(LaplacianKernel::weight(1, 0, 0) == LaplacianKernel::weight(-1, 0, 0));
    CHECK(LaplacianKernel::weight(0, 0, 1) == LaplacianKernel::weight(0, -1, 0));
}

TEST_CASE("laplacian of constant and linear fields", "[field]") {
    Field3D c(5, 4, 3, 2.5);
    for (double v : laplacian(c).data) CHECK(std::abs(v) < 1e-12);

    Field3D ramp(6, 5, 4);
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 5; ++y)
            for (int z = 0; z < 4; ++z) ramp.at(x, y, z) = x;
    Field3D lr = laplacian(ramp);
    for (int x = 1; x < 5; ++x)  // interior along x; boundary rows feel the reflect clamp
        for (int y = 0; y < 5; ++y)
            for (int z = 0; z < 4; ++z) CHECK(std::abs(lr.at(x, y, z)) < 1e-12);
}

TEST_CASE("laplacian of a quadratic profile is 2 in the interior", "[field]") {
    Field3D f(8, 4, 4);
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z) f.at(x, y, z) = static_cast<double>(x) * x;
    Field3D l = laplacian(f);
    for (int x = 1; x < 7; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z)
                CHECK(l.at(x, y, z) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("global stencil sum vanishes (discrete divergence theorem)", "[field]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    Field3D f(7, 6, 5);
    for (double& v : f.data) v = d(rng);
    double mag = 0.0, s = 0.0;
    for (double v : laplacian(f).data) {
        s += v;
        mag += std::abs(v);
    }
    CHECK(std::abs(s) < 1e-12 * mag);
}

TEST_CASE("laplacian is linear", "[field]") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Field3D f(5, 5, 5), g(5, 5, 5);
    for (double& v : f.data) v = d(rng);
    for (double& v : g.data) v = d(rng);
    const double a = 2.25, b = -0.5;  // exactly representable
    Field3D combo(5, 5, 5);
    for (size_t i = 0; i < combo.data.size(); ++i) combo.data[i] = a * f.data[i] + b * g.data[i];
    Field3D lc = laplacian(combo), lf = laplacian(f), lg = laplacian(g);
    for (size_t i = 0; i < lc.data.size(); ++i)
        CHECK(lc.data[i] == Catch::Approx(a * lf.data[i] + b * lg.data[i]).margin(1e-12));
}

TEST_CASE("spacing scales the laplacian by 1/h^2", "[field]") {
    Field3D f(4, 4, 4, 0.0, 1.0), fh(4, 4, 4, 0.0, 0.5);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (size_t i = 0; i < f.data.size(); ++i) fh.data[i] = f.data[i] = d(rng);
    Field3D l1 = laplacian(f), l2 = laplacian(fh);
    for (size_t i = 0; i < l1.data.size(); ++i)
        CHECK(l2.data[i] == Catch::Approx(4.0 * l1.data[i]).epsilon(1e-12));
}

TEST_CASE("face derivatives of constant and ramp fields", "[field]") {
    Field3D c(4, 4, 4, 3.0);
    for (const auto& face : face_derivatives(c).faces)
        for (double v : face) CHECK(v == 0.0);

    Field3D ramp(4, 4, 4);
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z) ramp.at(x, y, z) = x;
    FaceDerivatives fd = face_derivatives(ramp);
    for (double v : fd.faces[0]) CHECK(v == -1.0);  // x-min: outward normal points down the ramp
    for (double v : fd.faces[1]) CHECK(v == 1.0);
    for (int k = 2; k < 6; ++k)
        for (double v : fd.faces[k]) CHECK(v == 0.0);
}

TEST_CASE("mid-plane symmetric fields have zero face derivatives", "[field]") {
    Field3D f(6, 6, 6);
    // symmetric under reflection about every mid-plane: value depends on
    // distance-to-centre per axis only
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y)
            for (int z = 0; z < 6; ++z) {
                const double ax = std::min(x, 5 - x), ay = std::min(y, 5 - y),
                             az = std::min(z, 5 - z);
                f.at(x, y, z) = ax * ax + 2.0 * ay + std::sin(az);
            }
    // reflect symmetry makes the two outermost layers equal at each face
    Field3D g = f;
    for (int y = 0; y < 6; ++y)
        for (int z = 0; z < 6; ++z) {
            g.at(1, y, z) = g.at(0, y, z);
            g.at(4, y, z) = g.at(5, y, z);
        }
    for (int x = 0; x < 6; ++x)
        for (int z = 0; z < 6; ++z) {
            g.at(x, 1, z) = g.at(x, 0, z);
            g.at(x, 4, z) = g.at(x, 5, z);
        }
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y) {
            g.at(x, y, 1) = g.at(x, y, 0);
            g.at(x, y, 4) = g.at(x, y, 5);
        }
    for (const auto& face : face_derivatives(g).faces)
        for (double v : face) CHECK(v == 0.0);
}

TEST_CASE("degenerate extents are rejected", "[field]") {
    CHECK_THROWS_AS(Field3D(0, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(Field3D(4, 4, 4, 0.0, -1.0), std::invalid_argument);
    Field3D thin(1, 4, 4);
    CHECK_THROWS_AS(laplacian(thin), std::invalid_argument);
    CHECK_THROWS_AS(face_derivatives(thin), std::invalid_argument);
}
