#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace biophys {

/// Dense scalar volume on an H x W x D grid with uniform spacing.
/// Data is row-major with z (the D axis) fastest: idx = (x*W + y)*D + z.
struct Field3D {
    int H = 0, W = 0, D = 0;
    double spacing = 1.0;
    std::vector<double> data;

    Field3D() = default;
    Field3D(int h, int w, int d, double value = 0.0, double spacing_ = 1.0)
        : H(h), W(w), D(d), spacing(spacing_), data(static_cast<size_t>(h) * w * d, value) {
        if (h <= 0 || w <= 0 || d <= 0)
            throw std::invalid_argument("Field3D: extents must be positive");
        if (spacing_ <= 0.0)
            throw std::invalid_argument("Field3D: spacing must be positive");
    }

    size_t size() const { return data.size(); }
    size_t idx(int x, int y, int z) const {
        return (static_cast<size_t>(x) * W + y) * D + z;
    }
    double& at(int x, int y, int z) { return data[idx(x, y, z)]; }
    double at(int x, int y, int z) const { return data[idx(x, y, z)]; }

    bool same_dims(const Field3D& o) const { return H == o.H && W == o.W && D == o.D; }

    double sum() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }
    double max() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::max(m, v);
        return m;
    }
    double min() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::min(m, v);
        return m;
    }
};

/// The 27-point weight table of the discrete Laplacian: -6 at the centre,
/// +1 on the six face neighbours, 0 elsewhere.
struct LaplacianKernel {
    static constexpr std::array<std::array<std::array<double, 3>, 3>, 3> weights = {{
        {{{0, 0, 0}, {0, 1, 0}, {0, 0, 0}}},
        {{{0, 1, 0}, {1, -6, 1}, {0, 1, 0}}},
        {{{0, 0, 0}, {0, 1, 0}, {0, 0, 0}}},
    }};

    static double weight(int dx, int dy, int dz) {
        return weights[dx + 1][dy + 1][dz + 1];
    }
};

namespace detail {
/// Reflect (mirror about the boundary face) index clamp for a 1-wide stencil:
/// the ghost neighbour of an edge voxel is the edge voxel itself, which
/// realises a zero normal derivative at the face.
inline int reflect(int i, int n) {
    if (i < 0) return 0;
    if (i >= n) return n - 1;
    return i;
}
}  // namespace detail

/// Discrete Laplacian with reflect boundary, scaled by 1/h^2.
inline Field3D laplacian(const Field3D& f) {
    if (f.H < 2 || f.W < 2 || f.D < 2)
        throw std::invalid_argument("laplacian: every axis extent must be >= 2, got " +
                                    std::to_string(f.H) + "x" + std::to_string(f.W) + "x" +
                                    std::to_string(f.D));
    Field3D out(f.H, f.W, f.D, 0.0, f.spacing);
    const double inv_h2 = 1.0 / (f.spacing * f.spacing);
    for (int x = 0; x < f.H; ++x) {
        const int xm = detail::reflect(x - 1, f.H), xp = detail::reflect(x + 1, f.H);
        for (int y = 0; y < f.W; ++y) {
            const int ym = detail::reflect(y - 1, f.W), yp = detail::reflect(y + 1, f.W);
            for (int z = 0; z < f.D; ++z) {
                const int zm = detail::reflect(z - 1, f.D), zp = detail::reflect(z + 1, f.D);
                const double c = f.at(x, y, z);
                const double acc = f.at(xm, y, z) + f.at(xp, y, z) + f.at(x, ym, z) +
                                   f.at(x, yp, z) + f.at(x, y, zm) + f.at(x, y, zp) - 6.0 * c;
                out.at(x, y, z) = acc * inv_h2;
            }
        }
    }
    return out;
}

/// One-sided first differences along the outward normal on the six faces.
/// Face order: x-min, x-max (shape W x D), y-min, y-max (H x D),
/// z-min, z-max (H x W), each flattened row-major.
struct FaceDerivatives {
    std::array<std::vector<double>, 6> faces;
};

inline FaceDerivatives face_derivatives(const Field3D& f) {
    if (f.H < 2 || f.W < 2 || f.D < 2)
        throw std::invalid_argument("face_derivatives: every axis extent must be >= 2");
    FaceDerivatives r;
    const double inv_h = 1.0 / f.spacing;
    r.faces[0].resize(static_cast<size_t>(f.W) * f.D);
    r.faces[1].resize(static_cast<size_t>(f.W) * f.D);
    for (int y = 0; y < f.W; ++y)
        for (int z = 0; z < f.D; ++z) {
            r.faces[0][static_cast<size_t>(y) * f.D + z] = (f.at(0, y, z) - f.at(1, y, z)) * inv_h;
            r.faces[1][static_cast<size_t>(y) * f.D + z] =
                (f.at(f.H - 1, y, z) - f.at(f.H - 2, y, z)) * inv_h;
        }
    r.faces[2].resize(static_cast<size_t>(f.H) * f.D);
    r.faces[3].resize(static_cast<size_t>(f.H) * f.D);
    for (int x = 0; x < f.H; ++x)
        for (int z = 0; z < f.D; ++z) {
            r.faces[2][static_cast<size_t>(x) * f.D + z] = (f.at(x, 0, z) - f.at(x, 1, z)) * inv_h;
            r.faces[3][static_cast<size_t>(x) * f.D + z] =
                (f.at(x, f.W - 1, z) - f.at(x, f.W - 2, z)) * inv_h;
        }
    r.faces[4].resize(static_cast<size_t>(f.H) * f.W);
    r.faces[5].resize(static_cast<size_t>(f.H) * f.W);
    for (int x = 0; x < f.H; ++x)
        for (int y = 0; y < f.W; ++y) {
            r.faces[4][static_cast<size_t>(x) * f.W + y] = (f.at(x, y, 0) - f.at(x, y, 1)) * inv_h;
            r.faces[5][static_cast<size_t>(x) * f.W + y] =
                (f.at(x, y, f.D - 1) - f.at(x, y, f.D - 2)) * inv_h;
        }
    return r;
}

}  // namespace biophys
