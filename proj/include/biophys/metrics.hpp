#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace biophys {

/// Binary voxel mask over an H x W x D grid (z fastest, like Field3D).
struct BinaryMask {
    int H = 0, W = 0, D = 0;
    double spacing = 1.0;
    std::vector<uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w, int d, double spacing_ = 1.0)
        : H(h), W(w), D(d), spacing(spacing_), bits(static_cast<size_t>(h) * w * d, 0) {}

    bool same_dims(const BinaryMask& o) const { return H == o.H && W == o.W && D == o.D; }
    size_t count() const {
        size_t n = 0;
        for (uint8_t b : bits) n += b ? 1 : 0;
        return n;
    }
    std::vector<std::array<int, 3>> foreground() const {
        std::vector<std::array<int, 3>> out;
        size_t i = 0;
        for (int x = 0; x < H; ++x)
            for (int y = 0; y < W; ++y)
                for (int z = 0; z < D; ++z, ++i)
                    if (bits[i]) out.push_back({x, y, z});
        return out;
    }
};

/// Overlap score 2|A & B| / (|A| + |B|); both masks empty counts as perfect.
inline double dice_score(const BinaryMask& pred, const BinaryMask& truth) {
    if (!pred.same_dims(truth)) throw std::invalid_argument("dice_score: dim mismatch");
    size_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.bits.size(); ++i) {
        const bool p = pred.bits[i] != 0, t = truth.bits[i] != 0;
        inter += (p && t) ? 1 : 0;
        a += p ? 1 : 0;
        b += t ? 1 : 0;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace detail {
/// Directed 95th-percentile distance: nearest-rank percentile of the
/// minimum Euclidean distances from each foreground voxel of `from` to the
/// foreground set of `to`.
inline double directed_hd95(const std::vector<std::array<int, 3>>& from,
                            const std::vector<std::array<int, 3>>& to, double spacing) {
    std::vector<double> dists;
    dists.reserve(from.size());
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        dists.push_back(std::sqrt(best) * spacing);
    }
    std::sort(dists.begin(), dists.end());
    const size_t k = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(dists.size())));
    return dists[k == 0 ? 0 : k - 1];
}
}  // namespace detail

/// 95th-percentile symmetric Hausdorff distance in voxel units * spacing.
/// Empty masks yield no value; callers exclude such cases and report counts.
inline std::optional<double> hd95(const BinaryMask& pred, const BinaryMask& truth) {
    if (!pred.same_dims(truth)) throw std::invalid_argument("hd95: dim mismatch");
    const auto a = pred.foreground();
    const auto b = truth.foreground();
    if (a.empty() || b.empty()) return std::nullopt;
    return std::max(detail::directed_hd95(a, b, pred.spacing),
                    detail::directed_hd95(b, a, pred.spacing));
}

}  // namespace biophys
