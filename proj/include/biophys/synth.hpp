#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "biophys/field.hpp"
#include "biophys/metrics.hpp"
#include "biophys/simulator.hpp"

namespace biophys {

struct SynthOptions {
    int dim = 32;
    std::pair<double, double> d_range{0.02, 1.5};
    std::pair<double, double> rho_range{0.002, 0.2};
    double t_et = 0.6, t_tc = 0.35, t_wt = 0.1;  // strictly decreasing thresholds
    double noise_sigma = 0.3;
    int sim_steps = 300;
    int max_retries = 20;
};

/// One fully synthetic, label-complete case: final simulated density, four
/// pseudo-modality input channels and mutually exclusive one-hot labels
/// (normal, TC, WT, ET).
struct SynthCase {
    Field3D density;
    std::vector<Field3D> inputs;         // 4 channels
    std::vector<Field3D> labels;         // 4 one-hot channels
    std::vector<uint8_t> class_ids;      // per voxel: 0 normal, 1 TC, 2 WT, 3 ET
    std::vector<uint8_t> brain_mask;     // ellipsoid domain
    uint64_t seed = 0;
    double d_value = 0.0, rho_value = 0.0;
};

namespace detail {
inline std::vector<uint8_t> ellipsoid_mask(int n) {
    std::vector<uint8_t> m(static_cast<size_t>(n) * n * n, 0);
    const double c = (n - 1) / 2.0;
    const double r = 0.45 * n;
    size_t i = 0;
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z, ++i) {
                const double dx = (x - c) / r, dy = (y - c) / r, dz = (z - c) / (0.9 * r);
                m[i] = (dx * dx + dy * dy + dz * dz <= 1.0) ? 1 : 0;
            }
    return m;
}
}  // namespace detail

/// Generates one case: seeds 1-3 Gaussian bumps inside an ellipsoid mask,
/// runs the growth simulator with per-case coefficients, thresholds the final
/// density into nested regions, and derives four noisy monotone-transform
/// channels z-scored on the in-mask voxels. Retries with a derived seed if
/// the whole-tumour region comes out empty.
inline SynthCase generate_case(uint64_t seed, const SynthOptions& opt) {
    if (!(opt.t_et > opt.t_tc && opt.t_tc > opt.t_wt && opt.t_wt > 0.0))
        throw std::invalid_argument("generate_case: thresholds must satisfy t_et > t_tc > t_wt > 0");
    const int n = opt.dim;
    const std::vector<uint8_t> mask = detail::ellipsoid_mask(n);

    for (int attempt = 0; attempt < opt.max_retries; ++attempt) {
        const uint64_t s = seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(attempt);
        std::mt19937_64 rng(s);
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        // seed density: 1-3 gaussian bumps well inside the mask
        Field3D u0(n, n, n);
        const int bumps = 1 + static_cast<int>(rng() % 3);
        const double c = (n - 1) / 2.0;
        for (int bidx = 0; bidx < bumps; ++bidx) {
            const double bx = c + (u01(rng) - 0.5) * 0.5 * n;
            const double by = c + (u01(rng) - 0.5) * 0.5 * n;
            const double bz = c + (u01(rng) - 0.5) * 0.45 * n;
            const double sigma = 1.5 + 1.5 * u01(rng);
            const double amp = 0.5 + 0.3 * u01(rng);
            size_t i = 0;
            for (int x = 0; x < n; ++x)
                for (int y = 0; y < n; ++y)
                    for (int z = 0; z < n; ++z, ++i) {
                        const double r2 = (x - bx) * (x - bx) + (y - by) * (y - by) + (z - bz) * (z - bz);
                        u0.data[i] += amp * std::exp(-r2 / (2.0 * sigma * sigma));
                    }
        }
        for (size_t i = 0; i < u0.data.size(); ++i) {
            if (!mask[i]) u0.data[i] = 0.0;
            u0.data[i] = std::min(1.0, u0.data[i]);
        }

        GrowthParams gp;
        const double dv = opt.d_range.first + (opt.d_range.second - opt.d_range.first) * u01(rng);
        const double rv = opt.rho_range.first + (opt.rho_range.second - opt.rho_range.first) * u01(rng);
        gp.d = Field3D(n, n, n, dv);
        gp.rho = Field3D(n, n, n, rv);
        gp.steps = opt.sim_steps;
        gp.snapshot_every = 0;
        gp.dt = std::min({0.9 * cfl_bound(gp), 0.5 / rv, 2.5});

        Field3D u = simulate(u0, gp).final;
        for (size_t i = 0; i < u.data.size(); ++i)
            if (!mask[i]) u.data[i] = 0.0;

        // nested label regions from the clean density
        std::vector<uint8_t> cls(u.data.size(), 0);
        size_t wt_count = 0;
        for (size_t i = 0; i < u.data.size(); ++i) {
            const double v = u.data[i];
            if (v > opt.t_et) cls[i] = 3;
            else if (v > opt.t_tc) cls[i] = 1;
            else if (v > opt.t_wt) cls[i] = 2;
            if (v > opt.t_wt) ++wt_count;
        }
        if (wt_count == 0) continue;  // regenerate with a derived seed

        SynthCase out;
        out.seed = seed;
        out.d_value = dv;
        out.rho_value = rv;
        out.density = u;
        out.class_ids = cls;
        out.brain_mask = mask;
        out.labels.assign(4, Field3D(n, n, n));
        for (size_t i = 0; i < cls.size(); ++i) out.labels[cls[i]].data[i] = 1.0;

        // channels: monotone transforms of u plus noise, z-scored in-mask
        std::normal_distribution<double> noise(0.0, opt.noise_sigma);
        out.inputs.assign(4, Field3D(n, n, n));
        for (int ch = 0; ch < 4; ++ch) {
            Field3D& f = out.inputs[static_cast<size_t>(ch)];
            for (size_t i = 0; i < u.data.size(); ++i) {
                if (!mask[i]) continue;
                const double v = u.data[i];
                double t;
                switch (ch) {
                    case 0: t = v; break;
                    case 1: t = 1.0 - v; break;
                    case 2: t = v * v; break;
                    default: t = std::sqrt(v); break;
                }
                f.data[i] = t + noise(rng);
            }
            // z-score over in-mask voxels
            double s = 0.0;
            size_t cnt = 0;
            for (size_t i = 0; i < f.data.size(); ++i)
                if (mask[i]) {
                    s += f.data[i];
                    ++cnt;
                }
            const double mu = s / static_cast<double>(cnt);
            double var = 0.0;
            for (size_t i = 0; i < f.data.size(); ++i)
                if (mask[i]) var += (f.data[i] - mu) * (f.data[i] - mu);
            const double sd = std::sqrt(var / static_cast<double>(cnt));
            for (size_t i = 0; i < f.data.size(); ++i)
                f.data[i] = mask[i] ? (f.data[i] - mu) / sd : 0.0;
        }
        return out;
    }
    throw std::runtime_error("generate_case: empty whole-tumour region after " +
                             std::to_string(opt.max_retries) + " retries (seed " +
                             std::to_string(seed) + ")");
}

/// Region masks assembled by the nesting convention ET <= TC <= WT.
struct RegionMasks {
    BinaryMask tc, wt, et;
};

inline RegionMasks region_masks(const std::vector<uint8_t>& class_ids, int H, int W, int D) {
    RegionMasks r{BinaryMask(H, W, D), BinaryMask(H, W, D), BinaryMask(H, W, D)};
    for (size_t i = 0; i < class_ids.size(); ++i) {
        const uint8_t c = class_ids[i];
        if (c == 3) r.et.bits[i] = 1;
        if (c == 3 || c == 1) r.tc.bits[i] = 1;
        if (c != 0) r.wt.bits[i] = 1;
    }
    return r;
}

/// Deterministic 7:1:2 split by case index.
enum class Split { Train, Val, Test };
inline Split split_of(int case_index) {
    const int m = case_index % 10;
    if (m < 7) return Split::Train;
    if (m < 8) return Split::Val;
    return Split::Test;
}

}  // namespace biophys
