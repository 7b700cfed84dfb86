#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "biophys/field.hpp"

namespace biophys {

/// Parameters of the reaction-diffusion forward model in voxel/step units.
struct GrowthParams {
    Field3D d;              // diffusion coefficient, >= 0
    Field3D rho;            // proliferation rate, >= 0
    double dt = 0.0;        // time step
    int steps = 0;
    int snapshot_every = 0; // 0 disables intermediate snapshots
};

struct SimResult {
    std::vector<std::pair<double, Field3D>> snapshots;
    Field3D final;
};

/// Largest stable explicit-Euler time step: h^2 / (6 * max(d)).
inline double cfl_bound(const GrowthParams& p) {
    const double dmax = p.d.max();
    if (dmax == 0.0) return std::numeric_limits<double>::infinity();
    return p.d.spacing * p.d.spacing / (6.0 * dmax);
}

namespace detail {
inline void validate_growth(const Field3D& u, const GrowthParams& p) {
    if (!u.same_dims(p.d) || !u.same_dims(p.rho))
        throw std::invalid_argument("growth step: field dims mismatch");
    if (p.dt <= 0.0) throw std::invalid_argument("growth step: dt must be positive");
    if (p.d.min() < 0.0 || p.rho.min() < 0.0)
        throw std::invalid_argument("growth step: d and rho must be non-negative");
    if (p.dt >= cfl_bound(p))
        throw std::invalid_argument("growth step: dt=" + std::to_string(p.dt) +
                                    " violates the stability bound " + std::to_string(cfl_bound(p)) +
                                    " (max d = " + std::to_string(p.d.max()) + ")");
}
}  // namespace detail

/// One explicit-Euler update: u' = u + dt * (d * lap(u) + rho * u * (1 - u)).
inline Field3D step(const Field3D& u, const GrowthParams& p) {
    detail::validate_growth(u, p);
    Field3D lap = laplacian(u);
    Field3D out(u.H, u.W, u.D, 0.0, u.spacing);
    for (size_t i = 0; i < u.data.size(); ++i) {
        const double ui = u.data[i];
        const double v = ui + p.dt * (p.d.data[i] * lap.data[i] + p.rho.data[i] * ui * (1.0 - ui));
        if (!std::isfinite(v))
            throw std::runtime_error("growth step: non-finite value at voxel " + std::to_string(i));
        out.data[i] = v;
    }
    return out;
}

inline SimResult simulate(const Field3D& u0, const GrowthParams& p) {
    detail::validate_growth(u0, p);
    if (p.steps <= 0) throw std::invalid_argument("simulate: steps must be positive");
    SimResult r;
    Field3D u = u0;
    for (int s = 1; s <= p.steps; ++s) {
        u = step(u, p);
        if (p.snapshot_every > 0 && s % p.snapshot_every == 0 && s != p.steps)
            r.snapshots.emplace_back(s * p.dt, u);
    }
    r.snapshots.emplace_back(p.steps * p.dt, u);
    r.final = std::move(u);
    return r;
}

/// Converts the physical-unit coefficient ranges (mm^2/day, 1/day) into
/// voxel/step units for a grid with `spacing_mm` per voxel and `dt_days`
/// per step.
inline double diffusion_to_voxel_units(double d_mm2_per_day, double spacing_mm, double dt_days) {
    return d_mm2_per_day * dt_days / (spacing_mm * spacing_mm);
}
inline double rate_to_step_units(double rho_per_day, double dt_days) { return rho_per_day * dt_days; }

}  // namespace biophys
