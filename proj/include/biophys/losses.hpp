#pragma once

#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "biophys/field.hpp"
#include "biophys/tensor.hpp"

namespace biophys {

struct LossWeights {
    double lambda1 = 1.0;  // PDE residual term
    double lambda2 = 1.0;  // boundary-condition term
};

/// Per-voxel diffusion and proliferation fields with their sampling ranges.
struct BiophysCoefficients {
    Field3D d;
    Field3D rho;
    std::pair<double, double> d_range{0.02, 1.5};
    std::pair<double, double> rho_range{0.002, 0.2};
};

/// Independent uniform draws per voxel per field; deterministic under the
/// rng state. Intended to be resampled every optimisation step.
inline BiophysCoefficients sample_coefficients(int H, int W, int D,
                                               std::pair<double, double> d_range,
                                               std::pair<double, double> rho_range,
                                               std::mt19937_64& rng, double spacing = 1.0) {
    if (d_range.first > d_range.second || rho_range.first > rho_range.second)
        throw std::invalid_argument("sample_coefficients: ranges must be well-ordered");
    BiophysCoefficients c;
    c.d = Field3D(H, W, D, 0.0, spacing);
    c.rho = Field3D(H, W, D, 0.0, spacing);
    c.d_range = d_range;
    c.rho_range = rho_range;
    std::uniform_real_distribution<double> dd(d_range.first, d_range.second);
    std::uniform_real_distribution<double> dr(rho_range.first, rho_range.second);
    for (double& v : c.d.data) v = dd(rng);
    for (double& v : c.rho.data) v = dr(rng);
    return c;
}

/// Smoothed multiclass Dice loss over channel-major probabilities and one-hot
/// labels [C, ...]: sum over classes of 1 - (2*sum(y*p)+1)/(sum(y)+sum(p)+1).
inline Tensor dice_loss(const Tensor& probs, const Tensor& labels) {
    if (probs.shape() != labels.shape())
        throw std::invalid_argument("dice_loss: shape mismatch " + shape_str(probs.shape()) +
                                    " vs " + shape_str(labels.shape()));
    Tape& tape = *probs.tape;
    Tensor one = tape.constant(1.0);
    Tensor two = tape.constant(2.0);
    Tensor inter = sum_channels(mul(probs, labels));
    Tensor num = add(mul(two, inter), one);
    Tensor den = add(add(sum_channels(labels), sum_channels(probs)), one);
    return sum(sub(one, div(num, den)));
}

/// Mean squared PDE residual: (1/N) sum (du/dt - d*lap(u) - rho*u*(1-u))^2,
/// with the reflect-boundary Laplacian.
inline Tensor pde_loss(const Tensor& u_hat, const Tensor& du_dt, const BiophysCoefficients& coeffs) {
    if (u_hat.shape().size() != 3 || u_hat.shape() != du_dt.shape())
        throw std::invalid_argument("pde_loss: u_hat and du_dt must be matching [H,W,D] tensors");
    const int H = u_hat.shape()[0], W = u_hat.shape()[1], D = u_hat.shape()[2];
    if (coeffs.d.H != H || coeffs.d.W != W || coeffs.d.D != D || !coeffs.d.same_dims(coeffs.rho))
        throw std::invalid_argument("pde_loss: coefficient field dims mismatch");
    Tape& tape = *u_hat.tape;

    std::vector<double> kw(27, 0.0);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c)
                kw[static_cast<size_t>((a * 3 + b) * 3 + c)] = LaplacianKernel::weight(a - 1, b - 1, c - 1);
    Tensor kernel = tape.leaf({1, 1, 3, 3, 3}, std::move(kw), false);
    const double h = coeffs.d.spacing;
    Tensor inv_h2 = tape.constant(1.0 / (h * h));
    Tensor lap = mul(reshape(conv3d(reshape(u_hat, {1, H, W, D}), kernel), {H, W, D}), inv_h2);

    Tensor d = tape.constant_field(coeffs.d);
    Tensor rho = tape.constant_field(coeffs.rho);
    Tensor one = tape.constant(1.0);
    Tensor reaction = mul(rho, mul(u_hat, sub(one, u_hat)));
    Tensor residual = sub(du_dt, add(mul(d, lap), reaction));
    return mean(square(residual));
}

/// Boundary-condition loss: d-weighted squared one-sided normal derivatives
/// over the six faces, each face normalised by its voxel count.
inline Tensor bc_loss(const Tensor& u_hat, const BiophysCoefficients& coeffs) {
    return bc_penalty(u_hat, coeffs.d);
}

inline Tensor total_loss(const Tensor& dice, const Tensor& pde, const Tensor& bc,
                         const LossWeights& w) {
    Tape& tape = *dice.tape;
    Tensor l1 = tape.constant(w.lambda1);
    Tensor l2 = tape.constant(w.lambda2);
    return add(dice, add(mul(l1, pde), mul(l2, bc)));
}

// Field3D conveniences for use outside a training graph.
inline double pde_loss(const Field3D& u_hat, const Field3D& du_dt, const BiophysCoefficients& c) {
    Tape tape;
    return pde_loss(tape.constant_field(u_hat), tape.constant_field(du_dt), c).scalar();
}
inline double bc_loss(const Field3D& u_hat, const BiophysCoefficients& c) {
    Tape tape;
    return bc_loss(tape.constant_field(u_hat), c).scalar();
}

}  // namespace biophys
