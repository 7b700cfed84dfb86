#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "biophys/params.hpp"
#include "biophys/tensor.hpp"

namespace biophys {

enum class Activation { Sine, Relu };

/// Configuration of the per-voxel density estimator. The network input width
/// is 2*in_channels: the feature channels concatenated with an equal number
/// of time channels all carrying the same scalar t.
struct SirenConfig {
    int in_channels = 8;
    std::vector<int> hidden = {32, 32};
    double omega0 = 30.0;
    double omega = 1.0;
    Activation activation = Activation::Sine;
};

/// Tensors of one pushed-on-tape instantiation of the estimator.
struct SirenTensors {
    std::vector<Tensor> weights;  // per layer, [out,in]
    std::vector<Tensor> biases;   // per layer, [out]
};

/// Per-voxel evaluation result on a grid: density and its time derivative,
/// both as [H,W,D] tensors on the tape.
struct SirenOutput {
    Tensor u_hat;
    Tensor du_dt;
};

class SirenNet {
  public:
    SirenNet() = default;

    /// Registers freshly initialised layer parameters in the store.
    /// First layer: uniform +-omega0/sqrt(fan_in); hidden layers:
    /// uniform +-sqrt(6/fan_in)/omega; final affine layer to width 1;
    /// all biases zero.
    static SirenNet init(const SirenConfig& cfg, ParamStore& store, uint64_t seed,
                         const std::string& prefix = "siren") {
        if (cfg.in_channels <= 0) throw std::invalid_argument("SirenNet: in_channels must be positive");
        for (int h : cfg.hidden)
            if (h <= 0) throw std::invalid_argument("SirenNet: hidden widths must be positive");
        SirenNet net;
        net.cfg_ = cfg;
        std::mt19937_64 rng(seed);
        std::vector<int> widths;
        widths.push_back(2 * cfg.in_channels);
        for (int h : cfg.hidden) widths.push_back(h);
        widths.push_back(1);
        for (size_t l = 0; l + 1 < widths.size(); ++l) {
            const int fan_in = widths[l], fan_out = widths[l + 1];
            double bound;
            if (l == 0)
                bound = cfg.omega0 / std::sqrt(static_cast<double>(fan_in));
            else
                bound = std::sqrt(6.0 / fan_in) / cfg.omega;
            auto w = detail::uniform_init(rng, static_cast<size_t>(fan_out) * fan_in, bound);
            net.weight_ids_.push_back(store.add(prefix + ".w" + std::to_string(l), {fan_out, fan_in},
                                                std::move(w)));
            net.bias_ids_.push_back(store.add(prefix + ".b" + std::to_string(l), {fan_out},
                                              std::vector<double>(static_cast<size_t>(fan_out), 0.0)));
        }
        return net;
    }

    const SirenConfig& config() const { return cfg_; }
    int num_layers() const { return static_cast<int>(weight_ids_.size()); }

    SirenTensors gather(const std::vector<Tensor>& leaves) const {
        SirenTensors t;
        for (int id : weight_ids_) t.weights.push_back(leaves[static_cast<size_t>(id)]);
        for (int id : bias_ids_) t.biases.push_back(leaves[static_cast<size_t>(id)]);
        return t;
    }

    /// Evaluates density and its time derivative over a feature grid.
    /// features: [C,H,W,D] tensor of backbone activations; t in [0,1].
    /// The derivative is carried through the layers alongside the value:
    /// every time channel holds the same t, so d/dt of the input is one on
    /// those channels, and each sine layer maps (a, da/dt) to
    /// (sin(z), cos(z) * dz/dt) with z = W a + b.
    SirenOutput evaluate(Tape& tape, const SirenTensors& p, const Tensor& features, double t) const {
        if (features.shape().size() != 4 || features.shape()[0] != cfg_.in_channels)
            throw std::invalid_argument("SirenNet: expected [" + std::to_string(cfg_.in_channels) +
                                        ",H,W,D] features, got " + shape_str(features.shape()));
        if (t < 0.0 || t > 1.0) throw std::invalid_argument("SirenNet: t must be in [0,1]");
        const int C = cfg_.in_channels;
        const int H = features.shape()[1], W = features.shape()[2], D = features.shape()[3];
        const int V = H * W * D;

        Tensor x = reshape(features, {C, V});
        Tensor tmat = tape.leaf({C, V}, std::vector<double>(static_cast<size_t>(C) * V, t), false);
        Tensor a = concat_channels(x, tmat);
        // d(input)/dt: zero on feature channels, one on time channels
        std::vector<double> dot0(static_cast<size_t>(2 * C) * V, 0.0);
        std::fill(dot0.begin() + static_cast<size_t>(C) * V, dot0.end(), 1.0);
        Tensor adot = tape.leaf({2 * C, V}, std::move(dot0), false);

        const int L = num_layers();
        for (int l = 0; l < L - 1; ++l) {
            Tensor z = affine(p.weights[static_cast<size_t>(l)], a, p.biases[static_cast<size_t>(l)]);
            Tensor zdot = linear(p.weights[static_cast<size_t>(l)], adot);
            if (cfg_.activation == Activation::Sine) {
                a = sin(z);
                adot = mul(cos(z), zdot);
            } else {
                a = relu(z);
                // d relu(z)/dt = 1{z>0} * dz/dt, realised as relu'(z) via
                // the ratio relu(z)/z on the support; use a mask built from
                // forward values to keep the tape primitive-only.
                std::vector<double> mask(z.size());
                const auto& zv = z.value();
                for (size_t i = 0; i < mask.size(); ++i) mask[i] = zv[i] > 0.0 ? 1.0 : 0.0;
                Tensor m = tape.leaf(z.shape(), std::move(mask), false);
                adot = mul(m, zdot);
            }
        }
        Tensor u = affine(p.weights[static_cast<size_t>(L - 1)], a, p.biases[static_cast<size_t>(L - 1)]);
        Tensor udot = linear(p.weights[static_cast<size_t>(L - 1)], adot);
        return SirenOutput{reshape(u, {H, W, D}), reshape(udot, {H, W, D})};
    }

  private:
    SirenConfig cfg_;
    std::vector<int> weight_ids_;
    std::vector<int> bias_ids_;
};

}  // namespace biophys
