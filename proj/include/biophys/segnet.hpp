#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "biophys/params.hpp"
#include "biophys/tensor.hpp"

namespace biophys {

struct SegNetConfig {
    int in_channels = 4;
    int base_features = 8;
    int depth = 1;                 // down/upsampling stages
    int bottleneck_channels = 8;   // feature channels handed to the estimator
    int classes = 4;
};

struct SegForward {
    Tensor probs;     // [classes, H, W, D], per-voxel softmax
    Tensor features;  // [bottleneck_channels, H/2^depth, ...]
};

/// Minimal U-shaped 3D segmentation backbone:
/// conv 3^3 + downsample per stage, a bottleneck conv, then upsample + skip
/// concat + conv per stage and a 1^3 softmax head.
class SegNet {
  public:
    SegNet() = default;

    static SegNet init(const SegNetConfig& cfg, ParamStore& store, uint64_t seed,
                       const std::string& prefix = "seg") {
        if (cfg.depth < 1) throw std::invalid_argument("SegNet: depth must be >= 1");
        if (cfg.base_features <= 0 || cfg.bottleneck_channels <= 0)
            throw std::invalid_argument("SegNet: channel counts must be positive");
        SegNet net;
        net.cfg_ = cfg;
        std::mt19937_64 rng(seed);
        auto add_conv = [&](const std::string& name, int cin, int cout) {
            const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * 27.0));
            net.conv_w_.push_back(store.add(prefix + "." + name + ".w", {cout, cin, 3, 3, 3},
                                            detail::uniform_init(rng, static_cast<size_t>(cout) * cin * 27, bound)));
            net.conv_b_.push_back(store.add(prefix + "." + name + ".b", {cout},
                                            std::vector<double>(static_cast<size_t>(cout), 0.0)));
        };
        int cin = cfg.in_channels;
        for (int l = 0; l < cfg.depth; ++l) {
            const int cout = cfg.base_features << l;
            add_conv("enc" + std::to_string(l), cin, cout);
            cin = cout;
        }
        add_conv("bottleneck", cin, cfg.bottleneck_channels);
        int up_in = cfg.bottleneck_channels;
        for (int l = cfg.depth - 1; l >= 0; --l) {
            const int skip = cfg.base_features << l;
            add_conv("dec" + std::to_string(l), up_in + skip, skip);
            up_in = skip;
        }
        const double hb = std::sqrt(6.0 / up_in);
        net.head_w_ = store.add(prefix + ".head.w", {cfg.classes, up_in},
                                detail::uniform_init(rng, static_cast<size_t>(cfg.classes) * up_in, hb));
        net.head_b_ = store.add(prefix + ".head.b", {cfg.classes},
                                std::vector<double>(static_cast<size_t>(cfg.classes), 0.0));
        return net;
    }

    const SegNetConfig& config() const { return cfg_; }

    SegForward forward(Tape& tape, const std::vector<Tensor>& leaves, const Tensor& input) const {
        if (input.shape().size() != 4 || input.shape()[0] != cfg_.in_channels)
            throw std::invalid_argument("SegNet: expected [" + std::to_string(cfg_.in_channels) +
                                        ",H,W,D] input, got " + shape_str(input.shape()));
        const int H = input.shape()[1], W = input.shape()[2], D = input.shape()[3];
        const int div = 1 << cfg_.depth;
        if (H % div || W % div || D % div)
            throw std::invalid_argument("SegNet: extents must be divisible by 2^depth");

        auto conv_relu = [&](int layer, const Tensor& x) {
            Tensor w = leaves[static_cast<size_t>(conv_w_[static_cast<size_t>(layer)])];
            Tensor b = leaves[static_cast<size_t>(conv_b_[static_cast<size_t>(layer)])];
            return relu(conv3d(x, w, &b));
        };

        std::vector<Tensor> skips;
        Tensor x = input;
        int layer = 0;
        for (int l = 0; l < cfg_.depth; ++l) {
            x = conv_relu(layer++, x);
            skips.push_back(x);
            x = avgpool2(x);
        }
        Tensor bottleneck = conv_relu(layer++, x);
        x = bottleneck;
        for (int l = cfg_.depth - 1; l >= 0; --l) {
            x = upsample2(x);
            x = concat_channels(x, skips[static_cast<size_t>(l)]);
            x = conv_relu(layer++, x);
        }
        const int F = x.shape()[0];
        Tensor flat = reshape(x, {F, H * W * D});
        Tensor logits = affine(leaves[static_cast<size_t>(head_w_)], flat,
                               leaves[static_cast<size_t>(head_b_)]);
        Tensor probs = reshape(softmax_channels(logits), {cfg_.classes, H, W, D});
        return SegForward{probs, bottleneck};
    }

  private:
    SegNetConfig cfg_;
    std::vector<int> conv_w_, conv_b_;
    int head_w_ = -1, head_b_ = -1;
};

}  // namespace biophys
