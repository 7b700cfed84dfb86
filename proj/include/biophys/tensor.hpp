#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "biophys/field.hpp"

namespace biophys {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int e : s) {
        if (e <= 0) throw std::invalid_argument("shape extents must be positive");
        n *= static_cast<size_t>(e);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Sigmoid,
    Relu,
    Square,
    Sum,
    Mean,
    SumCh,
    Matmul,
    Affine,
    Linear,
    Conv3d,
    AvgPool2,
    Upsample2,
    ConcatCh,
    SoftmaxCh,
    BcPenalty,
    Reshape,
};

struct TapeNode {
    OpKind op;
    Shape shape;
    std::vector<int> in;
    std::vector<double> val;
    std::vector<double> grad;  // filled by backward; empty means zero / unreached
    std::vector<double> aux;   // op-specific constants (e.g. BC weight field)
    bool needs_grad = false;
};

class Tape;

/// Lightweight handle into a Tape node.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;

    const Shape& shape() const;
    const std::vector<double>& value() const;
    size_t size() const;
    double scalar() const;
};

class Tape {
  public:
    Tensor leaf(Shape shape, std::vector<double> data, bool needs_grad = false) {
        const size_t n = shape_numel(shape);
        if (n != data.size())
            throw std::invalid_argument("leaf: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(data.size()) + " values");
        TapeNode node;
        node.op = OpKind::Leaf;
        node.shape = std::move(shape);
        node.val = std::move(data);
        node.needs_grad = needs_grad;
        nodes_.push_back(std::move(node));
        return Tensor{this, static_cast<int>(nodes_.size()) - 1};
    }

    Tensor constant(double v) { return leaf({1}, {v}, false); }

    Tensor constant_field(const Field3D& f) {
        return leaf({f.H, f.W, f.D}, f.data, false);
    }

    int push(TapeNode node) {
        nodes_.push_back(std::move(node));
        return static_cast<int>(nodes_.size()) - 1;
    }

    TapeNode& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const TapeNode& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t num_nodes() const { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar root. Adjoints are stored per node;
    /// nodes not reachable from the root keep a zero adjoint.
    void backward(const Tensor& root);

    /// Adjoint of a tensor after backward; zeros if the node was unreached.
    std::vector<double> grad(const Tensor& t) const {
        const TapeNode& n = nodes_[static_cast<size_t>(t.id)];
        if (n.grad.empty()) return std::vector<double>(n.val.size(), 0.0);
        return n.grad;
    }

  private:
    std::vector<TapeNode> nodes_;
};

inline const Shape& Tensor::shape() const { return tape->node(id).shape; }
inline const std::vector<double>& Tensor::value() const { return tape->node(id).val; }
inline size_t Tensor::size() const { return tape->node(id).val.size(); }
inline double Tensor::scalar() const {
    if (size() != 1) throw std::invalid_argument("scalar(): tensor has " + std::to_string(size()) + " elements");
    return value()[0];
}

// ---------------------------------------------------------------------------
// op construction helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_tape(const Tensor& a, const Tensor& b) {
    if (a.tape != b.tape) throw std::invalid_argument("tensors belong to different tapes");
}

inline Tensor make_node(Tape& t, OpKind op, Shape shape, std::vector<int> in,
                        std::vector<double> val, std::vector<double> aux = {}) {
    TapeNode node;
    node.op = op;
    node.shape = std::move(shape);
    node.in = std::move(in);
    node.val = std::move(val);
    node.aux = std::move(aux);
    for (int i : node.in) node.needs_grad = node.needs_grad || t.node(i).needs_grad;
    return Tensor{&t, t.push(std::move(node))};
}

// Elementwise binary with scalar (1-element) broadcast on either side.
template <class F>
Tensor ewise_binary(OpKind op, const Tensor& a, const Tensor& b, F&& f) {
    require_same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    const bool a_scalar = av.size() == 1, b_scalar = bv.size() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
        throw std::invalid_argument("elementwise op: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const size_t n = std::max(av.size(), bv.size());
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) f(out[i], av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    Shape shape = a_scalar ? b.shape() : a.shape();
    return make_node(*a.tape, op, std::move(shape), {a.id, b.id}, std::move(out));
}

template <class F>
Tensor ewise_unary(OpKind op, const Tensor& a, F&& f) {
    const auto& av = a.value();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return make_node(*a.tape, op, a.shape(), {a.id}, std::move(out));
}

/// Reflect-pad one channel into an (H+2)(W+2)(D+2) buffer.
inline void pad_reflect(const double* src, int H, int W, int D, std::vector<double>& dst) {
    const int Wp = W + 2, Dp = D + 2;
    dst.assign(static_cast<size_t>(H + 2) * Wp * Dp, 0.0);
    for (int x = -1; x <= H; ++x) {
        const int sx = biophys::detail::reflect(x, H);
        for (int y = -1; y <= W; ++y) {
            const int sy = biophys::detail::reflect(y, W);
            const double* row = src + (static_cast<size_t>(sx) * W + sy) * D;
            double* prow = dst.data() + (static_cast<size_t>(x + 1) * Wp + (y + 1)) * Dp;
            prow[0] = row[0];
            std::copy(row, row + D, prow + 1);
            prow[D + 1] = row[D - 1];
        }
    }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::ewise_binary(OpKind::Add, a, b, [](double& o, double x, double y) { o = x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::ewise_binary(OpKind::Sub, a, b, [](double& o, double x, double y) { o = x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::ewise_binary(OpKind::Mul, a, b, [](double& o, double x, double y) { o = x * y; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::ewise_binary(OpKind::Div, a, b, [](double& o, double x, double y) { o = x / y; });
}
inline Tensor neg(const Tensor& a) {
    return detail::ewise_unary(OpKind::Neg, a, [](double x) { return -x; });
}
inline Tensor sin(const Tensor& a) {
    return detail::ewise_unary(OpKind::Sin, a, [](double x) { return std::sin(x); });
}
inline Tensor cos(const Tensor& a) {
    return detail::ewise_unary(OpKind::Cos, a, [](double x) { return std::cos(x); });
}
inline Tensor exp(const Tensor& a) {
    return detail::ewise_unary(OpKind::Exp, a, [](double x) { return std::exp(x); });
}
inline Tensor sigmoid(const Tensor& a) {
    return detail::ewise_unary(OpKind::Sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Tensor relu(const Tensor& a) {
    return detail::ewise_unary(OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}
inline Tensor square(const Tensor& a) {
    return detail::ewise_unary(OpKind::Square, a, [](double x) { return x * x; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.value()) s += v;
    return detail::make_node(*a.tape, OpKind::Sum, {1}, {a.id}, {s});
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.value()) s += v;
    return detail::make_node(*a.tape, OpKind::Mean, {1}, {a.id},
                             {s / static_cast<double>(a.size())});
}

/// Per-channel sums of a channel-major tensor: [C, ...] -> [C].
inline Tensor sum_channels(const Tensor& a) {
    if (a.shape().empty()) throw std::invalid_argument("sum_channels: rank-0 tensor");
    const int C = a.shape()[0];
    const size_t V = a.size() / static_cast<size_t>(C);
    std::vector<double> out(static_cast<size_t>(C), 0.0);
    const auto& av = a.value();
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        const double* p = av.data() + static_cast<size_t>(c) * V;
        for (size_t i = 0; i < V; ++i) s += p[i];
        out[static_cast<size_t>(c)] = s;
    }
    return detail::make_node(*a.tape, OpKind::SumCh, {C}, {a.id}, std::move(out));
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                    " -> " + shape_str(shape));
    return detail::make_node(*a.tape, OpKind::Reshape, std::move(shape), {a.id}, a.value());
}

/// Plain matrix product: A [N,M] x B [M,K] -> [N,K].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b);
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const int N = a.shape()[0], M = a.shape()[1], K = b.shape()[1];
    std::vector<double> out(static_cast<size_t>(N) * K, 0.0);
    const auto& av = a.value();
    const auto& bv = b.value();
    for (int i = 0; i < N; ++i)
        for (int m = 0; m < M; ++m) {
            const double x = av[static_cast<size_t>(i) * M + m];
            const double* brow = bv.data() + static_cast<size_t>(m) * K;
            double* orow = out.data() + static_cast<size_t>(i) * K;
            for (int k = 0; k < K; ++k) orow[k] += x * brow[k];
        }
    return detail::make_node(*a.tape, OpKind::Matmul, {N, K}, {a.id, b.id}, std::move(out));
}

namespace detail {
inline Tensor dense_layer(OpKind op, const Tensor& w, const Tensor& x, const Tensor* b) {
    require_same_tape(w, x);
    if (w.shape().size() != 2 || x.shape().size() != 2 || w.shape()[1] != x.shape()[0])
        throw std::invalid_argument("affine: incompatible shapes W" + shape_str(w.shape()) +
                                    " x X" + shape_str(x.shape()));
    const int N = w.shape()[0], M = w.shape()[1], V = x.shape()[1];
    std::vector<int> in{w.id, x.id};
    std::vector<double> out(static_cast<size_t>(N) * V, 0.0);
    const auto& wv = w.value();
    const auto& xv = x.value();
    for (int n = 0; n < N; ++n) {
        double* orow = out.data() + static_cast<size_t>(n) * V;
        for (int m = 0; m < M; ++m) {
            const double wnm = wv[static_cast<size_t>(n) * M + m];
            const double* xrow = xv.data() + static_cast<size_t>(m) * V;
            for (int v = 0; v < V; ++v) orow[v] += wnm * xrow[v];
        }
    }
    if (b) {
        require_same_tape(w, *b);
        if (b->size() != static_cast<size_t>(N))
            throw std::invalid_argument("affine: bias size mismatch");
        const auto& bv = b->value();
        for (int n = 0; n < N; ++n) {
            double* orow = out.data() + static_cast<size_t>(n) * V;
            for (int v = 0; v < V; ++v) orow[v] += bv[static_cast<size_t>(n)];
        }
        in.push_back(b->id);
    }
    return make_node(*w.tape, op, {N, V}, std::move(in), std::move(out));
}
}  // namespace detail

/// Column-batched affine layer: W [N,M] applied to X [M,V] plus bias [N].
inline Tensor affine(const Tensor& w, const Tensor& x, const Tensor& b) {
    return detail::dense_layer(OpKind::Affine, w, x, &b);
}
/// Same without the bias.
inline Tensor linear(const Tensor& w, const Tensor& x) {
    return detail::dense_layer(OpKind::Linear, w, x, nullptr);
}

/// 3x3x3 convolution with stride 1 and reflect boundary.
/// x: [Cin,H,W,D], w: [Cout,Cin,3,3,3], optional bias [Cout].
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
    detail::require_same_tape(x, w);
    if (x.shape().size() != 4) throw std::invalid_argument("conv3d: input must be [C,H,W,D]");
    if (w.shape().size() != 5 || w.shape()[2] != 3 || w.shape()[3] != 3 || w.shape()[4] != 3 ||
        w.shape()[1] != x.shape()[0])
        throw std::invalid_argument("conv3d: weight must be [Cout,Cin,3,3,3] with Cin matching, got " +
                                    shape_str(w.shape()) + " for input " + shape_str(x.shape()));
    const int Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    const int Cout = w.shape()[0];
    const size_t V = static_cast<size_t>(H) * W * D;
    const int Wp = W + 2, Dp = D + 2;

    std::vector<std::vector<double>> pads(static_cast<size_t>(Cin));
    for (int ic = 0; ic < Cin; ++ic)
        detail::pad_reflect(x.value().data() + static_cast<size_t>(ic) * V, H, W, D, pads[static_cast<size_t>(ic)]);

    std::vector<double> out(static_cast<size_t>(Cout) * V, 0.0);
    const auto& wv = w.value();
    for (int oc = 0; oc < Cout; ++oc) {
        double* od = out.data() + static_cast<size_t>(oc) * V;
        if (bias) std::fill(od, od + V, bias->value()[static_cast<size_t>(oc)]);
        for (int ic = 0; ic < Cin; ++ic) {
            const double* pad = pads[static_cast<size_t>(ic)].data();
            const double* wk = wv.data() + (static_cast<size_t>(oc) * Cin + ic) * 27;
            for (int xx = 0; xx < H; ++xx)
                for (int yy = 0; yy < W; ++yy) {
                    double* __restrict dst = od + (static_cast<size_t>(xx) * W + yy) * D;
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b) {
                            const double* __restrict src =
                                pad + (static_cast<size_t>(xx + a) * Wp + (yy + b)) * Dp;
                            const double w0 = wk[(a * 3 + b) * 3];
                            const double w1 = wk[(a * 3 + b) * 3 + 1];
                            const double w2 = wk[(a * 3 + b) * 3 + 2];
                            for (int zz = 0; zz < D; ++zz)
                                dst[zz] += w0 * src[zz] + w1 * src[zz + 1] + w2 * src[zz + 2];
                        }
                }
        }
    }
    std::vector<int> in{x.id, w.id};
    if (bias) {
        detail::require_same_tape(x, *bias);
        in.push_back(bias->id);
    }
    return detail::make_node(*x.tape, OpKind::Conv3d, {Cout, H, W, D}, std::move(in), std::move(out));
}

/// 2x average pooling on [C,H,W,D]; extents must be even.
inline Tensor avgpool2(const Tensor& x) {
    if (x.shape().size() != 4) throw std::invalid_argument("avgpool2: input must be [C,H,W,D]");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    if (H % 2 || W % 2 || D % 2)
        throw std::invalid_argument("avgpool2: extents must be even, got " + shape_str(x.shape()));
    const int Ho = H / 2, Wo = W / 2, Do = D / 2;
    std::vector<double> out(static_cast<size_t>(C) * Ho * Wo * Do, 0.0);
    const auto& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int xo = 0; xo < Ho; ++xo)
            for (int yo = 0; yo < Wo; ++yo)
                for (int zo = 0; zo < Do; ++zo) {
                    double s = 0.0;
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz)
                                s += xv[((static_cast<size_t>(c) * H + (2 * xo + dx)) * W +
                                         (2 * yo + dy)) * D + (2 * zo + dz)];
                    out[((static_cast<size_t>(c) * Ho + xo) * Wo + yo) * Do + zo] = s / 8.0;
                }
    return detail::make_node(*x.tape, OpKind::AvgPool2, {C, Ho, Wo, Do}, {x.id}, std::move(out));
}

/// 2x nearest-neighbour upsampling on [C,H,W,D].
inline Tensor upsample2(const Tensor& x) {
    if (x.shape().size() != 4) throw std::invalid_argument("upsample2: input must be [C,H,W,D]");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    const int Ho = 2 * H, Wo = 2 * W, Do = 2 * D;
    std::vector<double> out(static_cast<size_t>(C) * Ho * Wo * Do);
    const auto& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int xo = 0; xo < Ho; ++xo)
            for (int yo = 0; yo < Wo; ++yo) {
                const double* src = xv.data() + ((static_cast<size_t>(c) * H + xo / 2) * W + yo / 2) * D;
                double* dst = out.data() + ((static_cast<size_t>(c) * Ho + xo) * Wo + yo) * Do;
                for (int zo = 0; zo < Do; ++zo) dst[zo] = src[zo / 2];
            }
    return detail::make_node(*x.tape, OpKind::Upsample2, {C, Ho, Wo, Do}, {x.id}, std::move(out));
}

/// Concatenate two channel-major tensors along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b);
    if (a.shape().size() != b.shape().size() || a.shape().empty())
        throw std::invalid_argument("concat_channels: rank mismatch");
    for (size_t i = 1; i < a.shape().size(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw std::invalid_argument("concat_channels: trailing dims differ " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Shape shape = a.shape();
    shape[0] += b.shape()[0];
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.value().begin(), a.value().end());
    out.insert(out.end(), b.value().begin(), b.value().end());
    return detail::make_node(*a.tape, OpKind::ConcatCh, std::move(shape), {a.id, b.id}, std::move(out));
}

/// Per-voxel softmax across the channel axis of a channel-major tensor.
inline Tensor softmax_channels(const Tensor& x) {
    if (x.shape().empty()) throw std::invalid_argument("softmax_channels: rank-0 tensor");
    const int C = x.shape()[0];
    const size_t V = x.size() / static_cast<size_t>(C);
    std::vector<double> out(x.size());
    const auto& xv = x.value();
    for (size_t v = 0; v < V; ++v) {
        double mx = xv[v];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xv[static_cast<size_t>(c) * V + v]);
        double den = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(xv[static_cast<size_t>(c) * V + v] - mx);
            out[static_cast<size_t>(c) * V + v] = e;
            den += e;
        }
        for (int c = 0; c < C; ++c) out[static_cast<size_t>(c) * V + v] /= den;
    }
    return detail::make_node(*x.tape, OpKind::SoftmaxCh, x.shape(), {x.id}, std::move(out));
}

/// Boundary-condition penalty on a [H,W,D] tensor: d-weighted squared
/// one-sided normal derivatives over the six faces, each face normalised by
/// its voxel count. Returns a scalar.
inline Tensor bc_penalty(const Tensor& u, const Field3D& d) {
    if (u.shape().size() != 3) throw std::invalid_argument("bc_penalty: input must be [H,W,D]");
    const int H = u.shape()[0], W = u.shape()[1], D = u.shape()[2];
    if (H < 2 || W < 2 || D < 2)
        throw std::invalid_argument("bc_penalty: every axis extent must be >= 2");
    if (d.H != H || d.W != W || d.D != D)
        throw std::invalid_argument("bc_penalty: coefficient field dims mismatch");
    const auto& uv = u.value();
    const double inv_h2 = 1.0 / (d.spacing * d.spacing);
    auto at = [&](int x, int y, int z) { return uv[(static_cast<size_t>(x) * W + y) * D + z]; };
    double L = 0.0;
    const double wx = 1.0 / (static_cast<double>(W) * D);
    const double wy = 1.0 / (static_cast<double>(H) * D);
    const double wz = 1.0 / (static_cast<double>(H) * W);
    for (int y = 0; y < W; ++y)
        for (int z = 0; z < D; ++z) {
            double g0 = at(1, y, z) - at(0, y, z);
            double g1 = at(H - 1, y, z) - at(H - 2, y, z);
            L += wx * inv_h2 * (d.at(0, y, z) * g0 * g0 + d.at(H - 1, y, z) * g1 * g1);
        }
    for (int x = 0; x < H; ++x)
        for (int z = 0; z < D; ++z) {
            double g0 = at(x, 1, z) - at(x, 0, z);
            double g1 = at(x, W - 1, z) - at(x, W - 2, z);
            L += wy * inv_h2 * (d.at(x, 0, z) * g0 * g0 + d.at(x, W - 1, z) * g1 * g1);
        }
    for (int x = 0; x < H; ++x)
        for (int y = 0; y < W; ++y) {
            double g0 = at(x, y, 1) - at(x, y, 0);
            double g1 = at(x, y, D - 1) - at(x, y, D - 2);
            L += wz * inv_h2 * (d.at(x, y, 0) * g0 * g0 + d.at(x, y, D - 1) * g1 * g1);
        }
    std::vector<double> aux;
    aux.reserve(1 + d.data.size());
    aux.push_back(d.spacing);
    aux.insert(aux.end(), d.data.begin(), d.data.end());
    return detail::make_node(*u.tape, OpKind::BcPenalty, {1}, {u.id}, {L}, std::move(aux));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void Tape::backward(const Tensor& root) {
    if (root.tape != this) throw std::invalid_argument("backward: root from another tape");
    TapeNode& rn = nodes_[static_cast<size_t>(root.id)];
    if (rn.val.size() != 1) throw std::invalid_argument("backward: root must be scalar, has shape " + shape_str(rn.shape));
    for (auto& n : nodes_) n.grad.clear();
    rn.grad.assign(1, 1.0);

    auto ensure = [&](int id) -> std::vector<double>& {
        TapeNode& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
        return n.grad;
    };

    for (int id = root.id; id >= 0; --id) {
        TapeNode& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty() || !n.needs_grad || n.op == OpKind::Leaf) continue;
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case OpKind::Add:
            case OpKind::Sub: {
                const double sign = n.op == OpKind::Sub ? -1.0 : 1.0;
                for (int side = 0; side < 2; ++side) {
                    const int in_id = n.in[static_cast<size_t>(side)];
                    if (!nodes_[static_cast<size_t>(in_id)].needs_grad) continue;
                    auto& ig = ensure(in_id);
                    const double s = side == 1 ? sign : 1.0;
                    if (ig.size() == g.size())
                        for (size_t i = 0; i < g.size(); ++i) ig[i] += s * g[i];
                    else  // scalar broadcast
                        for (size_t i = 0; i < g.size(); ++i) ig[0] += s * g[i];
                }
                break;
            }
            case OpKind::Mul:
            case OpKind::Div: {
                const TapeNode& a = nodes_[static_cast<size_t>(n.in[0])];
                const TapeNode& b = nodes_[static_cast<size_t>(n.in[1])];
                const bool as = a.val.size() == 1, bs = b.val.size() == 1;
                if (a.needs_grad) {
                    auto& ag = ensure(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) {
                        const double bv = b.val[bs ? 0 : i];
                        const double contrib = n.op == OpKind::Mul ? g[i] * bv : g[i] / bv;
                        ag[as ? 0 : i] += contrib;
                    }
                }
                if (b.needs_grad) {
                    auto& bg = ensure(n.in[1]);
                    for (size_t i = 0; i < g.size(); ++i) {
                        const double av = a.val[as ? 0 : i];
                        const double bv = b.val[bs ? 0 : i];
                        const double contrib = n.op == OpKind::Mul ? g[i] * av
                                                                   : -g[i] * av / (bv * bv);
                        bg[bs ? 0 : i] += contrib;
                    }
                }
                break;
            }
            case OpKind::Neg: {
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] -= g[i];
                break;
            }
            case OpKind::Sin: {
                const auto& xv = nodes_[static_cast<size_t>(n.in[0])].val;
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * std::cos(xv[i]);
                break;
            }
            case OpKind::Cos: {
                const auto& xv = nodes_[static_cast<size_t>(n.in[0])].val;
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] -= g[i] * std::sin(xv[i]);
                break;
            }
            case OpKind::Exp: {
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * n.val[i];
                break;
            }
            case OpKind::Sigmoid: {
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
                break;
            }
            case OpKind::Relu: {
                const auto& xv = nodes_[static_cast<size_t>(n.in[0])].val;
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i)
                    if (xv[i] > 0.0) ig[i] += g[i];
                break;
            }
            case OpKind::Square: {
                const auto& xv = nodes_[static_cast<size_t>(n.in[0])].val;
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] += 2.0 * g[i] * xv[i];
                break;
            }
            case OpKind::Sum: {
                auto& ig = ensure(n.in[0]);
                for (double& v : ig) v += g[0];
                break;
            }
            case OpKind::Mean: {
                auto& ig = ensure(n.in[0]);
                const double s = g[0] / static_cast<double>(ig.size());
                for (double& v : ig) v += s;
                break;
            }
            case OpKind::SumCh: {
                auto& ig = ensure(n.in[0]);
                const size_t C = g.size();
                const size_t V = ig.size() / C;
                for (size_t c = 0; c < C; ++c) {
                    double* p = ig.data() + c * V;
                    for (size_t i = 0; i < V; ++i) p[i] += g[c];
                }
                break;
            }
            case OpKind::Reshape: {
                auto& ig = ensure(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
                break;
            }
            case OpKind::Matmul: {
                const TapeNode& a = nodes_[static_cast<size_t>(n.in[0])];
                const TapeNode& b = nodes_[static_cast<size_t>(n.in[1])];
                const int N = a.shape[0], M = a.shape[1], K = b.shape[1];
                if (a.needs_grad) {
                    auto& ag = ensure(n.in[0]);
                    for (int i = 0; i < N; ++i)
                        for (int m = 0; m < M; ++m) {
                            double s = 0.0;
                            const double* grow = g.data() + static_cast<size_t>(i) * K;
                            const double* brow = b.val.data() + static_cast<size_t>(m) * K;
                            for (int k = 0; k < K; ++k) s += grow[k] * brow[k];
                            ag[static_cast<size_t>(i) * M + m] += s;
                        }
                }
                if (b.needs_grad) {
                    auto& bg = ensure(n.in[1]);
                    for (int m = 0; m < M; ++m)
                        for (int i = 0; i < N; ++i) {
                            const double av = a.val[static_cast<size_t>(i) * M + m];
                            const double* grow = g.data() + static_cast<size_t>(i) * K;
                            double* brow = bg.data() + static_cast<size_t>(m) * K;
                            for (int k = 0; k < K; ++k) brow[k] += av * grow[k];
                        }
                }
                break;
            }
            case OpKind::Affine:
            case OpKind::Linear: {
                const TapeNode& w = nodes_[static_cast<size_t>(n.in[0])];
                const TapeNode& x = nodes_[static_cast<size_t>(n.in[1])];
                const int N = w.shape[0], M = w.shape[1], V = x.shape[1];
                if (w.needs_grad) {
                    auto& wg = ensure(n.in[0]);
                    for (int nn = 0; nn < N; ++nn)
                        for (int m = 0; m < M; ++m) {
                            double s = 0.0;
                            const double* grow = g.data() + static_cast<size_t>(nn) * V;
                            const double* xrow = x.val.data() + static_cast<size_t>(m) * V;
                            for (int v = 0; v < V; ++v) s += grow[v] * xrow[v];
                            wg[static_cast<size_t>(nn) * M + m] += s;
                        }
                }
                if (x.needs_grad) {
                    auto& xg = ensure(n.in[1]);
                    for (int nn = 0; nn < N; ++nn) {
                        const double* grow = g.data() + static_cast<size_t>(nn) * V;
                        for (int m = 0; m < M; ++m) {
                            const double wnm = w.val[static_cast<size_t>(nn) * M + m];
                            double* xrow = xg.data() + static_cast<size_t>(m) * V;
                            for (int v = 0; v < V; ++v) xrow[v] += wnm * grow[v];
                        }
                    }
                }
                if (n.op == OpKind::Affine && nodes_[static_cast<size_t>(n.in[2])].needs_grad) {
                    auto& bg = ensure(n.in[2]);
                    for (int nn = 0; nn < N; ++nn) {
                        double s = 0.0;
                        const double* grow = g.data() + static_cast<size_t>(nn) * V;
                        for (int v = 0; v < V; ++v) s += grow[v];
                        bg[static_cast<size_t>(nn)] += s;
                    }
                }
                break;
            }
            case OpKind::Conv3d: {
                const TapeNode& x = nodes_[static_cast<size_t>(n.in[0])];
                const TapeNode& w = nodes_[static_cast<size_t>(n.in[1])];
                const int Cin = x.shape[0], H = x.shape[1], W = x.shape[2], D = x.shape[3];
                const int Cout = w.shape[0];
                const size_t V = static_cast<size_t>(H) * W * D;
                const int Wp = W + 2, Dp = D + 2;
                const bool need_x = x.needs_grad, need_w = w.needs_grad;
                std::vector<double> pad;
                std::vector<double> gpad;
                std::vector<double>* wg = nullptr;
                if (need_w) wg = &ensure(n.in[1]);
                std::vector<double>* xg = nullptr;
                if (need_x) xg = &ensure(n.in[0]);
                for (int ic = 0; ic < Cin; ++ic) {
                    if (need_w)
                        detail::pad_reflect(x.val.data() + static_cast<size_t>(ic) * V, H, W, D, pad);
                    if (need_x) gpad.assign(static_cast<size_t>(H + 2) * Wp * Dp, 0.0);
                    for (int oc = 0; oc < Cout; ++oc) {
                        const double* go = g.data() + static_cast<size_t>(oc) * V;
                        const double* wk = w.val.data() + (static_cast<size_t>(oc) * Cin + ic) * 27;
                        if (need_w) {
                            double* wkg = wg->data() + (static_cast<size_t>(oc) * Cin + ic) * 27;
                            std::vector<double> acc(static_cast<size_t>(27) * D, 0.0);
                            for (int xx = 0; xx < H; ++xx)
                                for (int yy = 0; yy < W; ++yy) {
                                    const double* __restrict grow =
                                        go + (static_cast<size_t>(xx) * W + yy) * D;
                                    for (int a = 0; a < 3; ++a)
                                        for (int b = 0; b < 3; ++b) {
                                            const double* __restrict prow =
                                                pad.data() +
                                                (static_cast<size_t>(xx + a) * Wp + (yy + b)) * Dp;
                                            double* __restrict t0 =
                                                acc.data() + static_cast<size_t>((a * 3 + b) * 3) * D;
                                            double* __restrict t1 = t0 + D;
                                            double* __restrict t2 = t1 + D;
                                            for (int zz = 0; zz < D; ++zz) {
                                                t0[zz] += grow[zz] * prow[zz];
                                                t1[zz] += grow[zz] * prow[zz + 1];
                                                t2[zz] += grow[zz] * prow[zz + 2];
                                            }
                                        }
                                }
                            for (int k = 0; k < 27; ++k) {
                                double s = 0.0;
                                const double* t = acc.data() + static_cast<size_t>(k) * D;
                                for (int zz = 0; zz < D; ++zz) s += t[zz];
                                wkg[k] += s;
                            }
                        }
                        if (need_x) {
                            for (int xx = 0; xx < H; ++xx)
                                for (int yy = 0; yy < W; ++yy) {
                                    const double* __restrict grow =
                                        go + (static_cast<size_t>(xx) * W + yy) * D;
                                    for (int a = 0; a < 3; ++a)
                                        for (int b = 0; b < 3; ++b) {
                                            double* __restrict gprow =
                                                gpad.data() +
                                                (static_cast<size_t>(xx + a) * Wp + (yy + b)) * Dp;
                                            const double w0 = wk[(a * 3 + b) * 3];
                                            const double w1 = wk[(a * 3 + b) * 3 + 1];
                                            const double w2 = wk[(a * 3 + b) * 3 + 2];
                                            for (int zz = 0; zz < D; ++zz) gprow[zz] += w0 * grow[zz];
                                            for (int zz = 0; zz < D; ++zz) gprow[zz + 1] += w1 * grow[zz];
                                            for (int zz = 0; zz < D; ++zz) gprow[zz + 2] += w2 * grow[zz];
                                        }
                                }
                        }
                    }
                    if (need_x) {
                        // fold padded adjoints back through the reflect map
                        double* dst = xg->data() + static_cast<size_t>(ic) * V;
                        for (int px = 0; px < H + 2; ++px) {
                            const int sx = biophys::detail::reflect(px - 1, H);
                            for (int py = 0; py < Wp; ++py) {
                                const int sy = biophys::detail::reflect(py - 1, W);
                                const double* srow =
                                    gpad.data() + (static_cast<size_t>(px) * Wp + py) * Dp;
                                double* drow = dst + (static_cast<size_t>(sx) * W + sy) * D;
                                drow[0] += srow[0];
                                for (int zz = 0; zz < D; ++zz) drow[zz] += srow[zz + 1];
                                drow[D - 1] += srow[D + 1];
                            }
                        }
                    }
                }
                if (n.in.size() == 3 && nodes_[static_cast<size_t>(n.in[2])].needs_grad) {
                    auto& bg = ensure(n.in[2]);
                    for (int oc = 0; oc < Cout; ++oc) {
                        double s = 0.0;
                        const double* go = g.data() + static_cast<size_t>(oc) * V;
                        for (size_t i = 0; i < V; ++i) s += go[i];
                        bg[static_cast<size_t>(oc)] += s;
                    }
                }
                break;
            }
            case OpKind::AvgPool2: {
                const TapeNode& x = nodes_[static_cast<size_t>(n.in[0])];
                const int C = x.shape[0], H = x.shape[1], W = x.shape[2], D = x.shape[3];
                const int Ho = H / 2, Wo = W / 2, Do = D / 2;
                auto& ig = ensure(n.in[0]);
                for (int c = 0; c < C; ++c)
                    for (int xo = 0; xo < Ho; ++xo)
                        for (int yo = 0; yo < Wo; ++yo)
                            for (int zo = 0; zo < Do; ++zo) {
                                const double gv =
                                    g[((static_cast<size_t>(c) * Ho + xo) * Wo + yo) * Do + zo] / 8.0;
                                for (int dx = 0; dx < 2; ++dx)
                                    for (int dy = 0; dy < 2; ++dy)
                                        for (int dz = 0; dz < 2; ++dz)
                                            ig[((static_cast<size_t>(c) * H + (2 * xo + dx)) * W +
                                                (2 * yo + dy)) * D + (2 * zo + dz)] += gv;
                            }
                break;
            }
            case OpKind::Upsample2: {
                const TapeNode& x = nodes_[static_cast<size_t>(n.in[0])];
                const int C = x.shape[0], H = x.shape[1], W = x.shape[2], D = x.shape[3];
                const int Ho = 2 * H, Wo = 2 * W, Do = 2 * D;
                auto& ig = ensure(n.in[0]);
                for (int c = 0; c < C; ++c)
                    for (int xo = 0; xo < Ho; ++xo)
                        for (int yo = 0; yo < Wo; ++yo) {
                            const double* grow =
                                g.data() + ((static_cast<size_t>(c) * Ho + xo) * Wo + yo) * Do;
                            double* irow =
                                ig.data() + ((static_cast<size_t>(c) * H + xo / 2) * W + yo / 2) * D;
                            for (int zo = 0; zo < Do; ++zo) irow[zo / 2] += grow[zo];
                        }
                break;
            }
            case OpKind::ConcatCh: {
                const TapeNode& a = nodes_[static_cast<size_t>(n.in[0])];
                const TapeNode& b = nodes_[static_cast<size_t>(n.in[1])];
                if (a.needs_grad) {
                    auto& ag = ensure(n.in[0]);
                    for (size_t i = 0; i < a.val.size(); ++i) ag[i] += g[i];
                }
                if (b.needs_grad) {
                    auto& bg = ensure(n.in[1]);
                    for (size_t i = 0; i < b.val.size(); ++i) bg[i] += g[a.val.size() + i];
                }
                break;
            }
            case OpKind::SoftmaxCh: {
                const int C = n.shape[0];
                const size_t V = n.val.size() / static_cast<size_t>(C);
                auto& ig = ensure(n.in[0]);
                for (size_t v = 0; v < V; ++v) {
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const size_t i = static_cast<size_t>(c) * V + v;
                        dot += g[i] * n.val[i];
                    }
                    for (int c = 0; c < C; ++c) {
                        const size_t i = static_cast<size_t>(c) * V + v;
                        ig[i] += n.val[i] * (g[i] - dot);
                    }
                }
                break;
            }
            case OpKind::BcPenalty: {
                const TapeNode& u = nodes_[static_cast<size_t>(n.in[0])];
                const int H = u.shape[0], W = u.shape[1], D = u.shape[2];
                const double h = n.aux[0];
                const double* dfield = n.aux.data() + 1;
                const double inv_h2 = 1.0 / (h * h);
                auto& ig = ensure(n.in[0]);
                auto uat = [&](int x, int y, int z) {
                    return u.val[(static_cast<size_t>(x) * W + y) * D + z];
                };
                auto gat = [&](int x, int y, int z) -> double& {
                    return ig[(static_cast<size_t>(x) * W + y) * D + z];
                };
                auto dat = [&](int x, int y, int z) {
                    return dfield[(static_cast<size_t>(x) * W + y) * D + z];
                };
                const double g0 = g[0];
                const double wx = 1.0 / (static_cast<double>(W) * D);
                const double wy = 1.0 / (static_cast<double>(H) * D);
                const double wz = 1.0 / (static_cast<double>(H) * W);
                for (int y = 0; y < W; ++y)
                    for (int z = 0; z < D; ++z) {
                        double c0 = 2.0 * g0 * wx * inv_h2 * dat(0, y, z) * (uat(1, y, z) - uat(0, y, z));
                        gat(1, y, z) += c0;
                        gat(0, y, z) -= c0;
                        double c1 = 2.0 * g0 * wx * inv_h2 * dat(H - 1, y, z) *
                                    (uat(H - 1, y, z) - uat(H - 2, y, z));
                        gat(H - 1, y, z) += c1;
                        gat(H - 2, y, z) -= c1;
                    }
                for (int x = 0; x < H; ++x)
                    for (int z = 0; z < D; ++z) {
                        double c0 = 2.0 * g0 * wy * inv_h2 * dat(x, 0, z) * (uat(x, 1, z) - uat(x, 0, z));
                        gat(x, 1, z) += c0;
                        gat(x, 0, z) -= c0;
                        double c1 = 2.0 * g0 * wy * inv_h2 * dat(x, W - 1, z) *
                                    (uat(x, W - 1, z) - uat(x, W - 2, z));
                        gat(x, W - 1, z) += c1;
                        gat(x, W - 2, z) -= c1;
                    }
                for (int x = 0; x < H; ++x)
                    for (int y = 0; y < W; ++y) {
                        double c0 = 2.0 * g0 * wz * inv_h2 * dat(x, y, 0) * (uat(x, y, 1) - uat(x, y, 0));
                        gat(x, y, 1) += c0;
                        gat(x, y, 0) -= c0;
                        double c1 = 2.0 * g0 * wz * inv_h2 * dat(x, y, D - 1) *
                                    (uat(x, y, D - 1) - uat(x, y, D - 2));
                        gat(x, y, D - 1) += c1;
                        gat(x, y, D - 2) -= c1;
                    }
                break;
            }
            case OpKind::Leaf:
                break;
        }
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

/// Max relative error between reverse-mode gradients and central differences
/// for a scalar-valued function of a single flat input vector.
inline double grad_check(const std::function<Tensor(Tape&, Tensor)>& f,
                         const std::vector<double>& point, double epsilon) {
    if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");
    const int n = static_cast<int>(point.size());
    Tape tape;
    Tensor x = tape.leaf({n}, point, true);
    Tensor y = f(tape, x);
    if (!std::isfinite(y.scalar())) throw std::runtime_error("grad_check: non-finite evaluation");
    tape.backward(y);
    const std::vector<double> ad = tape.grad(x);

    auto eval = [&](const std::vector<double>& p) {
        Tape t;
        Tensor xt = t.leaf({n}, p, false);
        const double v = f(t, xt).scalar();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite evaluation");
        return v;
    };

    double max_err = 0.0;
    std::vector<double> p = point;
    for (int i = 0; i < n; ++i) {
        const double orig = p[static_cast<size_t>(i)];
        p[static_cast<size_t>(i)] = orig + epsilon;
        const double fp = eval(p);
        p[static_cast<size_t>(i)] = orig - epsilon;
        const double fm = eval(p);
        p[static_cast<size_t>(i)] = orig;
        const double fd = (fp - fm) / (2.0 * epsilon);
        const double err = std::abs(ad[static_cast<size_t>(i)] - fd) / std::max(1.0, std::abs(fd));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace biophys
