#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "biophys/estimator.hpp"
#include "biophys/io.hpp"
#include "biophys/losses.hpp"
#include "biophys/metrics.hpp"
#include "biophys/params.hpp"
#include "biophys/segnet.hpp"
#include "biophys/synth.hpp"
#include "biophys/tensor.hpp"

namespace biophys {

struct TrainConfig {
    int steps = 300;
    double lr0 = 3e-4;
    LossWeights weights;
    uint64_t seed = 0;
    Activation activation = Activation::Sine;
    bool use_pde = true;
    bool use_bc = true;
    bool clamp_uhat = false;
    int train_size = -1;              // -1: whole train split
    std::vector<int> drop_channels;   // zeroed input channels
    SegNetConfig seg;
    SirenConfig siren;
    std::pair<double, double> d_range{0.02, 1.5};
    std::pair<double, double> rho_range{0.002, 0.2};
};

inline double cosine_lr(double lr0, int step, int steps) {
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / steps));
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"steps", c.steps},
        {"lr0", c.lr0},
        {"lambda1", c.weights.lambda1},
        {"lambda2", c.weights.lambda2},
        {"seed", c.seed},
        {"activation", c.activation == Activation::Sine ? "sine" : "relu"},
        {"use_pde", c.use_pde},
        {"use_bc", c.use_bc},
        {"clamp_uhat", c.clamp_uhat},
        {"train_size", c.train_size},
        {"drop_channels", c.drop_channels},
        {"base_features", c.seg.base_features},
        {"depth", c.seg.depth},
        {"bottleneck_channels", c.seg.bottleneck_channels},
        {"hidden", c.siren.hidden},
        {"omega0", c.siren.omega0},
        {"omega", c.siren.omega},
        {"d_range", {c.d_range.first, c.d_range.second}},
        {"rho_range", {c.rho_range.first, c.rho_range.second}},
    };
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.steps = j.value("steps", c.steps);
    c.lr0 = j.value("lr0", c.lr0);
    c.weights.lambda1 = j.value("lambda1", c.weights.lambda1);
    c.weights.lambda2 = j.value("lambda2", c.weights.lambda2);
    c.seed = j.value("seed", c.seed);
    const std::string act = j.value("activation", "sine");
    if (act != "sine" && act != "relu")
        throw std::invalid_argument("config: activation must be 'sine' or 'relu'");
    c.activation = act == "sine" ? Activation::Sine : Activation::Relu;
    c.use_pde = j.value("use_pde", c.use_pde);
    c.use_bc = j.value("use_bc", c.use_bc);
    c.clamp_uhat = j.value("clamp_uhat", c.clamp_uhat);
    c.train_size = j.value("train_size", c.train_size);
    c.drop_channels = j.value("drop_channels", c.drop_channels);
    c.seg.base_features = j.value("base_features", c.seg.base_features);
    c.seg.depth = j.value("depth", c.seg.depth);
    c.seg.bottleneck_channels = j.value("bottleneck_channels", c.seg.bottleneck_channels);
    c.siren.hidden = j.value("hidden", c.siren.hidden);
    c.siren.omega0 = j.value("omega0", c.siren.omega0);
    c.siren.omega = j.value("omega", c.siren.omega);
    if (j.contains("d_range")) c.d_range = {j["d_range"][0], j["d_range"][1]};
    if (j.contains("rho_range")) c.rho_range = {j["rho_range"][0], j["rho_range"][1]};
}

inline std::string config_hash(const TrainConfig& c) {
    nlohmann::json j = c;
    std::ostringstream os;
    os << std::hex << std::hash<std::string>{}(j.dump());
    return os.str();
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<SynthCase> cases;
    std::vector<int> train, val, test;

    const std::vector<int>& split(Split s) const {
        switch (s) {
            case Split::Train: return train;
            case Split::Val: return val;
            default: return test;
        }
    }
};

inline Dataset build_dataset(int num_cases, uint64_t base_seed, const SynthOptions& opt) {
    Dataset ds;
    for (int i = 0; i < num_cases; ++i) {
        ds.cases.push_back(generate_case(base_seed + static_cast<uint64_t>(i) * 1000003ull, opt));
        switch (split_of(i)) {
            case Split::Train: ds.train.push_back(i); break;
            case Split::Val: ds.val.push_back(i); break;
            case Split::Test: ds.test.push_back(i); break;
        }
    }
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["num_cases"] = ds.cases.size();
    manifest["train"] = ds.train;
    manifest["val"] = ds.val;
    manifest["test"] = ds.test;
    for (size_t i = 0; i < ds.cases.size(); ++i) {
        const auto& c = ds.cases[i];
        char name[32];
        std::snprintf(name, sizeof(name), "case%03zu", i);
        write_volume(dir + "/" + name + "_input.vol", c.inputs);
        write_volume(dir + "/" + name + "_label.vol", c.labels);
        write_volume(dir + "/" + name + "_density.vol", {c.density});
        manifest["cases"].push_back({{"id", std::string(name)},
                                     {"seed", c.seed},
                                     {"d", c.d_value},
                                     {"rho", c.rho_value}});
    }
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("load_dataset: missing manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(is);
    Dataset ds;
    ds.train = manifest.at("train").get<std::vector<int>>();
    ds.val = manifest.at("val").get<std::vector<int>>();
    ds.test = manifest.at("test").get<std::vector<int>>();
    for (const auto& e : manifest.at("cases")) {
        SynthCase c;
        const std::string id = e.at("id");
        c.seed = e.value("seed", 0ull);
        c.d_value = e.value("d", 0.0);
        c.rho_value = e.value("rho", 0.0);
        c.inputs = read_volume(dir + "/" + id + "_input.vol");
        c.labels = read_volume(dir + "/" + id + "_label.vol");
        c.density = read_volume(dir + "/" + id + "_density.vol")[0];
        c.class_ids.assign(c.density.size(), 0);
        for (size_t i = 0; i < c.class_ids.size(); ++i)
            for (uint8_t k = 1; k < 4; ++k)
                if (c.labels[k].data[i] != 0.0) c.class_ids[i] = k;
        ds.cases.push_back(std::move(c));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// model bundle and training
// ---------------------------------------------------------------------------

struct Model {
    ParamStore store;
    SegNet seg;
    SirenNet siren;
    TrainConfig cfg;

    static Model init(const TrainConfig& cfg) {
        Model m;
        m.cfg = cfg;
        SegNetConfig sc = cfg.seg;
        SirenConfig ec = cfg.siren;
        ec.in_channels = sc.bottleneck_channels;
        ec.activation = cfg.activation;
        m.cfg.seg = sc;
        m.cfg.siren = ec;
        m.seg = SegNet::init(sc, m.store, cfg.seed * 2654435761ull + 1);
        m.siren = SirenNet::init(ec, m.store, cfg.seed * 2654435761ull + 2);
        return m;
    }
};

struct LossRow {
    int step;
    double lr, dice, pde, bc, total;
};

struct TrainResult {
    std::vector<LossRow> history;
    Checkpoint checkpoint;
};

namespace detail {
inline Tensor input_leaf(Tape& tape, const SynthCase& c, const std::vector<int>& drop) {
    const int H = c.inputs[0].H, W = c.inputs[0].W, D = c.inputs[0].D;
    const size_t V = c.inputs[0].size();
    std::vector<double> data(4 * V);
    for (int ch = 0; ch < 4; ++ch) {
        const bool dropped = std::find(drop.begin(), drop.end(), ch) != drop.end();
        if (!dropped)
            std::copy(c.inputs[static_cast<size_t>(ch)].data.begin(),
                      c.inputs[static_cast<size_t>(ch)].data.end(),
                      data.begin() + static_cast<size_t>(ch) * V);
    }
    return tape.leaf({4, H, W, D}, std::move(data), false);
}

inline Tensor label_leaf(Tape& tape, const SynthCase& c) {
    const int H = c.labels[0].H, W = c.labels[0].W, D = c.labels[0].D;
    const size_t V = c.labels[0].size();
    std::vector<double> data(4 * V);
    for (int ch = 0; ch < 4; ++ch)
        std::copy(c.labels[static_cast<size_t>(ch)].data.begin(),
                  c.labels[static_cast<size_t>(ch)].data.end(),
                  data.begin() + static_cast<size_t>(ch) * V);
    return tape.leaf({4, H, W, D}, std::move(data), false);
}

inline Tensor clamp01(const Tensor& x) {
    Tape& tape = *x.tape;
    Tensor one = tape.constant(1.0);
    return sub(relu(x), relu(sub(x, one)));
}
}  // namespace detail

/// Adam with cosine learning-rate decay; one case per step (batch size 1).
/// The regulariser path is skipped entirely when both penalty terms are
/// inactive, so a lambda1 = lambda2 = 0 run follows the exact dice-only
/// code path.
inline TrainResult train(Model& model, const Dataset& ds) {
    const TrainConfig& cfg = model.cfg;
    std::vector<int> train_ids = ds.train;
    if (cfg.train_size >= 0) {
        if (cfg.train_size > static_cast<int>(train_ids.size()))
            throw std::invalid_argument("train: train_size exceeds available train cases");
        train_ids.resize(static_cast<size_t>(cfg.train_size));
    }
    if (train_ids.empty()) throw std::invalid_argument("train: empty train split");

    const bool pde_active = cfg.use_pde && cfg.weights.lambda1 > 0.0;
    const bool bc_active = cfg.use_bc && cfg.weights.lambda2 > 0.0;
    const bool reg_active = pde_active || bc_active;

    ParamStore& store = model.store;
    std::vector<std::vector<double>> adam_m(store.params.size()), adam_v(store.params.size());
    for (size_t p = 0; p < store.params.size(); ++p) {
        adam_m[p].assign(store.params[p].value.size(), 0.0);
        adam_v[p].assign(store.params[p].value.size(), 0.0);
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    std::mt19937_64 rng_case(cfg.seed ^ 0xC0FFEE1234567890ull);
    std::mt19937_64 rng_coeff(cfg.seed ^ 0x0DDBA11CAFED00Dull);

    TrainResult result;
    for (int s = 0; s < cfg.steps; ++s) {
        const SynthCase& c = ds.cases[static_cast<size_t>(
            train_ids[rng_case() % train_ids.size()])];
        const double t = static_cast<double>(s) / cfg.steps;

        Tape tape;
        auto leaves = store.push_leaves(tape);
        Tensor input = detail::input_leaf(tape, c, cfg.drop_channels);
        Tensor labels = detail::label_leaf(tape, c);
        SegForward fwd = model.seg.forward(tape, leaves, input);
        Tensor dice = dice_loss(fwd.probs, labels);

        Tensor total = dice;
        double pde_v = 0.0, bc_v = 0.0;
        if (reg_active) {
            const auto& fshape = fwd.features.shape();
            BiophysCoefficients coeffs = sample_coefficients(fshape[1], fshape[2], fshape[3],
                                                             cfg.d_range, cfg.rho_range, rng_coeff);
            SirenTensors sp = model.siren.gather(leaves);
            SirenOutput so = model.siren.evaluate(tape, sp, fwd.features, t);
            if (pde_active) {
                Tensor u = cfg.clamp_uhat ? detail::clamp01(so.u_hat) : so.u_hat;
                Tensor pde = pde_loss(u, so.du_dt, coeffs);
                pde_v = pde.scalar();
                total = add(total, mul(tape.constant(cfg.weights.lambda1), pde));
            }
            if (bc_active) {
                Tensor bc = bc_loss(so.u_hat, coeffs);
                bc_v = bc.scalar();
                total = add(total, mul(tape.constant(cfg.weights.lambda2), bc));
            }
        }

        const double total_v = total.scalar();
        if (!std::isfinite(total_v))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(s) +
                                     " (dice=" + std::to_string(dice.scalar()) +
                                     " pde=" + std::to_string(pde_v) +
                                     " bc=" + std::to_string(bc_v) + ")");
        tape.backward(total);

        const double lr = cosine_lr(cfg.lr0, s, cfg.steps);
        const double bc1 = 1.0 - std::pow(beta1, s + 1);
        const double bc2 = 1.0 - std::pow(beta2, s + 1);
        for (size_t p = 0; p < store.params.size(); ++p) {
            const std::vector<double> g = tape.grad(leaves[p]);
            auto& value = store.params[p].value;
            auto& m = adam_m[p];
            auto& v = adam_v[p];
            for (size_t i = 0; i < value.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }
        result.history.push_back(LossRow{s, lr, dice.scalar(), pde_v, bc_v, total_v});
    }

    Checkpoint ck;
    ck.step = cfg.steps;
    ck.config_hash = config_hash(cfg);
    ck.tensors = store.params;
    for (size_t p = 0; p < store.params.size(); ++p) {
        ck.tensors.push_back(Param{"adam.m." + store.params[p].name, store.params[p].shape,
                                   std::move(adam_m[p])});
        ck.tensors.push_back(Param{"adam.v." + store.params[p].name, store.params[p].shape,
                                   std::move(adam_v[p])});
    }
    result.checkpoint = std::move(ck);
    return result;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_loss_csv: cannot open " + path);
    os << "step,lr,dice,pde,bc,total\n";
    for (const auto& r : rows)
        os << r.step << "," << fmt_double(r.lr) << "," << fmt_double(r.dice) << ","
           << fmt_double(r.pde) << "," << fmt_double(r.bc) << "," << fmt_double(r.total) << "\n";
}

/// Loads a checkpoint's parameters (ignoring optimiser moments) into a store.
inline void load_params(ParamStore& store, const Checkpoint& ck) {
    for (auto& p : store.params) {
        bool found = false;
        for (const auto& t : ck.tensors)
            if (t.name == p.name) {
                if (t.shape != p.shape)
                    throw std::runtime_error("load_params: shape mismatch for " + p.name);
                p.value = t.value;
                found = true;
                break;
            }
        if (!found) throw std::runtime_error("load_params: missing tensor " + p.name);
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct CaseMetrics {
    std::string case_id;
    std::string region;
    double dice = 0.0;
    std::optional<double> hd;
};

struct EvalResult {
    std::vector<CaseMetrics> rows;
    // per region: mean/std dice, mean/std hd95 over cases with defined hd95
    std::map<std::string, std::array<double, 4>> aggregate;
    std::map<std::string, int> hd_excluded;
};

/// Argmax segmentation of one case, returning region masks by the nesting
/// convention.
inline RegionMasks predict_regions(Model& model, const SynthCase& c) {
    Tape tape;
    auto leaves = model.store.push_leaves(tape);
    Tensor input = detail::input_leaf(tape, c, model.cfg.drop_channels);
    SegForward fwd = model.seg.forward(tape, leaves, input);
    const auto& pv = fwd.probs.value();
    const int H = fwd.probs.shape()[1], W = fwd.probs.shape()[2], D = fwd.probs.shape()[3];
    const size_t V = static_cast<size_t>(H) * W * D;
    std::vector<uint8_t> cls(V, 0);
    for (size_t v = 0; v < V; ++v) {
        int best = 0;
        double bv = pv[v];
        for (int ch = 1; ch < 4; ++ch)
            if (pv[static_cast<size_t>(ch) * V + v] > bv) {
                bv = pv[static_cast<size_t>(ch) * V + v];
                best = ch;
            }
        cls[v] = static_cast<uint8_t>(best);
    }
    return region_masks(cls, H, W, D);
}

inline EvalResult evaluate(Model& model, const Dataset& ds, const std::vector<int>& case_ids) {
    if (case_ids.empty()) throw std::invalid_argument("evaluate: empty split");
    EvalResult r;
    const char* regions[3] = {"TC", "WT", "ET"};
    std::map<std::string, std::vector<double>> dices, hds;
    for (int id : case_ids) {
        const SynthCase& c = ds.cases[static_cast<size_t>(id)];
        RegionMasks pred = predict_regions(model, c);
        RegionMasks truth = region_masks(c.class_ids, c.density.H, c.density.W, c.density.D);
        const BinaryMask* pm[3] = {&pred.tc, &pred.wt, &pred.et};
        const BinaryMask* tm[3] = {&truth.tc, &truth.wt, &truth.et};
        char cid[16];
        std::snprintf(cid, sizeof(cid), "case%03d", id);
        for (int k = 0; k < 3; ++k) {
            CaseMetrics m;
            m.case_id = cid;
            m.region = regions[k];
            m.dice = dice_score(*pm[k], *tm[k]);
            m.hd = hd95(*pm[k], *tm[k]);
            dices[m.region].push_back(m.dice);
            if (m.hd)
                hds[m.region].push_back(*m.hd);
            else
                r.hd_excluded[m.region] += 1;
            r.rows.push_back(std::move(m));
        }
    }
    auto mean_std = [](const std::vector<double>& v) -> std::pair<double, double> {
        if (v.empty()) return {0.0, 0.0};
        double mu = 0.0;
        for (double x : v) mu += x;
        mu /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mu) * (x - mu);
        return {mu, std::sqrt(var / static_cast<double>(v.size()))};
    };
    for (const char* reg : regions) {
        auto [dm, dsd] = mean_std(dices[reg]);
        auto [hm, hsd] = mean_std(hds[reg]);
        r.aggregate[reg] = {dm, dsd, hm, hsd};
    }
    return r;
}

inline void write_metrics_csv(const std::string& path, const EvalResult& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    os << "case_id,region,dice,hd95\n";
    for (const auto& m : r.rows)
        os << m.case_id << "," << m.region << "," << fmt_double(m.dice) << ","
           << (m.hd ? fmt_double(*m.hd) : "") << "\n";
    for (const auto& [reg, agg] : r.aggregate) {
        os << "mean," << reg << "," << fmt_double(agg[0]) << "," << fmt_double(agg[2]) << "\n";
        os << "std," << reg << "," << fmt_double(agg[1]) << "," << fmt_double(agg[3]) << "\n";
    }
}

/// Mean test dice over the three regions, the summary number used by the
/// ablation sweeps.
inline double mean_region_dice(const EvalResult& r) {
    double s = 0.0;
    for (const char* reg : {"TC", "WT", "ET"}) s += r.aggregate.at(reg)[0];
    return s / 3.0;
}

}  // namespace biophys
