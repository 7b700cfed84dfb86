// Command-line front end: growth simulation, synthetic data generation,
// training, evaluation, gradient checking, slice export, and ablation sweeps.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "biophys/io.hpp"
#include "biophys/losses.hpp"
#include "biophys/simulator.hpp"
#include "biophys/trainer.hpp"

using namespace biophys;
namespace fs = std::filesystem;

namespace {

nlohmann::json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    return nlohmann::json::parse(is);
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

struct CommonOpts {
    std::string config, out_dir = ".";
    uint64_t seed = 0;
    bool seed_set = false;
};

TrainConfig make_train_config(const CommonOpts& common, double lambda1, double lambda2,
                              bool l1_set, bool l2_set, const std::string& activation,
                              bool no_bc, bool no_pde, int train_size,
                              const std::string& drop_channels) {
    TrainConfig cfg;
    if (!common.config.empty()) cfg = load_json(common.config).get<TrainConfig>();
    if (common.seed_set) cfg.seed = common.seed;
    if (l1_set) cfg.weights.lambda1 = lambda1;
    if (l2_set) cfg.weights.lambda2 = lambda2;
    if (!activation.empty()) {
        if (activation != "sine" && activation != "relu")
            throw CLI::ValidationError("--activation must be sine or relu");
        cfg.activation = activation == "sine" ? Activation::Sine : Activation::Relu;
    }
    if (no_bc) cfg.use_bc = false;
    if (no_pde) cfg.use_pde = false;
    if (train_size >= 0) cfg.train_size = train_size;
    if (!drop_channels.empty()) cfg.drop_channels = parse_int_list(drop_channels);
    return cfg;
}

int cmd_simulate(const CommonOpts& common) {
    nlohmann::json j = common.config.empty() ? nlohmann::json::object() : load_json(common.config);
    const int n = j.value("dim", 16);
    GrowthParams p;
    p.d = Field3D(n, n, n, j.value("d", 0.5));
    p.rho = Field3D(n, n, n, j.value("rho", 0.1));
    p.steps = j.value("steps", 500);
    p.snapshot_every = j.value("snapshot_every", 50);
    const double bound = cfl_bound(p);
    p.dt = j.value("dt", std::min(0.9 * bound, 0.02));

    Field3D u0(n, n, n, 0.0);
    const double amp = j.value("u0_amp", 0.5), sigma = j.value("u0_sigma", 2.0);
    const double c = (n - 1) / 2.0;
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z) {
                const double r2 = (x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c);
                u0.at(x, y, z) = amp * std::exp(-r2 / (2.0 * sigma * sigma));
            }
    if (j.contains("u0_const")) u0 = Field3D(n, n, n, j["u0_const"].get<double>());

    fs::create_directories(common.out_dir);
    SimResult r = simulate(u0, p);
    std::ofstream csv(common.out_dir + "/snapshots.csv");
    csv << "time,mass,max\n";
    int idx = 0;
    for (const auto& [t, field] : r.snapshots) {
        char name[48];
        std::snprintf(name, sizeof(name), "snapshot_%03d.vol", idx++);
        write_volume(common.out_dir + "/" + std::string(name), {field});
        csv << fmt_double(t) << "," << fmt_double(field.sum()) << "," << fmt_double(field.max())
            << "\n";
    }
    std::printf("wrote %d snapshots to %s (dt=%g, stability bound=%g)\n", idx,
                common.out_dir.c_str(), p.dt, bound);
    return 0;
}

int cmd_gen_data(const CommonOpts& common, int num_cases, int dim) {
    SynthOptions opt;
    opt.dim = dim;
    if (!common.config.empty()) {
        nlohmann::json j = load_json(common.config);
        opt.dim = j.value("dim", opt.dim);
        opt.noise_sigma = j.value("noise_sigma", opt.noise_sigma);
        opt.sim_steps = j.value("sim_steps", opt.sim_steps);
    }
    Dataset ds = build_dataset(num_cases, common.seed, opt);
    save_dataset(ds, common.out_dir);
    std::printf("wrote %d cases (%zu train / %zu val / %zu test) to %s\n", num_cases,
                ds.train.size(), ds.val.size(), ds.test.size(), common.out_dir.c_str());
    return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
    Dataset ds = load_dataset(data_dir);
    Model m = Model::init(cfg);
    TrainResult r = train(m, ds);
    fs::create_directories(out_dir);
    write_loss_csv(out_dir + "/loss.csv", r.history);
    write_checkpoint(out_dir + "/checkpoint.ckpt", r.checkpoint);
    {
        std::ofstream os(out_dir + "/config.json");
        os << nlohmann::json(cfg).dump(2) << "\n";
    }
    std::printf("trained %d steps; final total loss %s; artifacts in %s\n", cfg.steps,
                fmt_double(r.history.back().total).c_str(), out_dir.c_str());
    return 0;
}

int cmd_eval(const TrainConfig& cfg, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, const std::string& out_dir) {
    Dataset ds = load_dataset(data_dir);
    Model m = Model::init(cfg);
    load_params(m.store, read_checkpoint(checkpoint));
    const std::vector<int>* ids = &ds.test;
    if (split == "train")
        ids = &ds.train;
    else if (split == "val")
        ids = &ds.val;
    else if (split != "test")
        throw CLI::ValidationError("--split must be train, val or test");
    EvalResult r = evaluate(m, ds, *ids);
    fs::create_directories(out_dir);
    write_metrics_csv(out_dir + "/metrics.csv", r);
    for (const auto& [region, agg] : r.aggregate)
        std::printf("%s: dice %.4f +- %.4f, hd95 %.4f +- %.4f\n", region.c_str(), agg[0], agg[1],
                    agg[2], agg[3]);
    for (const auto& [region, count] : r.hd_excluded)
        std::printf("%s: %d case(s) excluded from hd95 (empty mask)\n", region.c_str(), count);
    std::printf("mean region dice: %.4f\n", mean_region_dice(r));
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    double worst = 0.0;
    auto report = [&](const char* name, double err) {
        std::printf("%-24s max relative error %.3e\n", name, err);
        worst = std::max(worst, err);
    };

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int n = 8, V = n * n * n;

    {  // estimator: density and its time derivative through every layer
        SirenConfig ec;
        ec.in_channels = 2;
        ec.hidden = {8};
        ParamStore store;
        SirenNet net = SirenNet::init(ec, store, seed + 1);
        std::vector<double> feats(static_cast<size_t>(2) * V / 8);
        for (double& v : feats) v = n01(rng);
        auto f = [&](Tape& tape, const std::vector<Tensor>& leaves) {
            Tensor x = tape.leaf({2, n / 2, n / 2, n / 2}, feats, false);
            SirenOutput so = net.evaluate(tape, net.gather(leaves), x, 0.4);
            return add(mean(square(so.u_hat)), mean(square(so.du_dt)));
        };
        report("estimator", grad_check_store(store, f, 1e-5));
    }

    SegNetConfig sc;
    sc.base_features = 2;
    sc.bottleneck_channels = 2;
    std::vector<double> input(static_cast<size_t>(4) * V);
    for (double& v : input) v = n01(rng);
    std::vector<double> labels(static_cast<size_t>(4) * V, 0.0);
    for (int v = 0; v < V; ++v) labels[static_cast<size_t>(rng() % 4) * V + v] = 1.0;

    {  // segmentation backbone through the dice loss
        ParamStore store;
        SegNet seg = SegNet::init(sc, store, seed + 2);
        auto f = [&](Tape& tape, const std::vector<Tensor>& leaves) {
            Tensor in = tape.leaf({4, n, n, n}, input, false);
            Tensor lab = tape.leaf({4, n, n, n}, labels, false);
            return dice_loss(seg.forward(tape, leaves, in).probs, lab);
        };
        report("seg_model+dice_loss", grad_check_store(store, f, 1e-5));
    }

    BiophysCoefficients coeffs;
    {
        std::mt19937_64 crng(seed + 3);
        coeffs = sample_coefficients(n / 2, n / 2, n / 2, {0.02, 1.5}, {0.002, 0.2}, crng);
    }

    {  // pde and bc losses over a free-standing density field
        ParamStore store;
        std::vector<double> u(static_cast<size_t>(V) / 8), du(static_cast<size_t>(V) / 8);
        for (double& v : u) v = n01(rng);
        for (double& v : du) v = n01(rng);
        store.add("u", {n / 2, n / 2, n / 2}, u);
        store.add("du_dt", {n / 2, n / 2, n / 2}, du);
        auto f = [&](Tape&, const std::vector<Tensor>& leaves) {
            return add(pde_loss(leaves[0], leaves[1], coeffs), bc_loss(leaves[0], coeffs));
        };
        report("pde_loss+bc_loss", grad_check_store(store, f, 1e-5));
    }

    {  // full composite objective
        ParamStore store;
        SegNet seg = SegNet::init(sc, store, seed + 4);
        SirenConfig ec;
        ec.in_channels = 2;
        ec.hidden = {6};
        SirenNet siren = SirenNet::init(ec, store, seed + 5);
        LossWeights w;
        auto f = [&](Tape& tape, const std::vector<Tensor>& leaves) {
            Tensor in = tape.leaf({4, n, n, n}, input, false);
            Tensor lab = tape.leaf({4, n, n, n}, labels, false);
            SegForward fwd = seg.forward(tape, leaves, in);
            SirenOutput so = siren.evaluate(tape, siren.gather(leaves), fwd.features, 0.4);
            return total_loss(dice_loss(fwd.probs, lab), pde_loss(so.u_hat, so.du_dt, coeffs),
                              bc_loss(so.u_hat, coeffs), w);
        };
        report("composite", grad_check_store(store, f, 1e-5));
    }

    std::printf("overall max relative error %.3e (%s)\n", worst,
                worst < 1e-5 ? "PASS" : "FAIL");
    return worst < 1e-5 ? 0 : 1;
}

int cmd_export_slice(const std::string& input, int channel, int z, const std::string& out) {
    auto channels = read_volume(input);
    if (channel < 0 || channel >= static_cast<int>(channels.size()))
        throw std::runtime_error("channel out of range (" + std::to_string(channels.size()) +
                                 " available)");
    write_pgm_slice(out, channels[static_cast<size_t>(channel)], z);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& sizes_csv, int num_seeds, int steps,
               int num_cases, int dim) {
    SynthOptions opt;
    opt.dim = dim;
    TrainConfig base;
    if (!common.config.empty()) base = load_json(common.config).get<TrainConfig>();
    base.steps = steps;
    const std::vector<int> sizes = parse_int_list(sizes_csv);

    fs::create_directories(common.out_dir);
    std::ofstream csv(common.out_dir + "/ablation.csv");
    csv << "variant,train_size,seed,mean_dice\n";

    for (int seed = 0; seed < num_seeds; ++seed) {
        Dataset ds = build_dataset(num_cases, common.seed + static_cast<uint64_t>(seed) * 7919,
                                   opt);
        auto run = [&](const char* variant, TrainConfig cfg) {
            cfg.seed = static_cast<uint64_t>(seed);
            Model m = Model::init(cfg);
            train(m, ds);
            EvalResult r = evaluate(m, ds, ds.test);
            const double d = mean_region_dice(r);
            csv << variant << "," << cfg.train_size << "," << seed << "," << fmt_double(d) << "\n";
            csv.flush();
            std::printf("%-10s size=%d seed=%d mean dice %.4f\n", variant, cfg.train_size, seed, d);
        };
        for (int size : sizes) {
            TrainConfig biophys = base;
            biophys.train_size = size;
            run("biophys", biophys);
            TrainConfig dice_only = base;
            dice_only.train_size = size;
            dice_only.weights = {0.0, 0.0};
            run("dice-only", dice_only);
            TrainConfig relu = base;
            relu.train_size = size;
            relu.activation = Activation::Relu;
            run("relu", relu);
            TrainConfig nobc = base;
            nobc.train_size = size;
            nobc.use_bc = false;
            run("no-bc", nobc);
        }
    }
    std::printf("summary written to %s/ablation.csv\n", common.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Biophysics-regularised volumetric segmentation toolkit"};
    app.require_subcommand(1);

    CommonOpts common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON config file");
        sub->add_option("--seed", common.seed, "random seed")
            ->each([&](const std::string&) { common.seed_set = true; });
        sub->add_option("--out-dir", common.out_dir, "output directory");
    };

    auto* sim = app.add_subcommand("simulate", "run the forward growth model, write snapshots");
    add_common(sim);

    int num_cases = 20, dim = 32;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen);
    gen->add_option("--num-cases", num_cases, "number of cases");
    gen->add_option("--dim", dim, "cubic volume extent");

    double lambda1 = 1.0, lambda2 = 1.0;
    bool l1_set = false, l2_set = false, no_bc = false, no_pde = false;
    std::string activation, drop_channels, data_dir = "data";
    int train_size = -1;
    auto add_train_flags = [&](CLI::App* sub) {
        add_common(sub);
        sub->add_option("--data", data_dir, "dataset directory");
        sub->add_option("--lambda1", lambda1, "PDE loss weight")
            ->each([&](const std::string&) { l1_set = true; });
        sub->add_option("--lambda2", lambda2, "boundary loss weight")
            ->each([&](const std::string&) { l2_set = true; });
        sub->add_option("--activation", activation, "estimator activation: sine|relu");
        sub->add_flag("--no-bc", no_bc, "disable the boundary loss");
        sub->add_flag("--no-pde", no_pde, "disable the PDE loss");
        sub->add_option("--train-size", train_size, "cap on training cases");
        sub->add_option("--drop-channels", drop_channels, "comma list of input channels to zero");
    };
    auto* tr = app.add_subcommand("train", "train a model");
    add_train_flags(tr);

    std::string checkpoint = "checkpoint.ckpt", split = "test";
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_train_flags(ev);
    ev->add_option("--checkpoint", checkpoint, "checkpoint file");
    ev->add_option("--split", split, "train|val|test");

    auto* gc = app.add_subcommand("gradcheck", "run the gradient verification suites");
    add_common(gc);

    std::string slice_input, slice_out = "slice.pgm";
    int slice_channel = 0, slice_z = 0;
    auto* ex = app.add_subcommand("export-slice", "export an axial slice as a PGM image");
    ex->add_option("--input", slice_input, "volume file")->required();
    ex->add_option("--channel", slice_channel, "channel index");
    ex->add_option("--z", slice_z, "slice index");
    ex->add_option("--out", slice_out, "output PGM path");

    std::string sizes = "2,4,8";
    int ab_seeds = 5, ab_steps = 300, ab_cases = 20, ab_dim = 32;
    auto* ab = app.add_subcommand("ablate", "run activation/boundary/data-size sweeps");
    add_common(ab);
    ab->add_option("--sizes", sizes, "comma list of train sizes");
    ab->add_option("--seeds", ab_seeds, "number of seeds");
    ab->add_option("--steps", ab_steps, "training steps per run");
    ab->add_option("--num-cases", ab_cases, "dataset size per seed");
    ab->add_option("--dim", ab_dim, "cubic volume extent");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(common);
        if (gen->parsed()) return cmd_gen_data(common, num_cases, dim);
        if (tr->parsed() || ev->parsed()) {
            TrainConfig cfg = make_train_config(common, lambda1, lambda2, l1_set, l2_set,
                                                activation, no_bc, no_pde, train_size,
                                                drop_channels);
            if (tr->parsed()) return cmd_train(cfg, data_dir, common.out_dir);
            return cmd_eval(cfg, checkpoint, data_dir, split, common.out_dir);
        }
        if (gc->parsed()) return cmd_gradcheck(common.seed);
        if (ex->parsed()) return cmd_export_slice(slice_input, slice_channel, slice_z, slice_out);
        if (ab->parsed()) return cmd_ablate(common, sizes, ab_seeds, ab_steps, ab_cases, ab_dim);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
