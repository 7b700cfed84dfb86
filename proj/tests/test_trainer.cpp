#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "biophys/trainer.hpp"

using namespace biophys;

namespace {
Dataset small_dataset(uint64_t seed = 500) {
    SynthOptions opt;
    opt.dim = 16;
    return build_dataset(10, seed, opt);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("cosine schedule endpoints", "[trainer]") {
    CHECK(cosine_lr(3e-4, 0, 300) == 3e-4);
    CHECK(cosine_lr(3e-4, 300, 300) == Catch::Approx(0.0).margin(1e-19));
    CHECK(cosine_lr(3e-4, 150, 300) == Catch::Approx(1.5e-4).epsilon(1e-12));
}

TEST_CASE("config json round-trip and hashing", "[trainer]") {
    TrainConfig c;
    c.steps = 123;
    c.weights.lambda1 = 0.5;
    c.activation = Activation::Relu;
    c.drop_channels = {1, 3};
    nlohmann::json j = c;
    TrainConfig back = j.get<TrainConfig>();
    CHECK(back.steps == 123);
    CHECK(back.weights.lambda1 == 0.5);
    CHECK(back.activation == Activation::Relu);
    CHECK(back.drop_channels == std::vector<int>{1, 3});
    CHECK(config_hash(c) == config_hash(back));
    back.steps = 124;
    CHECK(config_hash(c) != config_hash(back));
    nlohmann::json bad = {{"activation", "tanh"}};
    CHECK_THROWS_AS(bad.get<TrainConfig>(), std::invalid_argument);
}

TEST_CASE("dataset save/load round-trip", "[trainer]") {
    Dataset ds = small_dataset();
    const std::string dir = tmp_path("ds_roundtrip");
    save_dataset(ds, dir);
    Dataset back = load_dataset(dir);
    REQUIRE(back.cases.size() == ds.cases.size());
    CHECK(back.train == ds.train);
    CHECK(back.test == ds.test);
    for (size_t i = 0; i < ds.cases.size(); ++i) {
        CHECK(back.cases[i].density.data == ds.cases[i].density.data);
        CHECK(back.cases[i].class_ids == ds.cases[i].class_ids);
        for (int ch = 0; ch < 4; ++ch)
            CHECK(back.cases[i].inputs[static_cast<size_t>(ch)].data ==
                  ds.cases[i].inputs[static_cast<size_t>(ch)].data);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("degenerate weights reproduce the dice-only path bit for bit", "[trainer]") {
    Dataset ds = small_dataset();
    TrainConfig base;
    base.steps = 8;
    base.seed = 7;

    TrainConfig zero = base;
    zero.weights.lambda1 = 0.0;
    zero.weights.lambda2 = 0.0;

    TrainConfig flags = base;  // lambdas stay 1 but both terms disabled
    flags.use_pde = false;
    flags.use_bc = false;

    Model mz = Model::init(zero);
    Model mf = Model::init(flags);
    TrainResult rz = train(mz, ds);
    TrainResult rf = train(mf, ds);
    REQUIRE(mz.store.params.size() == mf.store.params.size());
    for (size_t p = 0; p < mz.store.params.size(); ++p)
        CHECK(mz.store.params[p].value == mf.store.params[p].value);
    for (size_t s = 0; s < rz.history.size(); ++s) {
        CHECK(rz.history[s].total == rf.history[s].total);
        CHECK(rz.history[s].pde == 0.0);
        CHECK(rz.history[s].bc == 0.0);
    }
}

TEST_CASE("short runs reduce the loss for most seeds", "[trainer]") {
    Dataset ds = small_dataset();
    int improved = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig cfg;
        cfg.steps = 50;
        cfg.seed = seed;
        cfg.train_size = 1;  // one fixed case
        Model m = Model::init(cfg);
        TrainResult r = train(m, ds);
        if (r.history.back().total < r.history.front().total) ++improved;
    }
    CHECK(improved >= 4);
}

TEST_CASE("reruns are byte-identical in CSVs and checkpoints", "[trainer]") {
    Dataset ds = small_dataset();
    auto run = [&](const char* tag) {
        TrainConfig cfg;
        cfg.steps = 6;
        cfg.seed = 11;
        Model m = Model::init(cfg);
        TrainResult r = train(m, ds);
        const std::string csv = tmp_path((std::string("loss_") + tag + ".csv").c_str());
        const std::string ckpt = tmp_path((std::string("run_") + tag + ".ckpt").c_str());
        write_loss_csv(csv, r.history);
        write_checkpoint(ckpt, r.checkpoint);
        auto out = std::make_pair(slurp(csv), slurp(ckpt));
        std::remove(csv.c_str());
        std::remove(ckpt.c_str());
        return out;
    };
    auto [csv1, ck1] = run("a");
    auto [csv2, ck2] = run("b");
    CHECK(csv1 == csv2);
    CHECK(ck1 == ck2);
    CHECK(csv1.substr(0, csv1.find('\n')) == "step,lr,dice,pde,bc,total");
}

TEST_CASE("checkpoint reload reproduces forward outputs bit for bit", "[trainer]") {
    Dataset ds = small_dataset();
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.seed = 3;
    Model m = Model::init(cfg);
    TrainResult r = train(m, ds);
    const std::string path = tmp_path("reload.ckpt");
    write_checkpoint(path, r.checkpoint);

    Model m2 = Model::init(cfg);  // fresh init, then overwrite from disk
    load_params(m2.store, read_checkpoint(path));
    std::remove(path.c_str());

    const SynthCase& c = ds.cases[static_cast<size_t>(ds.test[0])];
    auto forward_probs = [&](Model& model) {
        Tape tape;
        auto leaves = model.store.push_leaves(tape);
        Tensor in = detail::input_leaf(tape, c, model.cfg.drop_channels);
        return model.seg.forward(tape, leaves, in).probs.value();
    };
    CHECK(forward_probs(m) == forward_probs(m2));
}

TEST_CASE("training halts on invalid split requests", "[trainer]") {
    Dataset ds = small_dataset();
    TrainConfig cfg;
    cfg.steps = 1;
    cfg.train_size = 100;
    Model m = Model::init(cfg);
    CHECK_THROWS_AS(train(m, ds), std::invalid_argument);
}

TEST_CASE("heavy overfit on one case reaches high whole-tumour dice", "[trainer]") {
    Dataset ds = small_dataset(901);
    TrainConfig cfg;
    cfg.steps = 400;
    cfg.lr0 = 1e-3;
    cfg.seed = 1;
    cfg.train_size = 1;
    cfg.weights.lambda1 = 0.0;
    cfg.weights.lambda2 = 0.0;
    Model m = Model::init(cfg);
    train(m, ds);
    EvalResult r = evaluate(m, ds, {ds.train[0]});
    double wt = 0.0;
    for (const auto& row : r.rows)
        if (row.region == "WT") wt = row.dice;
    CHECK(wt > 0.9);
}

TEST_CASE("perfect predictions score dice one and distance zero", "[trainer]") {
    SynthOptions opt;
    opt.dim = 16;
    SynthCase c = generate_case(42, opt);
    RegionMasks truth = region_masks(c.class_ids, 16, 16, 16);
    for (const BinaryMask* mask : {&truth.tc, &truth.wt, &truth.et}) {
        if (mask->count() == 0) continue;
        CHECK(dice_score(*mask, *mask) == 1.0);
        CHECK(*hd95(*mask, *mask) == 0.0);
    }
}

TEST_CASE("metrics CSV has the agreed columns and summary rows", "[trainer]") {
    Dataset ds = small_dataset();
    TrainConfig cfg;
    cfg.steps = 2;
    Model m = Model::init(cfg);
    train(m, ds);
    EvalResult r = evaluate(m, ds, ds.test);
    const std::string path = tmp_path("metrics.csv");
    write_metrics_csv(path, r);
    const std::string text = slurp(path);
    std::remove(path.c_str());
    CHECK(text.substr(0, text.find('\n')) == "case_id,region,dice,hd95");
    CHECK(text.find("mean,") != std::string::npos);
    CHECK(text.find("std,") != std::string::npos);
    CHECK(r.rows.size() == ds.test.size() * 3);
    CHECK_THROWS_AS(evaluate(m, ds, {}), std::invalid_argument);
}
