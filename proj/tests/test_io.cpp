#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "biophys/io.hpp"

using namespace biophys;

namespace {
std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("volume files round-trip bit-identically", "[io]") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<Field3D> chans(3, Field3D(5, 4, 3, 0.0, 1.25));
    for (auto& c : chans)
        for (double& v : c.data) v = n01(rng);
    const std::string path = tmp_path("roundtrip.vol");
    write_volume(path, chans);
    auto back = read_volume(path);
    REQUIRE(back.size() == 3);
    for (size_t c = 0; c < 3; ++c) {
        CHECK(back[c].H == 5);
        CHECK(back[c].W == 4);
        CHECK(back[c].D == 3);
        CHECK(back[c].spacing == 1.25);
        CHECK(back[c].data == chans[c].data);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoints round-trip bit-identically", "[io]") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n01(0.0, 1.0);
    Checkpoint ck;
    ck.step = 123;
    ck.config_hash = "abc123";
    ck.tensors.push_back(Param{"w", {2, 3}, {1.5, -2.25, n01(rng), n01(rng), 0.0, 1e-300}});
    ck.tensors.push_back(Param{"b", {4}, {n01(rng), n01(rng), n01(rng), n01(rng)}});
    const std::string path = tmp_path("roundtrip.ckpt");
    write_checkpoint(path, ck);
    Checkpoint back = read_checkpoint(path);
    CHECK(back.step == 123);
    CHECK(back.config_hash == "abc123");
    REQUIRE(back.tensors.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(back.tensors[i].name == ck.tensors[i].name);
        CHECK(back.tensors[i].shape == ck.tensors[i].shape);
        CHECK(back.tensors[i].value == ck.tensors[i].value);
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupt headers are rejected", "[io]") {
    const std::string path = tmp_path("bad.vol");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGIC the rest does not matter";
    }
    CHECK_THROWS_WITH(read_volume(path), Catch::Matchers::ContainsSubstring("BIOPHV01"));
    CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_volume(tmp_path("does-not-exist.vol")), std::runtime_error);
    // a volume file is not a checkpoint
    const std::string vpath = tmp_path("vol-not-ckpt.vol");
    write_volume(vpath, {Field3D(2, 2, 2, 1.0)});
    CHECK_THROWS_AS(read_checkpoint(vpath), std::runtime_error);
    std::remove(vpath.c_str());
}

TEST_CASE("constant slices export as uniform mid-gray", "[io]") {
    Field3D f(4, 5, 3, 7.0);
    const std::string path = tmp_path("slice.pgm");
    write_pgm_slice(path, f, 1);
    std::ifstream is(path, std::ios::binary);
    std::string header;
    std::getline(is, header);
    CHECK(header == "P5");
    std::string dims, maxval;
    std::getline(is, dims);
    std::getline(is, maxval);
    CHECK(dims == "5 4");
    CHECK(maxval == "255");
    std::vector<char> pixels(20);
    is.read(pixels.data(), 20);
    REQUIRE(is.gcount() == 20);
    for (char p : pixels) CHECK(static_cast<unsigned char>(p) == 128);
    std::remove(path.c_str());
    CHECK_THROWS_AS(write_pgm_slice(path, f, 5), std::invalid_argument);
}

TEST_CASE("csv doubles survive a parse round-trip", "[io]") {
    for (double v : {0.1, 3e-4, -1.7976931348623157e308, 1.0 / 3.0, 42.0}) {
        CHECK(std::stod(fmt_double(v)) == v);
    }
}
