#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "biophys/field.hpp"
#include "biophys/params.hpp"

namespace biophys {

inline constexpr char kVolumeMagic[8] = {'B', 'I', 'O', 'P', 'H', 'V', '0', '1'};

namespace detail {
inline void write_header(std::ostream& os, const nlohmann::json& header) {
    const std::string h = header.dump();
    os.write(kVolumeMagic, 8);
    const uint32_t len = static_cast<uint32_t>(h.size());
    unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                           static_cast<unsigned char>((len >> 8) & 0xff),
                           static_cast<unsigned char>((len >> 16) & 0xff),
                           static_cast<unsigned char>((len >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(lb), 4);
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
}

inline nlohmann::json read_header(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kVolumeMagic, 8) != 0)
        throw std::runtime_error(path + ": not a BIOPHV01 file");
    unsigned char lb[4];
    is.read(reinterpret_cast<char*>(lb), 4);
    const uint32_t len = static_cast<uint32_t>(lb[0]) | (static_cast<uint32_t>(lb[1]) << 8) |
                         (static_cast<uint32_t>(lb[2]) << 16) | (static_cast<uint32_t>(lb[3]) << 24);
    std::string h(len, '\0');
    is.read(h.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error(path + ": truncated header");
    return nlohmann::json::parse(h);
}
}  // namespace detail

/// Writes a multi-channel volume: JSON header then raw little-endian f64
/// data, row-major within each channel, channels in order.
inline void write_volume(const std::string& path, const std::vector<Field3D>& channels) {
    if (channels.empty()) throw std::invalid_argument("write_volume: no channels");
    for (const auto& c : channels)
        if (!c.same_dims(channels[0]))
            throw std::invalid_argument("write_volume: channel dims differ");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_volume: cannot open " + path);
    nlohmann::json header = {
        {"dims", {channels[0].H, channels[0].W, channels[0].D}},
        {"channels", channels.size()},
        {"spacing", channels[0].spacing},
        {"dtype", "f64le"},
    };
    detail::write_header(os, header);
    for (const auto& c : channels)
        os.write(reinterpret_cast<const char*>(c.data.data()),
                 static_cast<std::streamsize>(c.data.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write_volume: write failed for " + path);
}

inline std::vector<Field3D> read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_volume: cannot open " + path);
    const nlohmann::json header = detail::read_header(is, path);
    if (header.value("dtype", "") != "f64le")
        throw std::runtime_error(path + ": unsupported dtype");
    const auto dims = header.at("dims");
    const int H = dims.at(0), W = dims.at(1), D = dims.at(2);
    const size_t nch = header.at("channels");
    const double spacing = header.value("spacing", 1.0);
    std::vector<Field3D> out;
    for (size_t c = 0; c < nch; ++c) {
        Field3D f(H, W, D, 0.0, spacing);
        is.read(reinterpret_cast<char*>(f.data.data()),
                static_cast<std::streamsize>(f.data.size() * sizeof(double)));
        if (!is) throw std::runtime_error(path + ": truncated data");
        out.push_back(std::move(f));
    }
    return out;
}

/// Checkpoint: the same container with a named-tensor table of contents in
/// the header; offsets are in doubles from the start of the data section.
struct Checkpoint {
    int step = 0;
    std::string config_hash;
    std::vector<Param> tensors;
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json toc = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& t : ck.tensors) {
        toc.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.value.size();
    }
    nlohmann::json header = {
        {"kind", "checkpoint"}, {"version", 1},       {"step", ck.step},
        {"config_hash", ck.config_hash},              {"dtype", "f64le"},
        {"tensors", std::move(toc)},
    };
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_checkpoint: cannot open " + path);
    detail::write_header(os, header);
    for (const auto& t : ck.tensors)
        os.write(reinterpret_cast<const char*>(t.value.data()),
                 static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write_checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_checkpoint: cannot open " + path);
    const nlohmann::json header = detail::read_header(is, path);
    if (header.value("kind", "") != "checkpoint")
        throw std::runtime_error(path + ": not a checkpoint file");
    Checkpoint ck;
    ck.step = header.at("step");
    ck.config_hash = header.value("config_hash", "");
    for (const auto& e : header.at("tensors")) {
        Param p;
        p.name = e.at("name");
        p.shape = e.at("shape").get<Shape>();
        p.value.resize(shape_numel(p.shape));
        ck.tensors.push_back(std::move(p));
    }
    for (auto& p : ck.tensors) {
        is.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!is) throw std::runtime_error(path + ": truncated tensor data");
    }
    return ck;
}

/// Round-trip safe decimal formatting for CSV output.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Axial slice of one channel as a binary PGM (P5) image, min-max scaled;
/// constant slices map to uniform mid-gray.
inline void write_pgm_slice(const std::string& path, const Field3D& f, int z) {
    if (z < 0 || z >= f.D) throw std::invalid_argument("write_pgm_slice: z out of range");
    double lo = f.at(0, 0, z), hi = lo;
    for (int x = 0; x < f.H; ++x)
        for (int y = 0; y < f.W; ++y) {
            const double v = f.at(x, y, z);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm_slice: cannot open " + path);
    os << "P5\n" << f.W << " " << f.H << "\n255\n";
    for (int x = 0; x < f.H; ++x)
        for (int y = 0; y < f.W; ++y) {
            unsigned char px = 128;
            if (hi > lo)
                px = static_cast<unsigned char>(255.0 * (f.at(x, y, z) - lo) / (hi - lo) + 0.5);
            os.put(static_cast<char>(px));
        }
    if (!os) throw std::runtime_error("write_pgm_slice: write failed for " + path);
}

}  // namespace biophys
