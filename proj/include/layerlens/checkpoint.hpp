#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/nn.hpp"

namespace layerlens {

// Checkpoint file layout (all multi-byte values little-endian):
//   "LLNS" | version u8 (=1) | depth u32 | input_dim u32 | hidden_width u32 |
//   output_dim u32 | per layer: weights row-major f64[], bias f64[]
//   (trained parameters first, then the init snapshot in the same layout)

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw ParseError("checkpoint: truncated while reading header");
    return v;
}

inline void write_layers(std::ostream& out, const std::vector<Layer>& layers) {
    for (const Layer& layer : layers) {
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
                const double v = layer.weights(r, c);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
            const double v = layer.bias(r);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    }
}

inline void read_layers(std::istream& in, const ArchSpec& arch, std::vector<Layer>& layers) {
    layers.resize(arch.depth);
    for (int l = 0; l < arch.depth; ++l) {
        Layer& layer = layers[l];
        layer.weights.resize(arch.layer_out(l), arch.layer_in(l));
        layer.bias.resize(arch.layer_out(l));
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
                in.read(reinterpret_cast<char*>(&layer.weights(r, c)), 8);
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
            in.read(reinterpret_cast<char*>(&layer.bias(r)), 8);
        if (!in) throw ParseError("checkpoint: truncated while reading parameters");
    }
}

}  // namespace detail

inline void save_checkpoint(const ModelState& model, const InitSnapshot& snapshot,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("checkpoint: cannot open for writing: " + path.string());
    out.write("LLNS", 4);
    const char version = 1;
    out.write(&version, 1);
    detail::write_u32(out, static_cast<std::uint32_t>(model.arch.depth));
    detail::write_u32(out, static_cast<std::uint32_t>(model.arch.input_dim));
    detail::write_u32(out, static_cast<std::uint32_t>(model.arch.hidden_width));
    detail::write_u32(out, static_cast<std::uint32_t>(model.arch.output_dim));
    detail::write_layers(out, model.layers);
    detail::write_layers(out, snapshot.layers);
    if (!out) throw Error("checkpoint: write failed: " + path.string());
}

inline std::pair<ModelState, InitSnapshot> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in) throw ParseError("checkpoint: truncated before magic");
    if (std::memcmp(magic, "LLNS", 4) != 0)
        throw ParseError(std::string("checkpoint: bad magic \"") + std::string(magic, 4) + "\"");
    char version;
    in.read(&version, 1);
    if (!in) throw ParseError("checkpoint: truncated before version");
    if (version != 1)
        throw ParseError("checkpoint: unsupported version " + std::to_string(int(version)));

    ArchSpec arch;
    arch.depth = static_cast<int>(detail::read_u32(in));
    arch.input_dim = static_cast<int>(detail::read_u32(in));
    arch.hidden_width = static_cast<int>(detail::read_u32(in));
    arch.output_dim = static_cast<int>(detail::read_u32(in));
    arch.validate();

    ModelState model;
    model.arch = arch;
    detail::read_layers(in, arch, model.layers);
    InitSnapshot snapshot;
    detail::read_layers(in, arch, snapshot.layers);
    return {std::move(model), std::move(snapshot)};
}

}  // namespace layerlens
