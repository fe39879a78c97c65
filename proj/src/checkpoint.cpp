// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "bkv/bytes.hpp"

namespace bkv {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in || std::filesystem::is_directory(path)) {
        throw IoError("cannot open " + path);
    }
    std::vector<std::uint8_t> out{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) {
        throw IoError("read failed on " + path);
    }
    return out;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to " + path);
    }
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in blocks.
    constexpr std::size_t kBlock = 1u << 30;
    for (std::size_t off = 0; off < bytes.size(); off += kBlock) {
        const std::size_t n = std::min(kBlock, bytes.size() - off);
        crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_model(const TinyModel<float>& model) {
    ByteWriter w;
    w.put_bytes("ACRE");
    w.put_u32(kCheckpointVersion);
    const auto& c = model.config;
    w.put_u32(static_cast<std::uint32_t>(c.n_layers));
    w.put_u32(static_cast<std::uint32_t>(c.n_heads));
    w.put_u32(static_cast<std::uint32_t>(c.head_dim));
    w.put_u32(static_cast<std::uint32_t>(c.vocab_size));
    w.put_u32(static_cast<std::uint32_t>(c.ffn_dim));
    w.put_u64(c.seed.value);
    for (const auto& p : parameters(model)) {
        w.put_f32s(p.matrix->data());
    }
    return w.take();
}

TinyModel<float> deserialize_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.get_bytes(4) != "ACRE") {
        throw FormatError("bad checkpoint magic", 0);
    }
    const std::size_t version_at = r.offset();
    if (const auto v = r.get_u32(); v != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
    }
    ModelConfig cfg;
    cfg.n_layers = r.get_u32();
    cfg.n_heads = r.get_u32();
    cfg.head_dim = r.get_u32();
    cfg.vocab_size = r.get_u32();
    cfg.ffn_dim = r.get_u32();
    cfg.seed = RngSeed{r.get_u64()};
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid checkpoint config: ") + e.what(), 8);
    }
    // Guard against absurd headers before allocating.
    r.require(4 * parameter_count(cfg), "truncated checkpoint weights");

    // Shapes come from a freshly shaped model; values are overwritten.
    TinyModel<float> model;
    model.config = cfg;
    model.layers.resize(cfg.n_layers);
    const std::size_t h = cfg.hidden_dim();
    model.token_embedding = Matrix<float>(cfg.vocab_size, h);
    model.l1_embedding = Matrix<float>(1, h);
    for (auto& lw : model.layers) {
        lw.attn_norm = Matrix<float>(1, h);
        lw.wq = lw.wk = lw.wv = lw.wo = Matrix<float>(h, h);
        lw.wq_l1 = lw.wk_l1 = lw.wv_l1 = Matrix<float>(h, h);
        lw.ffn_norm = Matrix<float>(1, h);
        lw.ffn_up = Matrix<float>(h, cfg.ffn_dim);
        lw.ffn_down = Matrix<float>(cfg.ffn_dim, h);
    }
    model.final_norm = Matrix<float>(1, h);
    model.output_head = Matrix<float>(h, cfg.vocab_size);
    for (auto& p : parameters(model)) {
        r.get_f32s(p.matrix->data());
    }
    if (r.remaining() != 0) {
        throw FormatError("trailing bytes after checkpoint", r.offset());
    }
    return model;
}

void save_model(const TinyModel<float>& model, const std::string& path) {
    write_file(path, serialize_model(model));
}

TinyModel<float> load_model(const std::string& path) {
    return deserialize_model(read_file(path));
}

} // namespace bkv
