#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ardiff/backbone.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/optimizer.hpp"

namespace ardiff {

// Digest of every architecture-relevant config field; a checkpoint only loads
// into a model built from the same digest.
inline uint64_t config_digest(const ModelConfig& c) {
    std::ostringstream os;
    os << "vocab=" << c.vocab << ";hidden=" << c.hidden << ";n_layers=" << c.n_layers
       << ";diffusion_depth=" << c.diffusion_depth << ";n_heads=" << c.n_heads
       << ";ffn=" << c.ffn() << ";channels=" << c.channels << ";max_text_len=" << c.max_text_len
       << ";grid=" << c.grid_h << "x" << c.grid_w << ";ar_length=" << c.ar_length
       << ";clean=" << c.clean_blocks << ";cond=" << c.ar_condition
       << ";towers=" << (c.towers == TowerMode::Shared ? "shared" : "separate")
       << ";mask=" << (c.mask_mode == MaskMode::Full ? "full" : "mlp")
       << ";theta=" << c.rope_theta << ";eps=" << c.rms_eps;
    return detail::fnv1a(os.str());
}

namespace detail {

inline void write_bytes(std::ofstream& f, const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& f, T v) {
    write_bytes(f, &v, sizeof(v));
}

inline void read_bytes(std::ifstream& f, void* p, size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f) throw CheckpointError("checkpoint truncated");
}

template <class T>
T read_pod(std::ifstream& f) {
    T v;
    read_bytes(f, &v, sizeof(v));
    return v;
}

inline void write_named_f32(std::ofstream& f, const std::string& name, const Mat& m) {
    const auto len = static_cast<uint16_t>(name.size());
    write_pod(f, len);
    write_bytes(f, name.data(), name.size());
    write_pod(f, static_cast<uint32_t>(m.rows));
    write_pod(f, static_cast<uint32_t>(m.cols));
    for (double x : m.v) write_pod(f, static_cast<float>(x));
}

}  // namespace detail

// Parameter checkpoint (.ardf): little-endian, written on little-endian hosts.
//   magic "ARDF" | u32 version | u64 config digest | u32 entry count |
//   entries: u16 name length | name | u32 rows | u32 cols | f32 data row-major.
// EMA parameters are stored under "ema." + name.
inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ParamStore& params, const ParamStore* ema = nullptr) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open for write: " + path);
    f.write("ARDF", 4);
    detail::write_pod(f, static_cast<uint32_t>(1));
    detail::write_pod(f, config_digest(cfg));
    const uint32_t count = static_cast<uint32_t>(params.count() + (ema ? ema->count() : 0));
    detail::write_pod(f, count);
    for (size_t i = 0; i < params.count(); ++i)
        detail::write_named_f32(f, params.names[i], params.values[i]);
    if (ema) {
        for (size_t i = 0; i < ema->count(); ++i)
            detail::write_named_f32(f, "ema." + ema->names[i], ema->values[i]);
    }
    if (!f) throw CheckpointError("write failed: " + path);
}

// Loads a checkpoint into stores created by init_params (shapes must match).
// Returns false for entries that were absent in the file.
inline void load_checkpoint(const std::string& path, const ModelConfig& cfg, ParamStore& params,
                            ParamStore* ema = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open: " + path);
    char magic[4];
    detail::read_bytes(f, magic, 4);
    if (std::memcmp(magic, "ARDF", 4) != 0) throw CheckpointError("bad magic in " + path);
    const auto version = detail::read_pod<uint32_t>(f);
    if (version != 1) throw CheckpointError("unsupported checkpoint version");
    const auto digest = detail::read_pod<uint64_t>(f);
    if (digest != config_digest(cfg))
        throw CheckpointError("checkpoint was written for a different model config");
    const auto count = detail::read_pod<uint32_t>(f);
    std::vector<char> seen(params.count(), 0);
    for (uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_pod<uint16_t>(f);
        std::string name(len, '\0');
        detail::read_bytes(f, name.data(), len);
        const auto rows = detail::read_pod<uint32_t>(f);
        const auto cols = detail::read_pod<uint32_t>(f);
        ParamStore* dst = &params;
        if (name.rfind("ema.", 0) == 0) {
            name = name.substr(4);
            dst = ema;
        }
        if (dst == nullptr || !dst->has(name)) {
            f.seekg(static_cast<std::streamoff>(sizeof(float)) * rows * cols, std::ios::cur);
            continue;
        }
        Mat& m = dst->at(name);
        if (m.rows != static_cast<int>(rows) || m.cols != static_cast<int>(cols))
            throw CheckpointError("shape mismatch for parameter " + name);
        for (double& x : m.v) x = detail::read_pod<float>(f);
        if (dst == &params) seen[params.index_of(name)] = 1;
    }
    for (size_t i = 0; i < params.count(); ++i) {
        if (!seen[i]) throw CheckpointError("checkpoint missing parameter " + params.names[i]);
    }
}

// Training state (.ards): full-precision copies of parameters, EMA, and Adam
// moments, so a resumed run continues on the bit-identical trajectory the
// float32 checkpoint cannot provide.
//   magic "ARDS" | u32 version | u64 config digest | i64 train step |
//   i64 adam step | u32 table count | named f64 tables in fixed order
//   (param, ema, adam.m, adam.v per parameter).
inline void save_train_state(const std::string& path, const ModelConfig& cfg, int64_t step,
                             const ParamStore& params, const ParamStore& ema,
                             const AdamState& adam) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open for write: " + path);
    f.write("ARDS", 4);
    detail::write_pod(f, static_cast<uint32_t>(1));
    detail::write_pod(f, config_digest(cfg));
    detail::write_pod(f, step);
    detail::write_pod(f, adam.step);
    detail::write_pod(f, static_cast<uint32_t>(params.count()));
    auto table = [&](const Mat& m) {
        detail::write_pod(f, static_cast<uint32_t>(m.rows));
        detail::write_pod(f, static_cast<uint32_t>(m.cols));
        detail::write_bytes(f, m.v.data(), m.v.size() * sizeof(double));
    };
    for (size_t i = 0; i < params.count(); ++i) {
        const auto len = static_cast<uint16_t>(params.names[i].size());
        detail::write_pod(f, len);
        detail::write_bytes(f, params.names[i].data(), len);
        table(params.values[i]);
        table(ema.values[i]);
        table(adam.m[i]);
        table(adam.v[i]);
    }
    if (!f) throw CheckpointError("write failed: " + path);
}

inline int64_t load_train_state(const std::string& path, const ModelConfig& cfg,
                                ParamStore& params, ParamStore& ema, AdamState& adam) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open: " + path);
    char magic[4];
    detail::read_bytes(f, magic, 4);
    if (std::memcmp(magic, "ARDS", 4) != 0) throw CheckpointError("bad magic in " + path);
    if (detail::read_pod<uint32_t>(f) != 1) throw CheckpointError("unsupported state version");
    if (detail::read_pod<uint64_t>(f) != config_digest(cfg))
        throw CheckpointError("train state was written for a different model config");
    const auto step = detail::read_pod<int64_t>(f);
    adam.step = detail::read_pod<int64_t>(f);
    const auto count = detail::read_pod<uint32_t>(f);
    if (count != params.count()) throw CheckpointError("train state table count mismatch");
    auto table = [&](Mat& m, const std::string& name) {
        const auto rows = detail::read_pod<uint32_t>(f);
        const auto cols = detail::read_pod<uint32_t>(f);
        if (m.rows != static_cast<int>(rows) || m.cols != static_cast<int>(cols))
            throw CheckpointError("state shape mismatch for " + name);
        detail::read_bytes(f, m.v.data(), m.v.size() * sizeof(double));
    };
    for (uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_pod<uint16_t>(f);
        std::string name(len, '\0');
        detail::read_bytes(f, name.data(), len);
        if (name != params.names[i]) throw CheckpointError("state name order mismatch: " + name);
        table(params.values[i], name);
        table(ema.values[i], name);
        table(adam.m[i], name);
        table(adam.v[i], name);
    }
    return step;
}

}  // namespace ardiff
