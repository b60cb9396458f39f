#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "uml/config.hpp"
#include "uml/errors.hpp"
#include "uml/model.hpp"

namespace uml {

// Checkpoint container, format version 1:
//   magic "UMLCKPT\0" | u32 version | u64 config_len | config text (key=value)
//   | u32 n_params | per param: u16 name_len, name, u32 c,h,w, f32[] values
// All integers and floats little-endian.
namespace ckpt {

constexpr char kMagic[8] = {'U', 'M', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void write_le(std::ofstream& f, U v) {
    static_assert(std::is_integral_v<U>);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i)
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::ifstream& f) {
    unsigned char buf[sizeof(U)];
    f.read(reinterpret_cast<char*>(buf), sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

inline void write_f32(std::ofstream& f, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le(f, bits);
}

inline float read_f32(std::ifstream& f) {
    const std::uint32_t bits = read_le<std::uint32_t>(f);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace ckpt

template <typename T>
void save_checkpoint(const std::string& path, UMLNet<T>& model, const RunConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint for writing: " + path);
    f.write(ckpt::kMagic, 8);
    ckpt::write_le<std::uint32_t>(f, ckpt::kVersion);
    const std::string blob = serialize_config(cfg);
    ckpt::write_le<std::uint64_t>(f, blob.size());
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));

    std::uint32_t n = 0;
    model.visit_params([&n](const std::string&, Tensor<T>&, Tensor<T>&) { ++n; });
    ckpt::write_le<std::uint32_t>(f, n);
    model.visit_params([&f](const std::string& name, Tensor<T>& w, Tensor<T>&) {
        ckpt::write_le<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        ckpt::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(w.c));
        ckpt::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(w.h));
        ckpt::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(w.w));
        for (const T& v : w.v) ckpt::write_f32(f, static_cast<float>(v));
    });
    if (!f) throw io_error("checkpoint write failed: " + path);
}

// Reads the config echo, rebuilds the model from it and fills the weights.
// Shapes are validated name by name against the freshly built model.
template <typename T>
RunConfig load_checkpoint(const std::string& path, UMLNet<T>** model_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, ckpt::kMagic, 8) != 0)
        throw io_error("not a checkpoint file: " + path);
    const std::uint32_t version = ckpt::read_le<std::uint32_t>(f);
    if (version != ckpt::kVersion)
        throw io_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t blob_len = ckpt::read_le<std::uint64_t>(f);
    std::string blob(blob_len, '\0');
    f.read(blob.data(), static_cast<std::streamsize>(blob_len));
    RunConfig cfg = parse_config_text(blob);
    cfg.model.init_seed = cfg.weight_seed();

    auto* model = new UMLNet<T>(cfg.model);
    const std::uint32_t n = ckpt::read_le<std::uint32_t>(f);

    std::uint32_t expected = 0;
    model->visit_params([&expected](const std::string&, Tensor<T>&, Tensor<T>&) { ++expected; });
    if (n != expected) {
        delete model;
        throw io_error("checkpoint parameter count mismatch");
    }

    bool ok = true;
    std::string err;
    model->visit_params([&](const std::string& name, Tensor<T>& w, Tensor<T>&) {
        if (!ok) return;
        const std::uint16_t len = ckpt::read_le<std::uint16_t>(f);
        std::string got(len, '\0');
        f.read(got.data(), len);
        const int c = static_cast<int>(ckpt::read_le<std::uint32_t>(f));
        const int h = static_cast<int>(ckpt::read_le<std::uint32_t>(f));
        const int ww = static_cast<int>(ckpt::read_le<std::uint32_t>(f));
        if (got != name || c != w.c || h != w.h || ww != w.w) {
            ok = false;
            err = "checkpoint tensor mismatch at '" + name + "'";
            return;
        }
        for (T& v : w.v) v = static_cast<T>(ckpt::read_f32(f));
    });
    if (!ok || !f) {
        delete model;
        throw io_error(err.empty() ? "truncated checkpoint: " + path : err);
    }
    *model_out = model;
    return cfg;
}

}  // namespace uml
