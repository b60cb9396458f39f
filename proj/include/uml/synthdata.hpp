#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "uml/errors.hpp"
#include "uml/rng.hpp"
#include "uml/tensor.hpp"

namespace uml {

// Synthetic "disc/cup" task: two concentric intensity plateaus over a textured
// background. The class label is the cup-to-disc diameter ratio thresholded,
// so classification is a pure function of the segmentation geometry.
struct DataConfig {
    int height = 64, width = 64;
    int n_train = 512, n_val = 128, n_test = 128;
    double ratio_threshold = 0.6;
    // no sample is drawn with |ratio - threshold| < ratio_margin, so the label
    // stays recoverable from the rasterized mask
    double ratio_margin = 0.06;
    double radius_min = 11.0, radius_max = 21.0;
    double rho_min = 0.35, rho_max = 0.78;
    double bg_intensity = 0.32, disc_intensity = 0.62, cup_intensity = 0.88;
    double texture_amp = 0.06, noise_amp = 0.02, falloff = 0.8;
    double balance_cap = 0.55;  // max fraction of either class per split
    std::uint64_t master_seed = 42;

    void validate() const {
        if (height % 8 || width % 8)
            throw config_error("data: height and width must be divisible by 8");
        if (!(ratio_threshold > 0.0 && ratio_threshold < 1.0))
            throw config_error("data: ratio_threshold must be in (0,1)");
        if (n_train < 0 || n_val < 0 || n_test < 0)
            throw config_error("data: negative split size");
        if (!(radius_min > 0.0 && radius_max >= radius_min))
            throw config_error("data: bad radius range");
        if (!(rho_min > 0.0 && rho_max < 1.0 && rho_max >= rho_min))
            throw config_error("data: bad rho range");
        if (!(balance_cap > 0.5 && balance_cap <= 1.0))
            throw config_error("data: balance_cap must be in (0.5, 1]");
    }
};

struct Sample {
    Tensor<float> image;  // (1, H, W), values in [0, 1]
    LabelMap mask;        // 0 = background, 1 = disc, 2 = cup
    int label = 0;        // 1 iff cup/disc diameter ratio > threshold
    std::uint64_t seed = 0;
};

struct Dataset {
    std::vector<Sample> train, val, test;
};

namespace detail {

struct Geometry {
    double cx, cy, rx, ry, rho;
};

inline Geometry draw_geometry(SplitMix64& rng, const DataConfig& cfg) {
    Geometry geo;
    for (int attempt = 0; attempt < 100; ++attempt) {
        geo.rx = rng.uniform(cfg.radius_min, cfg.radius_max);
        geo.ry = rng.uniform(cfg.radius_min, cfg.radius_max);
        geo.cx = rng.uniform(0.0, cfg.width);
        geo.cy = rng.uniform(0.0, cfg.height);
        const double margin = 1.5;
        if (geo.cx - geo.rx < margin || geo.cx + geo.rx > cfg.width - 1 - margin) continue;
        if (geo.cy - geo.ry < margin || geo.cy + geo.ry > cfg.height - 1 - margin) continue;
        // reject ratios inside the ambiguity band around the threshold
        double rho = rng.uniform(cfg.rho_min, cfg.rho_max);
        int rho_tries = 0;
        while (std::abs(rho - cfg.ratio_threshold) < cfg.ratio_margin && rho_tries++ < 100)
            rho = rng.uniform(cfg.rho_min, cfg.rho_max);
        if (rho_tries > 100) continue;
        geo.rho = rho;
        return geo;
    }
    throw config_error("generate_sample: could not place geometry in 100 attempts");
}

}  // namespace detail

// Fully deterministic per (seed, cfg): geometry, texture phases and pixel
// noise all come from one splitmix stream keyed by the seed.
inline Sample generate_sample(std::uint64_t seed, const DataConfig& cfg) {
    cfg.validate();
    SplitMix64 rng(SplitMix64::mix(seed ^ 0x5324'9d38'71febe10ULL));
    const detail::Geometry geo = detail::draw_geometry(rng, cfg);

    Sample s;
    s.seed = seed;
    s.label = geo.rho > cfg.ratio_threshold ? 1 : 0;
    s.image = Tensor<float>(1, cfg.height, cfg.width);
    s.mask = LabelMap(cfg.height, cfg.width);

    const double fx1 = rng.uniform(1.0, 3.0), fy1 = rng.uniform(1.0, 3.0);
    const double fx2 = rng.uniform(2.0, 5.0), fy2 = rng.uniform(2.0, 5.0);
    const double p1 = rng.uniform(0.0, 6.283185307179586);
    const double p2 = rng.uniform(0.0, 6.283185307179586);
    const double tau = 6.283185307179586;

    const double cup_rx = geo.rho * geo.rx, cup_ry = geo.rho * geo.ry;
    auto blend = [&](double u, double r_scale) {
        // u: normalized elliptical radius; positive inside. Soft edge about
        // `falloff` pixels wide.
        const double signed_px = (1.0 - u) * r_scale;
        return 1.0 / (1.0 + std::exp(-signed_px / cfg.falloff));
    };

    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            const double tex =
                0.5 * (std::sin(tau * (fx1 * x / cfg.width + fy1 * y / cfg.height) + p1) +
                       std::sin(tau * (fx2 * x / cfg.width - fy2 * y / cfg.height) + p2));
            double v = cfg.bg_intensity + cfg.texture_amp * tex;

            const double dx = x - geo.cx, dy = y - geo.cy;
            const double u_disc =
                std::sqrt((dx * dx) / (geo.rx * geo.rx) + (dy * dy) / (geo.ry * geo.ry));
            const double u_cup = std::sqrt((dx * dx) / (cup_rx * cup_rx) +
                                           (dy * dy) / (cup_ry * cup_ry));
            const double w_disc = blend(u_disc, std::min(geo.rx, geo.ry));
            const double w_cup = blend(u_cup, std::min(cup_rx, cup_ry));
            v = v + w_disc * (cfg.disc_intensity - v);
            v = v + w_cup * (cfg.cup_intensity - v);
            v += cfg.noise_amp * rng.normal();
            s.image.at(0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            s.mask.at(y, x) = u_cup <= 1.0 ? 2 : (u_disc <= 1.0 ? 1 : 0);
        }
    }
    return s;
}

// i.i.d. zero-mean Gaussian field, the raw (pre-clamp) corruption.
inline Tensor<float> gaussian_noise_field(int h, int w, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw invalid_input("gaussian noise: sigma must be >= 0");
    Tensor<float> f(1, h, w);
    SplitMix64 rng(SplitMix64::mix(seed ^ 0x9059'4b2c'1e8ca3d7ULL));
    for (auto& v : f.v) v = static_cast<float>(sigma * rng.normal());
    return f;
}

inline Tensor<float> add_gaussian_noise(const Tensor<float>& image, double sigma,
                                        std::uint64_t seed) {
    if (sigma < 0.0) throw invalid_input("add_gaussian_noise: sigma must be >= 0");
    if (sigma == 0.0) return image;
    Tensor<float> out = image;
    const Tensor<float> noise = gaussian_noise_field(image.h, image.w, sigma, seed);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(out[i] + noise[i], 0.0f, 1.0f);
    return out;
}

namespace detail {

// Splits draw from disjoint seed streams; a per-class cap keeps every split
// within the configured balance band.
inline std::vector<Sample> make_split(const DataConfig& cfg, int split_id, int n,
                                      int threads) {
    std::vector<Sample> out;
    out.reserve(n);
    const int cap = static_cast<int>(std::ceil(cfg.balance_cap * n));
    int count[2] = {0, 0};
    std::uint64_t attempt = 0;
    const std::uint64_t max_attempts = 64ULL * std::max(n, 1) + 256;

    // Candidate seeds are a pure function of (master_seed, split, attempt), so
    // generation can be probed in parallel without changing the outcome.
    auto seed_of = [&](std::uint64_t a) {
        return derive_seed(cfg.master_seed, 0xD5u + split_id, a);
    };

    if (threads <= 1) {
        while (static_cast<int>(out.size()) < n) {
            if (attempt >= max_attempts)
                throw config_error("make_dataset: could not satisfy class balance");
            Sample s = generate_sample(seed_of(attempt++), cfg);
            if (count[s.label] >= cap) continue;
            ++count[s.label];
            out.push_back(std::move(s));
        }
        return out;
    }

    // Parallel mode: generate candidate samples in deterministic chunks, then
    // apply the identical sequential acceptance rule.
    while (static_cast<int>(out.size()) < n) {
        if (attempt >= max_attempts)
            throw config_error("make_dataset: could not satisfy class balance");
        const int chunk = std::min<std::uint64_t>(
            std::max(threads * 8, 32), max_attempts - attempt);
        std::vector<Sample> candidates(chunk);
        std::vector<std::thread> pool;
        std::size_t stride = (chunk + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const std::size_t lo = t * stride, hi = std::min<std::size_t>(chunk, lo + stride);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] {
                for (std::size_t i = lo; i < hi; ++i)
                    candidates[i] = generate_sample(seed_of(attempt + i), cfg);
            });
        }
        for (auto& th : pool) th.join();
        attempt += chunk;
        for (auto& s : candidates) {
            if (static_cast<int>(out.size()) >= n) break;
            if (count[s.label] >= cap) continue;
            ++count[s.label];
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace detail

inline Dataset make_dataset(const DataConfig& cfg, int threads = 1) {
    cfg.validate();
    Dataset d;
    d.train = detail::make_split(cfg, 1, cfg.n_train, threads);
    d.val = detail::make_split(cfg, 2, cfg.n_val, threads);
    d.test = detail::make_split(cfg, 3, cfg.n_test, threads);
    return d;
}

// Order- and content-sensitive digest of a split; ablation rows trained on the
// same master seed must agree on it.
inline std::uint64_t split_hash(const std::vector<Sample>& split) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (const Sample& s : split) {
        h = SplitMix64::mix(h ^ s.seed);
        h = SplitMix64::mix(h ^ static_cast<std::uint64_t>(s.label));
    }
    return h;
}

// ---- PGM (P5, 8-bit) ----

inline void write_pgm(const std::filesystem::path& path, const std::vector<unsigned char>& px,
                      int h, int w, const std::vector<std::string>& comments = {}) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path.string());
    f << "P5\n";
    for (const auto& c : comments) f << "# " << c << "\n";
    f << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!f) throw io_error("write failed: " + path.string());
}

inline std::vector<unsigned char> to_gray(const Tensor<float>& img) {
    std::vector<unsigned char> px(img.plane());
    for (int i = 0; i < img.plane(); ++i) {
        const float v = std::clamp(img[i], 0.0f, 1.0f);
        px[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    return px;
}

inline std::vector<unsigned char> read_pgm(const std::filesystem::path& path, int* h, int* w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for reading: " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P5") throw io_error("not a P5 PGM: " + path.string());
    auto next_token = [&]() -> long {
        // skip whitespace and # comments
        while (true) {
            int ch = f.peek();
            if (ch == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(ch)) {
                f.get();
            } else {
                break;
            }
        }
        long v;
        f >> v;
        return v;
    };
    const long ww = next_token(), hh = next_token(), maxval = next_token();
    if (maxval != 255) throw io_error("unsupported PGM maxval: " + path.string());
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> px(static_cast<std::size_t>(ww) * hh);
    f.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!f) throw io_error("short PGM read: " + path.string());
    *h = static_cast<int>(hh);
    *w = static_cast<int>(ww);
    return px;
}

}  // namespace uml
