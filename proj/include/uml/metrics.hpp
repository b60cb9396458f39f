#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "uml/errors.hpp"
#include "uml/tensor.hpp"

namespace uml {

struct ConfusionCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& gts) {
    if (preds.empty() || preds.size() != gts.size())
        throw invalid_input("accuracy: empty or mismatched inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == gts[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

inline ConfusionCounts confusion(const std::vector<int>& preds, const std::vector<int>& gts,
                                 int positive_class) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] == positive_class, g = gts[i] == positive_class;
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// Positive-class F1 = 2TP / (2TP + FP + FN); 0 when the denominator is 0.
inline double f1_score(const std::vector<int>& preds, const std::vector<int>& gts,
                       int positive_class = 1) {
    if (preds.empty() || preds.size() != gts.size())
        throw invalid_input("f1_score: empty or mismatched inputs");
    for (std::size_t i = 0; i < preds.size(); ++i)
        if ((preds[i] != 0 && preds[i] != 1) || (gts[i] != 0 && gts[i] != 1))
            throw invalid_input("f1_score: labels must be binary");
    const ConfusionCounts c = confusion(preds, gts, positive_class);
    const long long den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

// Unweighted mean of the per-class F1 over both binary classes.
inline double f1_macro(const std::vector<int>& preds, const std::vector<int>& gts) {
    return 0.5 * (f1_score(preds, gts, 1) + f1_score(preds, gts, 0));
}

inline double dice_score(const LabelMap& pred, const LabelMap& gt, int class_id) {
    if (pred.h != gt.h || pred.w != gt.w) throw invalid_input("dice_score: shape mismatch");
    long long np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.v[i] == class_id, g = gt.v[i] == class_id;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

namespace detail {

// Surface pixels: foreground with a 4-neighbor outside the class or touching
// the image border. Returned in row-major order.
inline std::vector<std::pair<int, int>> surface_pixels(const LabelMap& m, int class_id) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (m.at(y, x) != class_id) continue;
            const bool border = y == 0 || x == 0 || y == m.h - 1 || x == m.w - 1;
            if (border || m.at(y - 1, x) != class_id || m.at(y + 1, x) != class_id ||
                m.at(y, x - 1) != class_id || m.at(y, x + 1) != class_id)
                pts.emplace_back(y, x);
        }
    return pts;
}

// 1-D squared-distance transform (Felzenszwalb-Huttenlocher lower envelope).
inline void dt_1d(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                  std::vector<double>& z, int n) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
    }
}

// Exact squared Euclidean distance to the nearest marked pixel.
inline std::vector<double> squared_edt(const std::vector<std::pair<int, int>>& pts, int h,
                                       int w) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> grid(static_cast<std::size_t>(h) * w, kInf);
    for (const auto& [y, x] : pts) grid[static_cast<std::size_t>(y) * w + x] = 0.0;

    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
        dt_1d(f, d, v, z, h);
        for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[x] = grid[static_cast<std::size_t>(y) * w + x];
        dt_1d(f, d, v, z, w);
        for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = d[x];
    }
    return grid;
}

}  // namespace detail

// Average symmetric surface distance in pixel units, accelerated by an exact
// distance transform. Empty surfaces make the value undefined; callers count
// those via n_excluded_assd.
inline std::optional<double> assd(const LabelMap& pred, const LabelMap& gt, int class_id) {
    if (pred.h != gt.h || pred.w != gt.w) throw invalid_input("assd: shape mismatch");
    const auto ps = detail::surface_pixels(pred, class_id);
    const auto gs = detail::surface_pixels(gt, class_id);
    if (ps.empty() || gs.empty()) return std::nullopt;

    const std::vector<double> d2_to_gt = detail::squared_edt(gs, pred.h, pred.w);
    const std::vector<double> d2_to_pred = detail::squared_edt(ps, pred.h, pred.w);

    double sum_pg = 0.0;
    for (const auto& [y, x] : ps)
        sum_pg += std::sqrt(d2_to_gt[static_cast<std::size_t>(y) * pred.w + x]);
    double sum_gp = 0.0;
    for (const auto& [y, x] : gs)
        sum_gp += std::sqrt(d2_to_pred[static_cast<std::size_t>(y) * pred.w + x]);

    const double mean_pg = sum_pg / static_cast<double>(ps.size());
    const double mean_gp = sum_gp / static_cast<double>(gs.size());
    return (mean_pg + mean_gp) / 2.0;
}

// Evaluation summary for one (split, sigma) pair. Dice/ASSD are averaged
// per image and then over images; images whose surfaces are empty for a class
// are excluded from that class's ASSD mean and counted.
struct MetricsReport {
    double acc = 0.0;
    double f1 = 0.0;
    std::map<int, double> dice_per_class;
    std::map<int, double> assd_per_class;  // absent key: all images excluded
    ConfusionCounts counts;
    int n = 0;
    int n_excluded_assd = 0;
    double mean_uc = 0.0;  // mean image-level uncertainty
    double mean_us = 0.0;  // mean pixel-wise uncertainty
};

}  // namespace uml
