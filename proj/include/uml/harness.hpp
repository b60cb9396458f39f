#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "uml/checkpoint.hpp"
#include "uml/config.hpp"
#include "uml/errors.hpp"
#include "uml/graph.hpp"
#include "uml/losses.hpp"
#include "uml/metrics.hpp"
#include "uml/model.hpp"
#include "uml/synthdata.hpp"

namespace uml {

// ---------- small CSV helpers ----------

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const Table&) const = default;
};

inline std::string fmt_metric(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string fmt_sigma(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline void write_table_csv(const std::filesystem::path& path, const RunConfig& cfg,
                            const Table& t) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open for writing: " + path.string());
    for (const auto& [k, v] : to_kv(cfg)) f << "# " << k << " = " << v << "\n";
    for (std::size_t i = 0; i < t.header.size(); ++i)
        f << (i ? "," : "") << t.header[i];
    f << "\n";
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
        f << "\n";
    }
    if (!f) throw io_error("write failed: " + path.string());
}

inline Table read_table_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open for reading: " + path.string());
    Table t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        out.push_back(cur);
        return out;
    };
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (t.header.empty())
            t.header = split(line);
        else
            t.rows.push_back(split(line));
    }
    return t;
}

// ---------- optimizer ----------

// Adam with decoupled weight decay; decay applies to weight tensors only
// (parameter names ending ".w"), never to biases.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

    void step(UMLNet<T>& model, double grad_scale) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        std::size_t slot = 0;
        model.visit_params([&](const std::string& name, Tensor<T>& w, Tensor<T>& g) {
            if (slot == m_.size()) {
                m_.emplace_back(w.size(), 0.0);
                v_.emplace_back(w.size(), 0.0);
            }
            auto& m = m_[slot];
            auto& v = v_[slot];
            const bool decay = name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = static_cast<double>(g[i]) * grad_scale;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                double upd = lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
                if (decay) upd += lr_ * wd_ * static_cast<double>(w[i]);
                w[i] = static_cast<T>(static_cast<double>(w[i]) - upd);
            }
            ++slot;
        });
    }

private:
    double lr_, wd_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------- loss attachment ----------

template <typename T>
struct LossValues {
    double mutual = 0.0, cls = 0.0, seg = 0.0, total = 0.0;
};

template <typename T>
LossValues<T> attach_losses(Graph<T>& g, const typename UMLNet<T>::ForwardRefs& r,
                            const Sample& sample, const LossWeights<T>& w, int num_classes,
                            typename Graph<T>::Ref* total_ref) {
    std::vector<T> y(num_classes, T(0));
    y[sample.label] = T(1);
    const auto lm = g.mutual_loss_op(r.ev.alpha, sample.mask, w.lambda_m1, w.lambda_m2);
    const auto lc = g.cls_loss_op(r.cls_alpha, y, w.lambda_c);
    const auto ls = g.ds_loss_op(r.dec.s, sample.mask);
    const auto total = g.weighted_sum({{lm, w.w_m}, {lc, w.w_c}, {ls, w.w_s}});
    LossValues<T> out;
    out.mutual = static_cast<double>(g.value(lm)[0]);
    out.cls = static_cast<double>(g.value(lc)[0]);
    out.seg = static_cast<double>(g.value(ls)[0]);
    out.total = static_cast<double>(g.value(total)[0]);
    if (total_ref) *total_ref = total;
    return out;
}

// ---------- evaluation ----------

inline std::uint64_t noise_seed(const DataConfig& data, int split_id, int index, double sigma) {
    return derive_seed(data.master_seed, 0x4E + split_id, static_cast<std::uint64_t>(index),
                       std::bit_cast<std::uint64_t>(sigma));
}

inline int split_id_of(const std::string& name) {
    if (name == "train") return 1;
    if (name == "val") return 2;
    if (name == "test") return 3;
    throw config_error("unknown split: " + name);
}

template <typename T>
MetricsReport evaluate_model(UMLNet<T>& model, const std::vector<Sample>& split, int split_id,
                             const DataConfig& data, double sigma, bool macro = false) {
    if (split.empty()) throw invalid_input("evaluate: empty split");
    const int Q = model.config().num_seg_classes;
    MetricsReport rep;
    rep.n = static_cast<int>(split.size());
    std::vector<int> preds, gts;
    std::map<int, double> dice_sum;
    std::map<int, double> assd_sum;
    std::map<int, int> assd_n;
    double uc_sum = 0.0, us_sum = 0.0;

    for (std::size_t i = 0; i < split.size(); ++i) {
        const Sample& s = split[i];
        Tensor<float> noisy = add_gaussian_noise(
            s.image, sigma, noise_seed(data, split_id, static_cast<int>(i), sigma));
        Tensor<T> img(1, noisy.h, noisy.w);
        for (std::size_t j = 0; j < noisy.size(); ++j) img[j] = static_cast<T>(noisy[j]);

        Graph<T> g;
        const auto refs = model.forward(g, img);
        const ModelOutput<T> out = model.read_output(g, refs);

        int pred = 0;
        for (std::size_t k = 1; k < out.cls_opinion.beliefs.size(); ++k)
            if (out.cls_opinion.beliefs[k] > out.cls_opinion.beliefs[pred])
                pred = static_cast<int>(k);
        preds.push_back(pred);
        gts.push_back(s.label);
        uc_sum += static_cast<double>(out.cls_opinion.uncertainty);

        double us = 0.0;
        for (const T& u : out.seg_uncertainty.v) us += static_cast<double>(u);
        us_sum += us / static_cast<double>(out.seg_uncertainty.size());

        for (int q = 1; q < Q; ++q) {
            dice_sum[q] += dice_score(out.final_seg, s.mask, q);
            const auto a = assd(out.final_seg, s.mask, q);
            if (a) {
                assd_sum[q] += *a;
                assd_n[q] += 1;
            } else {
                rep.n_excluded_assd += 1;
            }
        }
    }

    rep.acc = accuracy(preds, gts);
    rep.f1 = macro ? f1_macro(preds, gts) : f1_score(preds, gts, 1);
    rep.counts = confusion(preds, gts, 1);
    for (int q = 1; q < Q; ++q) {
        rep.dice_per_class[q] = dice_sum[q] / rep.n;
        if (assd_n[q] > 0) rep.assd_per_class[q] = assd_sum[q] / assd_n[q];
    }
    rep.mean_uc = uc_sum / rep.n;
    rep.mean_us = us_sum / rep.n;
    return rep;
}

// ---------- training ----------

struct EpochRecord {
    int epoch = 0;
    double lambda_kl = 0.0;
    double train_m = 0.0, train_c = 0.0, train_s = 0.0, train_total = 0.0;
    double val_m = 0.0, val_c = 0.0, val_s = 0.0, val_total = 0.0;
    double val_acc = 0.0, val_mean_dice = 0.0;
};

struct RunRecord {
    RunConfig cfg;
    std::vector<EpochRecord> curves;
    int best_epoch = -1;
    double best_score = 0.0;
    // (split name, sigma string) -> report, for every configured sigma
    std::map<std::pair<std::string, std::string>, MetricsReport> reports;
    std::uint64_t train_hash = 0, val_hash = 0, test_hash = 0;
    double wall_seconds = 0.0;
    std::string checkpoint_path;
};

namespace detail {

inline std::vector<std::string> metric_header(int Q) {
    std::vector<std::string> h{"split", "sigma", "n", "acc", "f1"};
    for (int q = 1; q < Q; ++q) {
        const std::string tag = (Q == 3) ? (q == 1 ? "disc" : "cup") : "c" + std::to_string(q);
        h.push_back("di_" + tag);
        h.push_back("assd_" + tag);
    }
    h.push_back("mean_uc");
    h.push_back("mean_us");
    h.push_back("n_excluded_assd");
    return h;
}

inline std::vector<std::string> metric_row(const std::string& split, double sigma,
                                           const MetricsReport& r, int Q) {
    std::vector<std::string> row{split, fmt_sigma(sigma), std::to_string(r.n),
                                 fmt_metric(r.acc), fmt_metric(r.f1)};
    for (int q = 1; q < Q; ++q) {
        row.push_back(fmt_metric(r.dice_per_class.count(q) ? r.dice_per_class.at(q) : 0.0));
        row.push_back(r.assd_per_class.count(q) ? fmt_metric(r.assd_per_class.at(q))
                                                : std::string("excluded"));
    }
    row.push_back(fmt_metric(r.mean_uc));
    row.push_back(fmt_metric(r.mean_us));
    row.push_back(std::to_string(r.n_excluded_assd));
    return row;
}

template <typename T>
std::vector<Tensor<T>> snapshot_params(UMLNet<T>& model) {
    std::vector<Tensor<T>> snap;
    model.visit_params(
        [&snap](const std::string&, Tensor<T>& w, Tensor<T>&) { snap.push_back(w); });
    return snap;
}

template <typename T>
void restore_params(UMLNet<T>& model, const std::vector<Tensor<T>>& snap) {
    std::size_t i = 0;
    model.visit_params([&](const std::string&, Tensor<T>& w, Tensor<T>&) { w = snap[i++]; });
}

inline void check_finite_loss(const LossValues<float>& lv, int epoch) {
    auto bad = [](double x) { return !std::isfinite(x); };
    if (bad(lv.mutual))
        throw numerical_error("mutual loss diverged at epoch " + std::to_string(epoch));
    if (bad(lv.cls))
        throw numerical_error("classification loss diverged at epoch " + std::to_string(epoch));
    if (bad(lv.seg))
        throw numerical_error("segmentation loss diverged at epoch " + std::to_string(epoch));
    if (bad(lv.total))
        throw numerical_error("total loss diverged at epoch " + std::to_string(epoch));
}

}  // namespace detail

// End-to-end training: generate data, minimize the weighted objective with
// Adam, keep the best-validation checkpoint (mean of val accuracy and val
// foreground Dice), then evaluate val/test at every configured sigma.
// Deterministic for a fixed config in single-threaded mode.
inline RunRecord train(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.model.use_un = cfg.md_only ? false : cfg.model.use_un;
    cfg.model.use_ui = cfg.md_only ? false : cfg.model.use_ui;
    cfg.model.init_seed = cfg.weight_seed();
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw io_error("cannot create output directory: " + cfg.out_dir);

    RunRecord rec;
    rec.cfg = cfg;

    const Dataset data = make_dataset(cfg.data, cfg.gen_threads);
    rec.train_hash = split_hash(data.train);
    rec.val_hash = split_hash(data.val);
    rec.test_hash = split_hash(data.test);

    UMLNet<float> model(cfg.model);
    AdamW<float> opt(cfg.lr, cfg.weight_decay);

    std::vector<Tensor<float>> best = detail::snapshot_params(model);
    rec.best_epoch = -1;
    rec.best_score = -1.0;

    const int Q = cfg.model.num_seg_classes;
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    bool first_step = true;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        LossWeights<float> w;
        w.w_m = static_cast<float>(cfg.w_m);
        w.w_c = static_cast<float>(cfg.w_c);
        w.w_s = static_cast<float>(cfg.w_s);
        w.lambda_m1 = static_cast<float>(anneal(epoch, cfg.anneal));
        w.lambda_c = w.lambda_m1;
        w.lambda_m2 = static_cast<float>(cfg.lambda_m2);

        // deterministic Fisher-Yates shuffle
        SplitMix64 shuffle_rng(derive_seed(cfg.master_seed, 0xE0, epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }

        EpochRecord er;
        er.epoch = epoch;
        er.lambda_kl = w.lambda_m1;
        double sum_m = 0.0, sum_c = 0.0, sum_s = 0.0, sum_t = 0.0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            model.zero_grads();
            for (std::size_t k = start; k < stop; ++k) {
                const Sample& s = data.train[order[k]];
                Tensor<float> img(1, s.image.h, s.image.w);
                img.v = s.image.v;
                Graph<float> g;
                const auto refs = model.forward(g, img);
                typename Graph<float>::Ref total;
                const LossValues<float> lv =
                    attach_losses(g, refs, s, w, cfg.model.num_classes, &total);
                detail::check_finite_loss(lv, epoch);
                g.backward(total);
                sum_m += lv.mutual;
                sum_c += lv.cls;
                sum_s += lv.seg;
                sum_t += lv.total;
            }
            if (first_step) {
                bool finite = true;
                model.visit_params([&](const std::string&, Tensor<float>&, Tensor<float>& g) {
                    if (finite && !g.all_finite()) finite = false;
                });
                if (!finite)
                    throw numerical_error("non-finite gradient on the first training step");
                first_step = false;
            }
            opt.step(model, 1.0 / static_cast<double>(stop - start));
        }

        const double n_train = static_cast<double>(data.train.size());
        er.train_m = sum_m / n_train;
        er.train_c = sum_c / n_train;
        er.train_s = sum_s / n_train;
        er.train_total = sum_t / n_train;

        // validation pass: losses plus the selection metrics
        double v_m = 0.0, v_c = 0.0, v_s = 0.0, v_t = 0.0, dice_acc = 0.0;
        std::vector<int> vpreds, vgts;
        for (const Sample& s : data.val) {
            Tensor<float> img(1, s.image.h, s.image.w);
            img.v = s.image.v;
            Graph<float> g;
            const auto refs = model.forward(g, img);
            const LossValues<float> lv =
                attach_losses(g, refs, s, w, cfg.model.num_classes, nullptr);
            detail::check_finite_loss(lv, epoch);
            v_m += lv.mutual;
            v_c += lv.cls;
            v_s += lv.seg;
            v_t += lv.total;
            const ModelOutput<float> out = model.read_output(g, refs);
            int pred = 0;
            for (std::size_t k = 1; k < out.cls_opinion.beliefs.size(); ++k)
                if (out.cls_opinion.beliefs[k] > out.cls_opinion.beliefs[pred])
                    pred = static_cast<int>(k);
            vpreds.push_back(pred);
            vgts.push_back(s.label);
            double d = 0.0;
            for (int q = 1; q < Q; ++q) d += dice_score(out.final_seg, s.mask, q);
            dice_acc += d / (Q - 1);
        }
        const double n_val = static_cast<double>(data.val.size());
        er.val_m = v_m / n_val;
        er.val_c = v_c / n_val;
        er.val_s = v_s / n_val;
        er.val_total = v_t / n_val;
        er.val_acc = accuracy(vpreds, vgts);
        er.val_mean_dice = dice_acc / n_val;
        rec.curves.push_back(er);

        const double score = 0.5 * (er.val_acc + er.val_mean_dice);
        if (score > rec.best_score) {
            rec.best_score = score;
            rec.best_epoch = epoch;
            best = detail::snapshot_params(model);
        }
    }

    detail::restore_params(model, best);
    rec.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.umlck").string();
    save_checkpoint(rec.checkpoint_path, model, cfg);

    // final evaluation on val and test at every configured sigma
    for (const std::string& split : {std::string("val"), std::string("test")}) {
        const auto& samples = split == "val" ? data.val : data.test;
        for (double sigma : cfg.eval_sigmas) {
            rec.reports[{split, fmt_sigma(sigma)}] = evaluate_model(
                model, samples, split_id_of(split), cfg.data, sigma, cfg.macro_f1);
        }
    }

    // artifacts: loss curves and the metrics table, both config-stamped
    Table curves;
    curves.header = {"epoch",    "lambda_kl", "train_m",   "train_c",      "train_s",
                     "train_total", "val_m",  "val_c",     "val_s",        "val_total",
                     "val_acc",  "val_mean_dice"};
    for (const EpochRecord& e : rec.curves)
        curves.rows.push_back({std::to_string(e.epoch), fmt_metric(e.lambda_kl),
                               fmt_metric(e.train_m), fmt_metric(e.train_c),
                               fmt_metric(e.train_s), fmt_metric(e.train_total),
                               fmt_metric(e.val_m), fmt_metric(e.val_c), fmt_metric(e.val_s),
                               fmt_metric(e.val_total), fmt_metric(e.val_acc),
                               fmt_metric(e.val_mean_dice)});
    write_table_csv(fs::path(cfg.out_dir) / "curves.csv", cfg, curves);

    Table metrics;
    metrics.header = detail::metric_header(Q);
    for (const std::string& split : {std::string("val"), std::string("test")})
        for (double sigma : cfg.eval_sigmas)
            metrics.rows.push_back(detail::metric_row(
                split, sigma, rec.reports.at({split, fmt_sigma(sigma)}), Q));
    write_table_csv(fs::path(cfg.out_dir) / "metrics.csv", cfg, metrics);

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream summary(fs::path(cfg.out_dir) / "summary.txt");
    summary << "best_epoch = " << rec.best_epoch << "\n"
            << "best_val_score = " << fmt_metric(rec.best_score) << "\n"
            << "wall_seconds = " << fmt_metric(rec.wall_seconds) << "\n"
            << "checkpoint = " << rec.checkpoint_path << "\n"
            << "train_hash = " << rec.train_hash << "\n"
            << "val_hash = " << rec.val_hash << "\n"
            << "test_hash = " << rec.test_hash << "\n";
    return rec;
}

// ---------- checkpoint-driven entry points ----------

template <typename Fn>
void with_checkpoint(const std::string& path, Fn&& fn) {
    UMLNet<float>* model = nullptr;
    RunConfig cfg = load_checkpoint<float>(path, &model);
    std::unique_ptr<UMLNet<float>> guard(model);
    fn(cfg, *model);
}

inline MetricsReport evaluate(const std::string& ckpt_path, const std::string& split,
                              double sigma) {
    MetricsReport rep;
    with_checkpoint(ckpt_path, [&](const RunConfig& cfg, UMLNet<float>& model) {
        const Dataset data = make_dataset(cfg.data, cfg.gen_threads);
        const auto& samples =
            split == "train" ? data.train : (split == "val" ? data.val : data.test);
        rep = evaluate_model(model, samples, split_id_of(split), cfg.data, sigma,
                             cfg.macro_f1);
    });
    return rep;
}

// Noise sweep over the test split; mirrors the noisy-evaluation table layout.
inline Table noise_sweep(const std::string& ckpt_path, const std::vector<double>& sigmas,
                         const std::string& out_csv = "") {
    Table t;
    with_checkpoint(ckpt_path, [&](const RunConfig& cfg, UMLNet<float>& model) {
        const int Q = cfg.model.num_seg_classes;
        t.header = {"sigma", "acc", "f1"};
        for (int q = 1; q < Q; ++q) {
            const std::string tag =
                (Q == 3) ? (q == 1 ? "disc" : "cup") : "c" + std::to_string(q);
            t.header.push_back("di_" + tag);
            t.header.push_back("assd_" + tag);
        }
        t.header.push_back("mean_uc");
        t.header.push_back("mean_us");

        const Dataset data = make_dataset(cfg.data, cfg.gen_threads);
        for (double sigma : sigmas) {
            const MetricsReport r =
                evaluate_model(model, data.test, 3, cfg.data, sigma, cfg.macro_f1);
            std::vector<std::string> row{fmt_sigma(sigma), fmt_metric(r.acc),
                                         fmt_metric(r.f1)};
            for (int q = 1; q < Q; ++q) {
                row.push_back(fmt_metric(r.dice_per_class.at(q)));
                row.push_back(r.assd_per_class.count(q) ? fmt_metric(r.assd_per_class.at(q))
                                                        : std::string("excluded"));
            }
            row.push_back(fmt_metric(r.mean_uc));
            row.push_back(fmt_metric(r.mean_us));
            t.rows.push_back(std::move(row));
        }
        if (!out_csv.empty()) write_table_csv(out_csv, cfg, t);
    });
    return t;
}

// ---------- ablation ----------

struct AblationResult {
    Table table;
    std::vector<RunRecord> records;  // MD, MD+UN, MD+UI, MD+UN+UI
};

// Trains the four ablation rows on a shared data seed and reports clean-data
// test metrics per row. The MD+UN+UI row is the proposed configuration.
inline AblationResult ablate(const RunConfig& base, const std::string& out_csv = "") {
    struct Row {
        const char* name;
        bool un, ui;
    };
    const Row rows[4] = {{"MD", false, false},
                         {"MD+UN", true, false},
                         {"MD+UI", false, true},
                         {"MD+UN+UI", true, true}};
    AblationResult out;
    const int Q = base.model.num_seg_classes;
    out.table.header = {"config", "md", "un", "ui", "proposed", "split_hash", "acc", "f1"};
    for (int q = 1; q < Q; ++q) {
        const std::string tag = (Q == 3) ? (q == 1 ? "disc" : "cup") : "c" + std::to_string(q);
        out.table.header.push_back("di_" + tag);
        out.table.header.push_back("assd_" + tag);
    }
    out.table.header.push_back("mean_uc");
    out.table.header.push_back("mean_us");

    for (const Row& row : rows) {
        RunConfig cfg = base;
        cfg.model.use_un = row.un;
        cfg.model.use_ui = row.ui;
        cfg.md_only = !row.un && !row.ui;
        cfg.out_dir = (std::filesystem::path(base.out_dir) / row.name).string();
        RunRecord rec = train(cfg);

        const MetricsReport& r = rec.reports.at({"test", fmt_sigma(0.0)});
        char hash[24];
        std::snprintf(hash, sizeof hash, "%016llx",
                      static_cast<unsigned long long>(rec.test_hash));
        std::vector<std::string> cells{row.name,
                                       "1",
                                       row.un ? "1" : "0",
                                       row.ui ? "1" : "0",
                                       (row.un && row.ui) ? "1" : "0",
                                       hash,
                                       fmt_metric(r.acc),
                                       fmt_metric(r.f1)};
        for (int q = 1; q < Q; ++q) {
            cells.push_back(fmt_metric(r.dice_per_class.at(q)));
            cells.push_back(r.assd_per_class.count(q) ? fmt_metric(r.assd_per_class.at(q))
                                                      : std::string("excluded"));
        }
        cells.push_back(fmt_metric(r.mean_uc));
        cells.push_back(fmt_metric(r.mean_us));
        out.table.rows.push_back(std::move(cells));
        out.records.push_back(std::move(rec));
    }
    if (!out_csv.empty()) write_table_csv(out_csv, base, out.table);
    return out;
}

// ---------- map export ----------

// Writes, per sample: the (possibly noisy) input, the predicted mask with
// class indices spread over gray levels, and the pixel-wise uncertainty
// mapped [0,1] -> [0,255]; plus a predictions CSV with beliefs and U^c.
inline void export_maps(const std::string& ckpt_path, const std::string& split, double sigma,
                        const std::string& out_dir, bool dump_channels = false,
                        int limit = 0) {
    namespace fs = std::filesystem;
    with_checkpoint(ckpt_path, [&](const RunConfig& cfg, UMLNet<float>& model) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw io_error("cannot create output directory: " + out_dir);

        const Dataset data = make_dataset(cfg.data, cfg.gen_threads);
        const auto& samples =
            split == "train" ? data.train : (split == "val" ? data.val : data.test);
        const int split_id = split_id_of(split);
        const int Q = cfg.model.num_seg_classes;
        const int K = cfg.model.num_classes;

        std::vector<std::string> echo;
        for (const auto& [k, v] : to_kv(cfg)) echo.push_back(k + " = " + v);

        Table preds;
        preds.header = {"filename", "true_label", "pred_label"};
        for (int k = 0; k < K; ++k) preds.header.push_back("b_" + std::to_string(k));
        preds.header.push_back("uncertainty");

        const int n = limit > 0 ? std::min<int>(limit, samples.size())
                                : static_cast<int>(samples.size());
        SplitMix64 chan_rng(derive_seed(cfg.master_seed, 0xC4));
        for (int i = 0; i < n; ++i) {
            const Sample& s = samples[i];
            const Tensor<float> noisy =
                add_gaussian_noise(s.image, sigma, noise_seed(cfg.data, split_id, i, sigma));
            Graph<float> g;
            const auto refs = model.forward(g, noisy);
            const ModelOutput<float> out = model.read_output(g, refs);

            char stem[32];
            std::snprintf(stem, sizeof stem, "sample_%04d", i);
            write_pgm(fs::path(out_dir) / (std::string(stem) + "_input.pgm"), to_gray(noisy),
                      noisy.h, noisy.w, echo);

            std::vector<unsigned char> mask_px(out.final_seg.size());
            for (std::size_t j = 0; j < mask_px.size(); ++j)
                mask_px[j] = static_cast<unsigned char>(out.final_seg.v[j] * 255 / (Q - 1));
            write_pgm(fs::path(out_dir) / (std::string(stem) + "_pred.pgm"), mask_px,
                      out.final_seg.h, out.final_seg.w, echo);

            write_pgm(fs::path(out_dir) / (std::string(stem) + "_unc.pgm"),
                      to_gray(out.seg_uncertainty), out.seg_uncertainty.h,
                      out.seg_uncertainty.w, echo);

            int pred = 0;
            for (std::size_t k = 1; k < out.cls_opinion.beliefs.size(); ++k)
                if (out.cls_opinion.beliefs[k] > out.cls_opinion.beliefs[pred])
                    pred = static_cast<int>(k);
            std::vector<std::string> row{std::string(stem) + "_input.pgm",
                                         std::to_string(s.label), std::to_string(pred)};
            char buf[32];
            for (int k = 0; k < K; ++k) {
                std::snprintf(buf, sizeof buf, "%.4f",
                              static_cast<double>(out.cls_opinion.beliefs[k]));
                row.push_back(buf);
            }
            std::snprintf(buf, sizeof buf, "%.4f",
                          static_cast<double>(out.cls_opinion.uncertainty));
            row.push_back(buf);
            preds.rows.push_back(std::move(row));

            if (dump_channels) {
                auto dump = [&](const Tensor<float>& t, const char* tag) {
                    for (int c = 0; c < 3; ++c) {
                        const int ch = static_cast<int>(chan_rng.next_below(t.c));
                        Tensor<float> plane(1, t.h, t.w);
                        float lo = t.channel(ch)[0], hi = lo;
                        for (int j = 0; j < t.plane(); ++j) {
                            lo = std::min(lo, t.channel(ch)[j]);
                            hi = std::max(hi, t.channel(ch)[j]);
                        }
                        const float span = hi > lo ? hi - lo : 1.0f;
                        for (int j = 0; j < t.plane(); ++j)
                            plane[j] = (t.channel(ch)[j] - lo) / span;
                        char name[64];
                        std::snprintf(name, sizeof name, "%s_%s_ch%03d.pgm", stem, tag, ch);
                        write_pgm(fs::path(out_dir) / name, to_gray(plane), t.h, t.w, echo);
                    }
                };
                dump(out.cls_stage4_feature, "fc4");
                dump(out.reliable_cls_feature, "rc");
            }
        }
        write_table_csv(fs::path(out_dir) / "predictions.csv", cfg, preds);
    });
}

// ---------- dataset export (gen-data) ----------

inline void export_dataset(const Dataset& data, const DataConfig& cfg,
                           const std::string& out_dir) {
    namespace fs = std::filesystem;
    RunConfig echo_cfg;
    echo_cfg.data = cfg;
    const std::pair<const char*, const std::vector<Sample>*> splits[3] = {
        {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
    for (const auto& [name, samples] : splits) {
        const fs::path dir = fs::path(out_dir) / name;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw io_error("cannot create dataset directory: " + dir.string());
        Table manifest;
        manifest.header = {"filename", "label", "seed"};
        for (std::size_t i = 0; i < samples->size(); ++i) {
            const Sample& s = (*samples)[i];
            char img_name[32], mask_name[32];
            std::snprintf(img_name, sizeof img_name, "img_%04zu.pgm", i);
            std::snprintf(mask_name, sizeof mask_name, "mask_%04zu.pgm", i);
            write_pgm(dir / img_name, to_gray(s.image), s.image.h, s.image.w);
            std::vector<unsigned char> mask_px(s.mask.size());
            for (std::size_t j = 0; j < mask_px.size(); ++j)
                mask_px[j] = static_cast<unsigned char>(s.mask.v[j]);
            write_pgm(dir / mask_name, mask_px, s.mask.h, s.mask.w);
            manifest.rows.push_back(
                {img_name, std::to_string(s.label), std::to_string(s.seed)});
        }
        write_table_csv(dir / "manifest.csv", echo_cfg, manifest);
    }
}

}  // namespace uml
