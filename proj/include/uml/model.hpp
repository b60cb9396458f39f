#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uml/errors.hpp"
#include "uml/evidential.hpp"
#include "uml/graph.hpp"
#include "uml/layers.hpp"
#include "uml/rng.hpp"
#include "uml/tensor.hpp"

namespace uml {

struct ModelConfig {
    int num_classes = 2;      // K, image-level
    int num_seg_classes = 3;  // Q, pixel-wise
    std::array<int, 4> enc_widths{16, 32, 64, 128};
    std::array<int, 3> ev_widths{32, 16, 8};   // evidence-head widths, coarse to fine
    std::array<int, 3> dec_widths{32, 16, 16}; // navigator decoder widths, coarse to fine
    int mr_channels = 8;                       // Conv(M^r) output width
    bool use_un = true;
    bool use_ui = true;
    std::uint64_t init_seed = 1;

    int reliable_feature_channels() const {
        return mr_channels + enc_widths[0] + dec_widths[1];
    }
    void validate() const {
        if (num_classes < 2) throw config_error("model: K must be >= 2");
        if (num_seg_classes < 2) throw config_error("model: Q must be >= 2");
        for (int w : enc_widths)
            if (w <= 0) throw config_error("model: encoder widths must be positive");
    }
};

// Everything the forward pass exposes, as plain tensors.
template <typename T>
struct ModelOutput {
    DirichletParams<T> cls_alpha;
    Opinion<T> cls_opinion;
    EvidenceMap<T> seg_alpha_map;          // M
    OpinionMap<T> seg_opinion;
    Tensor<T> seg_uncertainty;             // U^s, (1, H, W)
    std::array<Tensor<T>, 4> decoder_outputs;  // s_1..s_4 logits, fine to coarse
    LabelMap final_seg;                    // argmax of s_1
    Tensor<T> reliable_seg_feature;        // r^s
    Tensor<T> reliable_cls_feature;        // r^c
    Tensor<T> cls_stage4_feature;          // f^c_4 after the mutual combine
};

// The UML network: dual four-stage encoders, feature mixer, segmentation
// evidence head, uncertainty navigator decoder, uncertainty instructor and
// the evidential classification head. All convolutions are stride 1; spatial
// reduction is 2x2 max pooling between stages.
template <typename T>
class UMLNet {
public:
    using Ref = typename Graph<T>::Ref;

    struct PyramidRefs {
        std::array<Ref, 4> stage;
    };
    struct MixRefs {
        PyramidRefs mutual;
        Ref cls4;  // f^c_4 after combining with proj(f^m_4)
        Ref seg4;  // f^s_4 after combining with proj(f^m_4)
    };
    struct EvidenceRefs {
        Ref logits;    // (Q, H, W)
        Ref evidence;  // softplus(logits)
        Ref alpha;     // evidence + 1 = M
        Ref uncertainty;  // (1, H, W) = Q / strength
    };
    struct DecodeRefs {
        std::array<Ref, 4> s;  // s[0] = s_1 full resolution ... s[3] = s_4
        Ref reliable_mask;     // M^r
        Ref reliable_feature;  // r^s
    };
    struct ForwardRefs {
        PyramidRefs cls_pyr, seg_pyr;
        MixRefs mix;
        EvidenceRefs ev;
        DecodeRefs dec;
        Ref cls_feature;   // r^c
        Ref cls_logits;
        Ref cls_evidence;
        Ref cls_alpha;
    };

    explicit UMLNet(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        SplitMix64 rng(derive_seed(cfg.init_seed, 0x77));
        const auto& ew = cfg_.enc_widths;
        const int Q = cfg_.num_seg_classes;

        int in = 1;
        for (int i = 0; i < 4; ++i) {
            cls_enc_[i] = Conv2D<T>("cls_enc." + std::to_string(i + 1) + ".conv", in, ew[i], 3, rng);
            in = ew[i];
        }
        in = 1;
        for (int i = 0; i < 4; ++i) {
            seg_enc_[i] = Conv2D<T>("seg_enc." + std::to_string(i + 1) + ".conv", in, ew[i], 3, rng);
            seg_proj_[i] = Conv2D<T>("seg_enc." + std::to_string(i + 1) + ".proj", in, ew[i], 1, rng);
            in = ew[i];
        }
        for (int i = 0; i < 4; ++i)
            mix_[i] = Conv2D<T>("mixer." + std::to_string(i + 1), 2 * ew[i], ew[i], 1, rng);
        comb_cls_ = Conv2D<T>("mixer.comb_cls", ew[3], ew[3], 1, rng);
        comb_seg_ = Conv2D<T>("mixer.comb_seg", ew[3], ew[3], 1, rng);

        const auto& vw = cfg_.ev_widths;
        const int ev_in[3] = {ew[3], vw[0], vw[1]};
        const int ev_skip_in[3] = {ew[2], ew[1], ew[0]};
        for (int i = 0; i < 3; ++i) {
            ev_up_[i] = Conv2D<T>("evidence.up" + std::to_string(i + 1), ev_in[i], vw[i], 3, rng);
            ev_skip_[i] =
                Conv2D<T>("evidence.skip" + std::to_string(i + 1), ev_skip_in[i], vw[i], 1, rng);
        }
        ev_out_ = Conv2D<T>("evidence.out", vw[2], Q, 1, rng);

        const auto& dw = cfg_.dec_widths;
        const int red_in[3] = {ew[3] + ew[2], dw[0] + ew[1], dw[1] + ew[0]};
        for (int i = 0; i < 3; ++i) {
            dec_red_[i] = Conv2D<T>("decoder.red" + std::to_string(3 - i), red_in[i], dw[i], 1, rng);
            dec_conv_[i] = Conv2D<T>("decoder.conv" + std::to_string(3 - i), dw[i], dw[i], 3, rng);
        }
        head_[3] = Conv2D<T>("decoder.head4", ew[3], Q, 1, rng);
        head_[2] = Conv2D<T>("decoder.head3", dw[0], Q, 1, rng);
        head_[1] = Conv2D<T>("decoder.head2", dw[1], Q, 1, rng);
        head_[0] = Conv2D<T>("decoder.head1", dw[2], Q, 1, rng);
        mr_conv_ = Conv2D<T>("decoder.mr_conv", Q, cfg_.mr_channels, 3, rng);

        ui_gate_ = Conv2D<T>("ui.gate", cfg_.reliable_feature_channels(), ew[3], 1, rng);
        fc_ = Linear<T>("cls.fc", ew[3], cfg_.num_classes, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // Dual backbone: two independent 4-stage pyramids at strides 1,2,4,8.
    std::pair<PyramidRefs, PyramidRefs> encode(Graph<T>& g, Ref image) {
        const Tensor<T>& img = g.value(image);
        if (img.c != 1) throw config_error("encode: expected a single-channel image");
        if (img.h % 8 || img.w % 8)
            throw config_error("encode: spatial size must be divisible by 8");
        PyramidRefs cls, seg;
        Ref x = image;
        for (int i = 0; i < 4; ++i) {
            if (i > 0) x = g.maxpool2(x);
            x = g.relu(g.conv(x, cls_enc_[i]));
            cls.stage[i] = x;
        }
        x = image;
        for (int i = 0; i < 4; ++i) {
            if (i > 0) x = g.maxpool2(x);
            x = g.relu(g.add(g.conv(x, seg_enc_[i]), g.conv(x, seg_proj_[i])));
            seg.stage[i] = x;
        }
        return {cls, seg};
    }

    // Pairwise channel map interaction: each branch is gated by the other
    // branch's channel attention, the pair is concatenated and reduced 1x1.
    // The last mutual stage is folded back into both stage-4 features.
    MixRefs mix_features(Graph<T>& g, const PyramidRefs& cls, const PyramidRefs& seg) {
        MixRefs out;
        for (int i = 0; i < 4; ++i) {
            Ref att_seg = g.sigmoid_op(g.gap(seg.stage[i]));
            Ref att_cls = g.sigmoid_op(g.gap(cls.stage[i]));
            Ref gated_cls = g.scale_channels(cls.stage[i], att_seg);
            Ref gated_seg = g.scale_channels(seg.stage[i], att_cls);
            out.mutual.stage[i] = g.conv(g.concat({gated_cls, gated_seg}), mix_[i]);
        }
        out.cls4 = g.add(cls.stage[3], g.conv(out.mutual.stage[3], comb_cls_));
        out.seg4 = g.add(seg.stage[3], g.conv(out.mutual.stage[3], comb_seg_));
        return out;
    }

    // Decodes the mutual pyramid into per-pixel evidence: three upsample+conv
    // stages from stage 4 back to full resolution, finer mutual stages joined
    // through 1x1 projections.
    EvidenceRefs evidence_head(Graph<T>& g, const PyramidRefs& mutual) {
        Ref x = mutual.stage[3];
        for (int i = 0; i < 3; ++i) {
            Ref up = g.conv(g.upsample2(x), ev_up_[i]);
            Ref skip = g.conv(mutual.stage[2 - i], ev_skip_[i]);
            x = g.relu(g.add(up, skip));
        }
        EvidenceRefs ev;
        ev.logits = g.conv(x, ev_out_);
        ev.evidence = g.softplus_op(ev.logits);
        ev.alpha = g.add_const(ev.evidence, T(1));
        ev.uncertainty =
            g.recip_scale(g.channel_sum(ev.alpha), static_cast<T>(cfg_.num_seg_classes));
        return ev;
    }

    // M^r = (s_1 + M) * exp(-U^s)
    Ref reliable_mask(Graph<T>& g, Ref s1, Ref alpha_map, Ref uncertainty) {
        return g.scale_map(g.add(s1, alpha_map), g.exp_neg(uncertainty));
    }

    // UNet-style decoder over the segmentation pyramid. Uncertainty enters at
    // the bottom (stage-4 features scaled by exp(-d^3(U^s))) and at the top
    // (the reliable mask). With use_un off the same path runs with U^s := 0
    // and M := 1, which makes both gates the identity.
    DecodeRefs un_decode(Graph<T>& g, const PyramidRefs& seg, Ref seg4, Ref alpha_map,
                         Ref uncertainty) {
        const Tensor<T>& u = g.value(uncertainty);
        Ref u_in = uncertainty, m_in = alpha_map;
        if (!cfg_.use_un) {
            u_in = g.input(Tensor<T>(1, u.h, u.w, T(0)));
            m_in = g.input(Tensor<T>(cfg_.num_seg_classes, u.h, u.w, T(1)));
        }
        DecodeRefs out;
        Ref bottom_gate = g.exp_neg(g.avgpool2(g.avgpool2(g.avgpool2(u_in))));
        Ref d4 = g.scale_map(seg4, bottom_gate);
        out.s[3] = g.conv(d4, head_[3]);
        Ref x = d4;
        std::array<Ref, 3> dec;
        for (int i = 0; i < 3; ++i) {
            Ref cat = g.concat({g.upsample2(x), seg.stage[2 - i]});
            x = g.relu(g.conv(g.relu(g.conv(cat, dec_red_[i])), dec_conv_[i]));
            dec[i] = x;
            out.s[2 - i] = g.conv(x, head_[2 - i]);
        }
        out.reliable_mask = reliable_mask(g, out.s[0], m_in, u_in);
        Ref up_d2 = g.upsample2(dec[1]);  // stage-2 decoder feature, one 2x upsample
        out.reliable_feature =
            g.concat({g.conv(out.reliable_mask, mr_conv_), seg.stage[0], up_d2});
        return out;
    }

    // r^c = f^c_4 + sigmoid(Conv(d^3(r^s))) * f^c_4
    Ref ui_fuse(Graph<T>& g, Ref cls4, Ref reliable_feature) {
        const Tensor<T>& rs = g.value(reliable_feature);
        const Tensor<T>& c4 = g.value(cls4);
        if (rs.h != c4.h * 8 || rs.w != c4.w * 8)
            throw config_error("ui_fuse: r^s must be at 8x the stage-4 stride");
        Ref pooled = g.avgpool2(g.avgpool2(g.avgpool2(reliable_feature)));
        Ref gate = g.sigmoid_op(g.conv(pooled, ui_gate_));
        return g.add(cls4, g.mul(gate, cls4));
    }

    std::pair<Ref, Ref> classify(Graph<T>& g, Ref feature) {
        Ref logits = g.linear(g.gap(feature), fc_);
        Ref evidence = g.softplus_op(logits);
        return {logits, evidence};
    }

    ForwardRefs forward(Graph<T>& g, const Tensor<T>& image) {
        ForwardRefs r;
        Ref img = g.input(image);
        std::tie(r.cls_pyr, r.seg_pyr) = encode(g, img);
        r.mix = mix_features(g, r.cls_pyr, r.seg_pyr);
        r.ev = evidence_head(g, r.mix.mutual);
        r.dec = un_decode(g, r.seg_pyr, r.mix.seg4, r.ev.alpha, r.ev.uncertainty);
        r.cls_feature = cfg_.use_ui ? ui_fuse(g, r.mix.cls4, r.dec.reliable_feature)
                                    : r.mix.cls4;
        std::tie(r.cls_logits, r.cls_evidence) = classify(g, r.cls_feature);
        r.cls_alpha = g.add_const(r.cls_evidence, T(1));
        return r;
    }

    ModelOutput<T> read_output(Graph<T>& g, const ForwardRefs& r) const {
        ModelOutput<T> out;
        const Tensor<T>& ev = g.value(r.cls_evidence);
        std::vector<T> evidence(ev.v.begin(), ev.v.end());
        std::tie(out.cls_alpha, out.cls_opinion) =
            classification_opinion(evidence, cfg_.num_classes);
        std::tie(out.seg_alpha_map, out.seg_opinion) =
            segmentation_opinion(g.value(r.ev.evidence), cfg_.num_seg_classes);
        out.seg_uncertainty = g.value(r.ev.uncertainty);
        for (int i = 0; i < 4; ++i) out.decoder_outputs[i] = g.value(r.dec.s[i]);
        out.final_seg = argmax_map(g.value(r.dec.s[0]));
        out.reliable_seg_feature = g.value(r.dec.reliable_feature);
        out.reliable_cls_feature = g.value(r.cls_feature);
        out.cls_stage4_feature = g.value(r.mix.cls4);
        return out;
    }

    static LabelMap argmax_map(const Tensor<T>& logits) {
        LabelMap m(logits.h, logits.w);
        const int hw = logits.plane();
        for (int i = 0; i < hw; ++i) {
            int best = 0;
            T bv = logits.channel(0)[i];
            for (int q = 1; q < logits.c; ++q) {
                const T v = logits.channel(q)[i];
                if (v > bv) {
                    bv = v;
                    best = q;
                }
            }
            m.v[i] = best;
        }
        return m;
    }

    template <typename Fn>
    void visit_params(Fn&& fn) {
        auto conv = [&](Conv2D<T>& c) {
            fn(c.name + ".w", c.w, c.gw);
            fn(c.name + ".b", c.b, c.gb);
        };
        for (auto& c : cls_enc_) conv(c);
        for (int i = 0; i < 4; ++i) {
            conv(seg_enc_[i]);
            conv(seg_proj_[i]);
        }
        for (auto& c : mix_) conv(c);
        conv(comb_cls_);
        conv(comb_seg_);
        for (auto& c : ev_up_) conv(c);
        for (auto& c : ev_skip_) conv(c);
        conv(ev_out_);
        for (auto& c : dec_red_) conv(c);
        for (auto& c : dec_conv_) conv(c);
        for (auto& c : head_) conv(c);
        conv(mr_conv_);
        conv(ui_gate_);
        fn(fc_.name + ".w", fc_.w, fc_.gw);
        fn(fc_.name + ".b", fc_.b, fc_.gb);
    }

    void zero_grads() {
        visit_params([](const std::string&, Tensor<T>&, Tensor<T>& g) { g.fill(T(0)); });
    }

    std::size_t param_count() {
        std::size_t n = 0;
        visit_params([&n](const std::string&, Tensor<T>& w, Tensor<T>&) { n += w.size(); });
        return n;
    }

    // Direct access for targeted tests.
    Conv2D<T>& mixer_conv(int stage) { return mix_[stage]; }
    Conv2D<T>& combine_cls_proj() { return comb_cls_; }
    Conv2D<T>& combine_seg_proj() { return comb_seg_; }
    Conv2D<T>& ui_gate_conv() { return ui_gate_; }
    Linear<T>& classifier_fc() { return fc_; }

private:
    ModelConfig cfg_;
    std::array<Conv2D<T>, 4> cls_enc_;
    std::array<Conv2D<T>, 4> seg_enc_, seg_proj_;
    std::array<Conv2D<T>, 4> mix_;
    Conv2D<T> comb_cls_, comb_seg_;
    std::array<Conv2D<T>, 3> ev_up_, ev_skip_;
    Conv2D<T> ev_out_;
    std::array<Conv2D<T>, 3> dec_red_, dec_conv_;
    std::array<Conv2D<T>, 4> head_;
    Conv2D<T> mr_conv_;
    Conv2D<T> ui_gate_;
    Linear<T> fc_;
};

}  // namespace uml
