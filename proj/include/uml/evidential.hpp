#pragma once

#include <cmath>
#include <vector>

#include "uml/errors.hpp"
#include "uml/special.hpp"
#include "uml/tensor.hpp"

namespace uml {

// Subjective-logic core: evidence -> Dirichlet -> (belief, uncertainty).
// Image-level decisions use K classes, pixel-wise decisions Q classes; the
// math is identical, so the pixel path is the per-pixel application of the
// vector path.

template <typename T>
struct DirichletParams {
    std::vector<T> alpha;  // every entry >= 1
    T strength = T(0);     // sum of alpha
};

template <typename T>
struct Opinion {
    std::vector<T> beliefs;  // b_k = e_k / strength
    T uncertainty = T(0);    // K / strength; beliefs + uncertainty sum to one
};

// Per-pixel Dirichlet parameters: alpha is (Q, H, W), strength its channel sum.
template <typename T>
struct EvidenceMap {
    Tensor<T> alpha;
    Tensor<T> strength;  // (1, H, W)
};

template <typename T>
struct OpinionMap {
    Tensor<T> beliefs;     // (Q, H, W)
    Tensor<T> uncertainty; // (1, H, W)
};

// Elementwise softplus over raw network outputs; rejects non-finite inputs.
template <typename T>
Tensor<T> softplus_evidence(const Tensor<T>& logits) {
    Tensor<T> e(logits.c, logits.h, logits.w);
    for (std::size_t i = 0; i < logits.size(); ++i) e[i] = softplus(logits[i]);
    return e;
}

template <typename T>
std::vector<T> softplus_evidence(const std::vector<T>& logits) {
    std::vector<T> e(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) e[i] = softplus(logits[i]);
    return e;
}

// alpha_k = e_k + 1, T = sum(alpha), b_k = e_k / T, U = K / T.
template <typename T>
std::pair<DirichletParams<T>, Opinion<T>> classification_opinion(const std::vector<T>& evidence,
                                                                 int num_classes) {
    if (num_classes < 2) throw config_error("classification_opinion: K must be >= 2");
    if (static_cast<int>(evidence.size()) != num_classes)
        throw config_error("classification_opinion: evidence length != K");
    DirichletParams<T> d;
    d.alpha.resize(evidence.size());
    T strength = T(0);
    for (std::size_t k = 0; k < evidence.size(); ++k) {
        if (!(evidence[k] >= T(0)))
            throw invalid_input("classification_opinion: negative or non-finite evidence");
        d.alpha[k] = evidence[k] + T(1);
        strength += d.alpha[k];
    }
    d.strength = strength;
    Opinion<T> o;
    o.beliefs.resize(evidence.size());
    for (std::size_t k = 0; k < evidence.size(); ++k) o.beliefs[k] = evidence[k] / strength;
    o.uncertainty = static_cast<T>(num_classes) / strength;
    return {d, o};
}

// Pixel-wise version over a (Q, H, W) evidence tensor.
template <typename T>
std::pair<EvidenceMap<T>, OpinionMap<T>> segmentation_opinion(const Tensor<T>& evidence,
                                                              int num_classes) {
    if (num_classes < 2) throw config_error("segmentation_opinion: Q must be >= 2");
    if (evidence.c != num_classes)
        throw config_error("segmentation_opinion: channel count != Q");
    const int hw = evidence.plane();
    EvidenceMap<T> em;
    em.alpha = Tensor<T>(evidence.c, evidence.h, evidence.w);
    em.strength = Tensor<T>(1, evidence.h, evidence.w);
    OpinionMap<T> om;
    om.beliefs = Tensor<T>(evidence.c, evidence.h, evidence.w);
    om.uncertainty = Tensor<T>(1, evidence.h, evidence.w);

    for (int q = 0; q < evidence.c; ++q) {
        const T* e = evidence.channel(q);
        T* a = em.alpha.channel(q);
        T* s = em.strength.data();
        for (int i = 0; i < hw; ++i) {
            if (!(e[i] >= T(0)))
                throw invalid_input("segmentation_opinion: negative or non-finite evidence");
            a[i] = e[i] + T(1);
            s[i] += a[i];
        }
    }
    for (int q = 0; q < evidence.c; ++q) {
        const T* e = evidence.channel(q);
        const T* s = em.strength.data();
        T* b = om.beliefs.channel(q);
        for (int i = 0; i < hw; ++i) b[i] = e[i] / s[i];
    }
    {
        const T* s = em.strength.data();
        T* u = om.uncertainty.data();
        for (int i = 0; i < hw; ++i) u[i] = static_cast<T>(num_classes) / s[i];
    }
    return {em, om};
}

// Dirichlet mean p_k = alpha_k / strength.
template <typename T>
std::vector<T> expected_probability(const DirichletParams<T>& d) {
    std::vector<T> p(d.alpha.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = d.alpha[k] / d.strength;
    return p;
}

template <typename T>
Tensor<T> expected_probability(const EvidenceMap<T>& em) {
    Tensor<T> p(em.alpha.c, em.alpha.h, em.alpha.w);
    const int hw = em.alpha.plane();
    for (int q = 0; q < em.alpha.c; ++q) {
        const T* a = em.alpha.channel(q);
        const T* s = em.strength.data();
        T* pq = p.channel(q);
        for (int i = 0; i < hw; ++i) pq[i] = a[i] / s[i];
    }
    return p;
}

}  // namespace uml
