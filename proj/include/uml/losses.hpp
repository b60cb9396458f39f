#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "uml/errors.hpp"
#include "uml/evidential.hpp"
#include "uml/special.hpp"
#include "uml/tensor.hpp"

namespace uml {

// Weights of the total objective plus the coefficients of the KL / Dice terms.
// Defaults follow the paper's setting (0.1, 0.5, 0.4); the lambdas are filled
// in per epoch from the anneal schedule.
template <typename T>
struct LossWeights {
    T w_m = T(0.1);
    T w_c = T(0.5);
    T w_s = T(0.4);
    T lambda_m1 = T(0);
    T lambda_m2 = T(1);
    T lambda_c = T(0);
};

struct AnnealSchedule {
    double max_value = 1.0;
    int ramp_epochs = 10;
};

// max_value * min(1, epoch / ramp_epochs); linear warm-up from zero.
inline double anneal(int epoch, const AnnealSchedule& s) {
    if (s.ramp_epochs <= 0) throw config_error("anneal: ramp_epochs must be positive");
    if (epoch < 0) throw invalid_input("anneal: negative epoch");
    const double t = static_cast<double>(epoch) / static_cast<double>(s.ramp_epochs);
    return s.max_value * std::min(1.0, t);
}

namespace detail {

template <typename T>
void require_one_hot(const std::vector<T>& y) {
    int ones = 0;
    for (const T& v : y) {
        if (v == T(0)) continue;
        if (v == T(1)) { ++ones; continue; }
        throw invalid_input("expected a one-hot vector");
    }
    if (ones != 1) throw invalid_input("expected exactly one hot entry");
}

}  // namespace detail

// Evidence masking for the KL term: the true-class entry becomes 1, the rest
// keep their alpha. Removes the correct-class evidence from the penalty.
template <typename T>
DirichletParams<T> adjusted_alpha(const DirichletParams<T>& d, const std::vector<T>& y) {
    if (y.size() != d.alpha.size()) throw invalid_input("adjusted_alpha: length mismatch");
    detail::require_one_hot(y);
    DirichletParams<T> out;
    out.alpha.resize(d.alpha.size());
    T s = T(0);
    for (std::size_t k = 0; k < y.size(); ++k) {
        out.alpha[k] = y[k] == T(1) ? T(1) : d.alpha[k];
        s += out.alpha[k];
    }
    out.strength = s;
    return out;
}

// KL( Dir(alpha) || Dir(1,...,1) ), closed form via log-gamma and digamma.
template <typename T>
T kl_dirichlet_uniform(const DirichletParams<T>& d) {
    const int K = static_cast<int>(d.alpha.size());
    double S = 0.0;
    for (const T& a : d.alpha) {
        if (!(static_cast<double>(a) >= 1.0))
            throw invalid_input("kl_dirichlet_uniform: alpha entries must be >= 1");
        S += static_cast<double>(a);
    }
    const double psi_S = digamma(S);
    double acc = std::lgamma(S) - std::lgamma(static_cast<double>(K));
    for (const T& a : d.alpha) {
        const double ad = static_cast<double>(a);
        acc -= std::lgamma(ad);
        acc += (ad - 1.0) * (digamma(ad) - psi_S);
    }
    return static_cast<T>(acc);
}

// d KL / d alpha_j = (alpha_j - 1) psi1(alpha_j) - (S - K) psi1(S)
template <typename T>
T kl_dirichlet_uniform_grad(const DirichletParams<T>& d, std::vector<T>* grad) {
    const int K = static_cast<int>(d.alpha.size());
    double S = 0.0;
    for (const T& a : d.alpha) S += static_cast<double>(a);
    const double tail = (S - K) * trigamma(S);
    grad->resize(d.alpha.size());
    for (std::size_t j = 0; j < d.alpha.size(); ++j) {
        const double ad = static_cast<double>(d.alpha[j]);
        (*grad)[j] = static_cast<T>((ad - 1.0) * trigamma(ad) - tail);
    }
    return kl_dirichlet_uniform(d);
}

// Expected cross-entropy under Dir(alpha): sum_k y_k (psi(S) - psi(alpha_k)).
template <typename T>
T evidential_ce(const DirichletParams<T>& d, const std::vector<T>& y) {
    if (y.size() != d.alpha.size()) throw invalid_input("evidential_ce: length mismatch");
    detail::require_one_hot(y);
    const double psi_S = digamma(static_cast<double>(d.strength));
    double acc = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k)
        if (y[k] == T(1)) acc += psi_S - digamma(static_cast<double>(d.alpha[k]));
    return static_cast<T>(acc);
}

// d CE / d alpha_j = psi1(S) - y_j psi1(alpha_j)
template <typename T>
T evidential_ce_grad(const DirichletParams<T>& d, const std::vector<T>& y,
                     std::vector<T>* grad) {
    const double psi1_S = trigamma(static_cast<double>(d.strength));
    grad->resize(d.alpha.size());
    for (std::size_t j = 0; j < d.alpha.size(); ++j) {
        double g = psi1_S;
        if (y[j] == T(1)) g -= trigamma(static_cast<double>(d.alpha[j]));
        (*grad)[j] = static_cast<T>(g);
    }
    return evidential_ce(d, y);
}

// Soft Dice over probability channels vs a label map, squared-sum denominator,
// smoothing 1 in numerator and denominator, averaged over all Q classes.
// Returns 1 - mean dice. grad (optional) receives d loss / d probs.
template <typename T>
T soft_dice_loss(const Tensor<T>& probs, const LabelMap& y, Tensor<T>* grad = nullptr) {
    if (probs.h != y.h || probs.w != y.w) throw invalid_input("soft_dice_loss: shape mismatch");
    const int Q = probs.c;
    const int hw = probs.plane();
    if (grad) {
        *grad = Tensor<T>(probs.c, probs.h, probs.w);
    }
    double mean_dice = 0.0;
    for (int q = 0; q < Q; ++q) {
        const T* p = probs.channel(q);
        double inter = 0.0, psq = 0.0, gsq = 0.0;
        for (int i = 0; i < hw; ++i) {
            const double pv = static_cast<double>(p[i]);
            const double gv = (y.v[i] == q) ? 1.0 : 0.0;
            inter += pv * gv;
            psq += pv * pv;
            gsq += gv;  // g^2 == g for one-hot
        }
        const double num = 2.0 * inter + 1.0;
        const double den = psq + gsq + 1.0;
        mean_dice += num / den;
        if (grad) {
            T* gq = grad->channel(q);
            const double scale = -1.0 / Q;
            for (int i = 0; i < hw; ++i) {
                const double pv = static_cast<double>(p[i]);
                const double gv = (y.v[i] == q) ? 1.0 : 0.0;
                gq[i] = static_cast<T>(scale * (2.0 * gv * den - num * 2.0 * pv) / (den * den));
            }
        }
    }
    return static_cast<T>(1.0 - mean_dice / Q);
}

// Dice between the Dirichlet means alpha/T and the ground-truth mask.
// grad (optional) receives d loss / d alpha.
template <typename T>
T evidential_dice(const EvidenceMap<T>& em, const LabelMap& y, Tensor<T>* grad = nullptr) {
    if (em.alpha.h != y.h || em.alpha.w != y.w)
        throw invalid_input("evidential_dice: shape mismatch");
    const Tensor<T> probs = expected_probability(em);
    Tensor<T> gp;
    const T loss = soft_dice_loss(probs, y, grad ? &gp : nullptr);
    if (grad) {
        // p_b = alpha_b / T  =>  dp_b/dalpha_a = (delta_ab * T - alpha_b) / T^2
        const int Q = em.alpha.c;
        const int hw = em.alpha.plane();
        *grad = Tensor<T>(Q, em.alpha.h, em.alpha.w);
        for (int i = 0; i < hw; ++i) {
            const double Tt = static_cast<double>(em.strength[i]);
            double dot = 0.0;  // sum_b dL/dp_b * alpha_b
            for (int b = 0; b < Q; ++b)
                dot += static_cast<double>(gp.channel(b)[i]) *
                       static_cast<double>(em.alpha.channel(b)[i]);
            for (int a = 0; a < Q; ++a) {
                const double g = (static_cast<double>(gp.channel(a)[i]) * Tt - dot) / (Tt * Tt);
                grad->channel(a)[i] = static_cast<T>(g);
            }
        }
    }
    return loss;
}

// Mutual loss over the evidence map: mean per-pixel CE
// + lambda1 * mean per-pixel KL(adjusted alpha) + lambda2 * evidential Dice.
template <typename T>
T mutual_loss(const EvidenceMap<T>& em, const LabelMap& y, T lambda1, T lambda2,
              Tensor<T>* grad = nullptr) {
    if (lambda1 < T(0) || lambda2 < T(0))
        throw config_error("mutual_loss: negative lambda");
    if (em.alpha.h != y.h || em.alpha.w != y.w)
        throw invalid_input("mutual_loss: shape mismatch");
    const int Q = em.alpha.c;
    const int hw = em.alpha.plane();
    const double inv_n = 1.0 / hw;

    if (grad) *grad = Tensor<T>(Q, em.alpha.h, em.alpha.w);

    double ce_acc = 0.0, kl_acc = 0.0;
    for (int i = 0; i < hw; ++i) {
        const int yq = y.v[i];
        if (yq < 0 || yq >= Q) throw invalid_input("mutual_loss: label out of range");
        double S = 0.0, S_adj = 0.0;
        for (int q = 0; q < Q; ++q) {
            const double a = static_cast<double>(em.alpha.channel(q)[i]);
            S += a;
            S_adj += (q == yq) ? 1.0 : a;
        }
        // per-pixel expected cross-entropy
        const double a_true = static_cast<double>(em.alpha.channel(yq)[i]);
        ce_acc += digamma(S) - digamma(a_true);

        // per-pixel KL of the adjusted alpha
        const double psi_Sa = digamma(S_adj);
        double kl = std::lgamma(S_adj) - std::lgamma(static_cast<double>(Q));
        for (int q = 0; q < Q; ++q) {
            const double a = (q == yq) ? 1.0 : static_cast<double>(em.alpha.channel(q)[i]);
            kl -= std::lgamma(a);
            kl += (a - 1.0) * (digamma(a) - psi_Sa);
        }
        kl_acc += kl;

        if (grad) {
            const double psi1_S = trigamma(S);
            const double psi1_Sa = trigamma(S_adj);
            const double kl_tail = (S_adj - Q) * psi1_Sa;
            for (int q = 0; q < Q; ++q) {
                const double a = static_cast<double>(em.alpha.channel(q)[i]);
                double g = psi1_S;  // CE term
                if (q == yq)
                    g -= trigamma(a);
                else
                    g += static_cast<double>(lambda1) * ((a - 1.0) * trigamma(a) - kl_tail);
                grad->channel(q)[i] += static_cast<T>(g * inv_n);
            }
        }
    }

    Tensor<T> dice_grad;
    const T dice = evidential_dice(em, y, grad ? &dice_grad : nullptr);
    if (grad && lambda2 != T(0)) {
        for (std::size_t i = 0; i < grad->size(); ++i)
            (*grad)[i] += lambda2 * dice_grad[i];
    }
    return static_cast<T>(ce_acc * inv_n + static_cast<double>(lambda1) * kl_acc * inv_n +
                          static_cast<double>(lambda2) * static_cast<double>(dice));
}

// Classification loss: evidential CE + lambda_c * KL(adjusted alpha).
template <typename T>
T classification_loss(const DirichletParams<T>& d, const std::vector<T>& y, T lambda_c,
                      std::vector<T>* grad = nullptr) {
    if (lambda_c < T(0)) throw config_error("classification_loss: negative lambda");
    std::vector<T> g_ce, g_kl;
    const T ce = grad ? evidential_ce_grad(d, y, &g_ce) : evidential_ce(d, y);
    const DirichletParams<T> adj = adjusted_alpha(d, y);
    const T kl = grad ? kl_dirichlet_uniform_grad(adj, &g_kl) : kl_dirichlet_uniform(adj);
    if (grad) {
        grad->resize(d.alpha.size());
        for (std::size_t k = 0; k < d.alpha.size(); ++k) {
            // d adj_k / d alpha_k = 0 for the true class, 1 otherwise
            const T mask = (y[k] == T(1)) ? T(0) : T(1);
            (*grad)[k] = g_ce[k] + lambda_c * mask * g_kl[k];
        }
    }
    return ce + lambda_c * kl;
}

// Nearest-neighbor upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nn(const Tensor<T>& x, int factor) {
    if (factor == 1) return x;
    Tensor<T> y(x.c, x.h * factor, x.w * factor);
    for (int ci = 0; ci < x.c; ++ci) {
        const T* src = x.channel(ci);
        T* dst = y.channel(ci);
        for (int iy = 0; iy < y.h; ++iy) {
            const T* row = src + (iy / factor) * x.w;
            T* out = dst + iy * y.w;
            for (int ix = 0; ix < y.w; ++ix) out[ix] = row[ix / factor];
        }
    }
    return y;
}

// Adjoint of upsample_nn: sums gradient over each factor x factor block.
template <typename T>
Tensor<T> upsample_nn_adjoint(const Tensor<T>& gy, int factor, int h, int w) {
    if (factor == 1) return gy;
    Tensor<T> gx(gy.c, h, w);
    for (int ci = 0; ci < gy.c; ++ci) {
        const T* src = gy.channel(ci);
        T* dst = gx.channel(ci);
        for (int iy = 0; iy < gy.h; ++iy) {
            const T* row = src + iy * gy.w;
            T* out = dst + (iy / factor) * w;
            for (int ix = 0; ix < gy.w; ++ix) out[ix / factor] += row[ix];
        }
    }
    return gx;
}

// Pixel-wise softmax over channels (max-shifted).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    Tensor<T> y(x.c, x.h, x.w);
    const int hw = x.plane();
    for (int i = 0; i < hw; ++i) {
        T m = x.channel(0)[i];
        for (int q = 1; q < x.c; ++q) m = std::max(m, x.channel(q)[i]);
        T z = T(0);
        for (int q = 0; q < x.c; ++q) {
            const T e = std::exp(x.channel(q)[i] - m);
            y.channel(q)[i] = e;
            z += e;
        }
        for (int q = 0; q < x.c; ++q) y.channel(q)[i] /= z;
    }
    return y;
}

// Deep supervision: mean over scales of Dice( upsample^(i) (softmax s_i), y ).
// s[i] has spatial size (H / 2^i, W / 2^i); softmax and nearest-neighbor
// upsampling commute, so the order is immaterial. grads (optional) receives
// d loss / d s_i for every scale.
template <typename T>
T deep_supervision_loss(const std::vector<Tensor<T>>& s, const LabelMap& y,
                        std::vector<Tensor<T>>* grads = nullptr) {
    if (s.size() != 4) throw config_error("deep_supervision_loss: expected 4 scales");
    if (grads) grads->assign(4, Tensor<T>());
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
        const int factor = 1 << i;
        if (s[i].h * factor != y.h || s[i].w * factor != y.w)
            throw config_error("deep_supervision_loss: scale size mismatch");
        const Tensor<T> p = softmax_channels(s[i]);
        const Tensor<T> up = upsample_nn(p, factor);
        Tensor<T> g_up;
        const T dice = soft_dice_loss(up, y, grads ? &g_up : nullptr);
        acc += static_cast<double>(dice);
        if (grads) {
            const Tensor<T> gp = upsample_nn_adjoint(g_up, factor, s[i].h, s[i].w);
            // softmax backward: ds = p * (gp - sum_q gp_q p_q), per pixel, /4 for the mean
            Tensor<T>& gs = (*grads)[i];
            gs = Tensor<T>(s[i].c, s[i].h, s[i].w);
            const int hw = s[i].plane();
            for (int px = 0; px < hw; ++px) {
                T dot = T(0);
                for (int q = 0; q < s[i].c; ++q) dot += gp.channel(q)[px] * p.channel(q)[px];
                for (int q = 0; q < s[i].c; ++q)
                    gs.channel(q)[px] =
                        p.channel(q)[px] * (gp.channel(q)[px] - dot) / T(4);
            }
        }
    }
    return static_cast<T>(acc / 4.0);
}

// w_m * L_m + w_c * L_c + w_s * L_s
template <typename T>
T total_loss(T mutual, T cls, T seg, const LossWeights<T>& w) {
    return w.w_m * mutual + w.w_c * cls + w.w_s * seg;
}

}  // namespace uml
