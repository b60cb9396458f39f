#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "uml/errors.hpp"
#include "uml/layers.hpp"
#include "uml/losses.hpp"
#include "uml/tensor.hpp"

namespace uml {

// Reverse-mode tape over whole-tensor operations. A graph is built per sample,
// backward() replays the tape once, and parameter gradients accumulate into
// the layers' gw/gb buffers so batches are plain repetition.
template <typename T>
class Graph {
public:
    using Ref = int;

    Ref input(Tensor<T> v) {
        nodes_.push_back(Node{std::move(v), Tensor<T>()});
        Node& n = nodes_.back();
        n.grad = Tensor<T>(n.val.c, n.val.h, n.val.w);
        return static_cast<Ref>(nodes_.size() - 1);
    }

    const Tensor<T>& value(Ref r) const { return nodes_[r].val; }
    Tensor<T>& grad(Ref r) { return nodes_[r].grad; }

    Ref conv(Ref x, Conv2D<T>& layer) {
        Ref y = input(layer.forward(nodes_[x].val));
        tape_.push_back([this, x, y, &layer] {
            Tensor<T> gx = layer.backward(nodes_[x].val, nodes_[y].grad);
            accum(x, gx);
        });
        return y;
    }

    Ref linear(Ref x, Linear<T>& layer) {
        Ref y = input(layer.forward(nodes_[x].val));
        tape_.push_back([this, x, y, &layer] {
            Tensor<T> gx = layer.backward(nodes_[x].val, nodes_[y].grad);
            accum(x, gx);
        });
        return y;
    }

    Ref relu(Ref x) {
        Tensor<T> v = nodes_[x].val;
        for (auto& e : v.v) e = e > T(0) ? e : T(0);
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] {
            const Tensor<T>& xv = nodes_[x].val;
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (xv[i] > T(0)) gx[i] += gy[i];
        });
        return y;
    }

    Ref sigmoid_op(Ref x) {
        Tensor<T> v = nodes_[x].val;
        for (auto& e : v.v) e = sigmoid(e);
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] {
            const Tensor<T>& yv = nodes_[y].val;
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
        });
        return y;
    }

    Ref softplus_op(Ref x) {
        Tensor<T> v = nodes_[x].val;
        for (auto& e : v.v) e = softplus(e);
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] {
            const Tensor<T>& xv = nodes_[x].val;
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * sigmoid(xv[i]);
        });
        return y;
    }

    // y = exp(-x)
    Ref exp_neg(Ref x) {
        Tensor<T> v = nodes_[x].val;
        for (auto& e : v.v) e = std::exp(-e);
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] {
            const Tensor<T>& yv = nodes_[y].val;
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gy[i] * yv[i];
        });
        return y;
    }

    Ref add(Ref a, Ref b) {
        require_same_shape(nodes_[a].val, nodes_[b].val, "graph add");
        Tensor<T> v = nodes_[a].val;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += nodes_[b].val[i];
        Ref y = input(std::move(v));
        tape_.push_back([this, a, b, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& ga = nodes_[a].grad;
            Tensor<T>& gb = nodes_[b].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                ga[i] += gy[i];
                gb[i] += gy[i];
            }
        });
        return y;
    }

    Ref mul(Ref a, Ref b) {
        require_same_shape(nodes_[a].val, nodes_[b].val, "graph mul");
        Tensor<T> v = nodes_[a].val;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= nodes_[b].val[i];
        Ref y = input(std::move(v));
        tape_.push_back([this, a, b, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            const Tensor<T>& av = nodes_[a].val;
            const Tensor<T>& bv = nodes_[b].val;
            Tensor<T>& ga = nodes_[a].grad;
            Tensor<T>& gb = nodes_[b].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                ga[i] += gy[i] * bv[i];
                gb[i] += gy[i] * av[i];
            }
        });
        return y;
    }

    Ref add_const(Ref x, T k) {
        Tensor<T> v = nodes_[x].val;
        for (auto& e : v.v) e += k;
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] { accum(x, nodes_[y].grad); });
        return y;
    }

    Ref concat(const std::vector<Ref>& xs) {
        int c = 0;
        const int h = nodes_[xs[0]].val.h, w = nodes_[xs[0]].val.w;
        for (Ref r : xs) {
            if (nodes_[r].val.h != h || nodes_[r].val.w != w)
                throw invalid_input("graph concat: spatial mismatch");
            c += nodes_[r].val.c;
        }
        Tensor<T> v(c, h, w);
        int off = 0;
        for (Ref r : xs) {
            const Tensor<T>& xv = nodes_[r].val;
            std::copy(xv.v.begin(), xv.v.end(), v.channel(off));
            off += xv.c;
        }
        Ref y = input(std::move(v));
        std::vector<Ref> refs = xs;
        tape_.push_back([this, refs, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            int off = 0;
            for (Ref r : refs) {
                Tensor<T>& gx = nodes_[r].grad;
                const T* src = gy.channel(off);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
                off += gx.c;
            }
        });
        return y;
    }

    Ref maxpool2(Ref x) {
        const Tensor<T>& xv = nodes_[x].val;
        if (xv.h % 2 || xv.w % 2) throw config_error("maxpool2: odd spatial size");
        Tensor<T> v(xv.c, xv.h / 2, xv.w / 2);
        auto arg = std::make_shared<std::vector<unsigned char>>(v.size());
        for (int ci = 0; ci < xv.c; ++ci) {
            const T* src = xv.channel(ci);
            T* dst = v.channel(ci);
            for (int y = 0; y < v.h; ++y)
                for (int xx = 0; xx < v.w; ++xx) {
                    const int base = (2 * y) * xv.w + 2 * xx;
                    const T c0 = src[base], c1 = src[base + 1];
                    const T c2 = src[base + xv.w], c3 = src[base + xv.w + 1];
                    int best = 0;
                    T m = c0;
                    if (c1 > m) { m = c1; best = 1; }
                    if (c2 > m) { m = c2; best = 2; }
                    if (c3 > m) { m = c3; best = 3; }
                    dst[y * v.w + xx] = m;
                    (*arg)[static_cast<std::size_t>(ci) * v.plane() + y * v.w + xx] =
                        static_cast<unsigned char>(best);
                }
        }
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y, arg] {
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (int ci = 0; ci < gy.c; ++ci) {
                const T* g = gy.channel(ci);
                T* out = gx.channel(ci);
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx) {
                        const int a =
                            (*arg)[static_cast<std::size_t>(ci) * gy.plane() + yy * gy.w + xx];
                        const int iy = 2 * yy + (a >> 1), ix = 2 * xx + (a & 1);
                        out[iy * gx.w + ix] += g[yy * gy.w + xx];
                    }
            }
        });
        return y;
    }

    Ref avgpool2(Ref x) {
        const Tensor<T>& xv = nodes_[x].val;
        if (xv.h % 2 || xv.w % 2) throw config_error("avgpool2: odd spatial size");
        Tensor<T> v(xv.c, xv.h / 2, xv.w / 2);
        for (int ci = 0; ci < xv.c; ++ci) {
            const T* src = xv.channel(ci);
            T* dst = v.channel(ci);
            for (int y = 0; y < v.h; ++y)
                for (int xx = 0; xx < v.w; ++xx) {
                    const int base = (2 * y) * xv.w + 2 * xx;
                    dst[y * v.w + xx] =
                        (src[base] + src[base + 1] + src[base + xv.w] + src[base + xv.w + 1]) /
                        T(4);
                }
        }
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (int ci = 0; ci < gy.c; ++ci) {
                const T* g = gy.channel(ci);
                T* out = gx.channel(ci);
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx) {
                        const T q = g[yy * gy.w + xx] / T(4);
                        const int base = (2 * yy) * gx.w + 2 * xx;
                        out[base] += q;
                        out[base + 1] += q;
                        out[base + gx.w] += q;
                        out[base + gx.w + 1] += q;
                    }
            }
        });
        return y;
    }

    Ref upsample2(Ref x) {
        Ref y = input(upsample_nn(nodes_[x].val, 2));
        tape_.push_back([this, x, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T> gx = upsample_nn_adjoint(gy, 2, nodes_[x].val.h, nodes_[x].val.w);
            accum(x, gx);
        });
        return y;
    }

    // Global average pool: (C, H, W) -> (C, 1, 1)
    Ref gap(Ref x) {
        const Tensor<T>& xv = nodes_[x].val;
        Tensor<T> v = Tensor<T>::vec(xv.c);
        const T inv = T(1) / static_cast<T>(xv.plane());
        for (int ci = 0; ci < xv.c; ++ci) {
            const T* src = xv.channel(ci);
            T acc = T(0);
            for (int i = 0; i < xv.plane(); ++i) acc += src[i];
            v[ci] = acc * inv;
        }
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y, inv] {
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (int ci = 0; ci < gx.c; ++ci) {
                const T g = gy[ci] * inv;
                T* out = gx.channel(ci);
                for (int i = 0; i < gx.plane(); ++i) out[i] += g;
            }
        });
        return y;
    }

    // y[c,h,w] = x[c,h,w] * g[c] with g a (C,1,1) vector node.
    Ref scale_channels(Ref x, Ref g) {
        const Tensor<T>& xv = nodes_[x].val;
        const Tensor<T>& gv = nodes_[g].val;
        if (gv.c != xv.c || gv.plane() != 1)
            throw invalid_input("scale_channels: gate must be (C,1,1)");
        Tensor<T> v = xv;
        for (int ci = 0; ci < xv.c; ++ci) {
            T* p = v.channel(ci);
            const T s = gv[ci];
            for (int i = 0; i < xv.plane(); ++i) p[i] *= s;
        }
        Ref y = input(std::move(v));
        tape_.push_back([this, x, g, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            const Tensor<T>& xv = nodes_[x].val;
            const Tensor<T>& gv = nodes_[g].val;
            Tensor<T>& gx = nodes_[x].grad;
            Tensor<T>& gg = nodes_[g].grad;
            for (int ci = 0; ci < xv.c; ++ci) {
                const T s = gv[ci];
                const T* gyp = gy.channel(ci);
                const T* xp = xv.channel(ci);
                T* gxp = gx.channel(ci);
                T acc = T(0);
                for (int i = 0; i < xv.plane(); ++i) {
                    gxp[i] += gyp[i] * s;
                    acc += gyp[i] * xp[i];
                }
                gg[ci] += acc;
            }
        });
        return y;
    }

    // y[c,h,w] = x[c,h,w] * u[0,h,w] with u a (1,H,W) map node.
    Ref scale_map(Ref x, Ref u) {
        const Tensor<T>& xv = nodes_[x].val;
        const Tensor<T>& uv = nodes_[u].val;
        if (uv.c != 1 || uv.h != xv.h || uv.w != xv.w)
            throw invalid_input("scale_map: map must be (1,H,W)");
        Tensor<T> v = xv;
        for (int ci = 0; ci < xv.c; ++ci) {
            T* p = v.channel(ci);
            const T* up = uv.data();
            for (int i = 0; i < xv.plane(); ++i) p[i] *= up[i];
        }
        Ref y = input(std::move(v));
        tape_.push_back([this, x, u, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            const Tensor<T>& xv = nodes_[x].val;
            const Tensor<T>& uv = nodes_[u].val;
            Tensor<T>& gx = nodes_[x].grad;
            Tensor<T>& gu = nodes_[u].grad;
            for (int ci = 0; ci < xv.c; ++ci) {
                const T* gyp = gy.channel(ci);
                const T* xp = xv.channel(ci);
                const T* up = uv.data();
                T* gxp = gx.channel(ci);
                T* gup = gu.data();
                for (int i = 0; i < xv.plane(); ++i) {
                    gxp[i] += gyp[i] * up[i];
                    gup[i] += gyp[i] * xp[i];
                }
            }
        });
        return y;
    }

    // (Q, H, W) -> (1, H, W), sum over channels.
    Ref channel_sum(Ref x) {
        const Tensor<T>& xv = nodes_[x].val;
        Tensor<T> v(1, xv.h, xv.w);
        for (int ci = 0; ci < xv.c; ++ci) {
            const T* src = xv.channel(ci);
            for (int i = 0; i < xv.plane(); ++i) v[i] += src[i];
        }
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y] {
            const Tensor<T>& gy = nodes_[y].grad;
            Tensor<T>& gx = nodes_[x].grad;
            for (int ci = 0; ci < gx.c; ++ci) {
                T* out = gx.channel(ci);
                for (int i = 0; i < gx.plane(); ++i) out[i] += gy[i];
            }
        });
        return y;
    }

    // y = q / x elementwise (used for U = Q / strength).
    Ref recip_scale(Ref x, T q) {
        Tensor<T> v = nodes_[x].val;
        for (auto& e : v.v) e = q / e;
        Ref y = input(std::move(v));
        tape_.push_back([this, x, y, q] {
            const Tensor<T>& gy = nodes_[y].grad;
            const Tensor<T>& xv = nodes_[x].val;
            Tensor<T>& gx = nodes_[x].grad;
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] -= gy[i] * q / (xv[i] * xv[i]);
        });
        return y;
    }

    // --- loss heads; each returns a (1,1,1) scalar node ---

    Ref mutual_loss_op(Ref alpha_map, const LabelMap& y, T lambda1, T lambda2) {
        const Tensor<T>& av = nodes_[alpha_map].val;
        EvidenceMap<T> em = make_evidence_map(av);
        auto ga = std::make_shared<Tensor<T>>();
        const T loss = mutual_loss(em, y, lambda1, lambda2, ga.get());
        Ref out = input(Tensor<T>::scalar(loss));
        tape_.push_back([this, alpha_map, out, ga] {
            const T seed = nodes_[out].grad[0];
            Tensor<T>& gx = nodes_[alpha_map].grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += seed * (*ga)[i];
        });
        return out;
    }

    Ref cls_loss_op(Ref alpha_vec, const std::vector<T>& y, T lambda_c) {
        const Tensor<T>& av = nodes_[alpha_vec].val;
        DirichletParams<T> d;
        d.alpha.assign(av.v.begin(), av.v.end());
        d.strength = T(0);
        for (const T& a : d.alpha) d.strength += a;
        auto ga = std::make_shared<std::vector<T>>();
        const T loss = classification_loss(d, y, lambda_c, ga.get());
        Ref out = input(Tensor<T>::scalar(loss));
        tape_.push_back([this, alpha_vec, out, ga] {
            const T seed = nodes_[out].grad[0];
            Tensor<T>& gx = nodes_[alpha_vec].grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += seed * (*ga)[i];
        });
        return out;
    }

    Ref ds_loss_op(const std::array<Ref, 4>& s, const LabelMap& y) {
        std::vector<Tensor<T>> sv;
        for (Ref r : s) sv.push_back(nodes_[r].val);
        auto gs = std::make_shared<std::vector<Tensor<T>>>();
        const T loss = deep_supervision_loss(sv, y, gs.get());
        Ref out = input(Tensor<T>::scalar(loss));
        std::array<Ref, 4> refs = s;
        tape_.push_back([this, refs, out, gs] {
            const T seed = nodes_[out].grad[0];
            for (int i = 0; i < 4; ++i) {
                Tensor<T>& gx = nodes_[refs[i]].grad;
                const Tensor<T>& g = (*gs)[i];
                for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += seed * g[j];
            }
        });
        return out;
    }

    Ref weighted_sum(const std::vector<std::pair<Ref, T>>& terms) {
        T acc = T(0);
        for (const auto& [r, w] : terms) acc += w * nodes_[r].val[0];
        Ref out = input(Tensor<T>::scalar(acc));
        std::vector<std::pair<Ref, T>> ts = terms;
        tape_.push_back([this, ts, out] {
            const T seed = nodes_[out].grad[0];
            for (const auto& [r, w] : ts) nodes_[r].grad[0] += seed * w;
        });
        return out;
    }

    void backward(Ref loss) {
        if (nodes_[loss].val.size() != 1)
            throw invalid_input("backward: loss node must be scalar");
        nodes_[loss].grad[0] = T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
    };

    static EvidenceMap<T> make_evidence_map(const Tensor<T>& alpha) {
        EvidenceMap<T> em;
        em.alpha = alpha;
        em.strength = Tensor<T>(1, alpha.h, alpha.w);
        for (int q = 0; q < alpha.c; ++q) {
            const T* a = alpha.channel(q);
            for (int i = 0; i < alpha.plane(); ++i) em.strength[i] += a[i];
        }
        return em;
    }

    void accum(Ref x, const Tensor<T>& g) {
        Tensor<T>& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> tape_;
};

}  // namespace uml
