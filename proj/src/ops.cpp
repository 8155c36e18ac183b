#include "ypose/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <unordered_map>
#include <unordered_set>

namespace ypose {

namespace {

template <typename T>
using Node = detail::Node<T>;
template <typename T>
using NodePtr = detail::NodePtr<T>;

template <typename T>
bool any_tracked(std::initializer_list<const Tensor<T>*> inputs) {
    for (const auto* t : inputs) {
        if (t->defined() && t->tracked()) return true;
    }
    return false;
}

// Builds an op output node; records parents and the backprop closure only when
// grad mode is on and some input is part of a graph. Otherwise the output is a
// plain constant and upstream activations can be freed as handles go away.
template <typename T, typename Backprop>
Tensor<T> make_output(std::vector<int> shape, std::vector<T> data,
                      std::vector<NodePtr<T>> parents, bool tracked, Backprop&& backprop) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (tracked && grad_enabled()) {
        node->tracked = true;
        node->parents = std::move(parents);
        node->backprop = std::forward<Backprop>(backprop);
    }
    return Tensor<T>::wrap(std::move(node));
}

// ---- small dense kernels (row major) ----

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B^T where bt is [N,K]
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* bt, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bt + static_cast<std::size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[M,N] += A^T * B where at is [K,M]
template <typename T>
void gemm_tn(int m, int n, int k, const T* at, const T* b, T* c) {
    for (int p = 0; p < k; ++p) {
        const T* arow = at + static_cast<std::size_t>(p) * m;
        const T* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvGeom {
    int ho = 0, wo = 0;
    int pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
    bool padded() const { return pad_top | pad_left | pad_bottom | pad_right; }
};

ConvGeom conv_geom(int h, int w, int kh, int kw, int stride, Padding padding) {
    ConvGeom g;
    if (padding == Padding::kSame) {
        g.ho = (h + stride - 1) / stride;
        g.wo = (w + stride - 1) / stride;
        const int pad_h = std::max((g.ho - 1) * stride + kh - h, 0);
        const int pad_w = std::max((g.wo - 1) * stride + kw - w, 0);
        // extra pixel goes to the bottom/right
        g.pad_top = pad_h / 2;
        g.pad_bottom = pad_h - g.pad_top;
        g.pad_left = pad_w / 2;
        g.pad_right = pad_w - g.pad_left;
    } else {
        if (kh > h || kw > w) {
            throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" +
                                        std::to_string(kw) + " exceeds input " +
                                        std::to_string(h) + "x" + std::to_string(w) +
                                        " with valid padding");
        }
        g.ho = (h - kh) / stride + 1;
        g.wo = (w - kw) / stride + 1;
    }
    return g;
}

// col[(C*kh*kw) x (ho*wo)] from one padded sample [C, hp, wp].
template <typename T>
void im2col(const T* src, int c, int hp, int wp, int kh, int kw, int stride, int ho, int wo,
            T* col) {
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = src + static_cast<std::size_t>(ch) * hp * wp;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + static_cast<std::size_t>((ch * kh + ki) * kw + kj) * ho * wo;
                for (int oh = 0; oh < ho; ++oh) {
                    const T* srow = plane + static_cast<std::size_t>(oh * stride + ki) * wp +
                                    kj;
                    if (stride == 1) {
                        std::copy(srow, srow + wo, dst);
                        dst += wo;
                    } else {
                        for (int ow = 0; ow < wo; ++ow) *dst++ = srow[ow * stride];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int c, int hp, int wp, int kh, int kw, int stride, int ho, int wo,
                T* dst) {
    for (int ch = 0; ch < c; ++ch) {
        T* plane = dst + static_cast<std::size_t>(ch) * hp * wp;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + static_cast<std::size_t>((ch * kh + ki) * kw + kj) * ho * wo;
                for (int oh = 0; oh < ho; ++oh) {
                    T* drow = plane + static_cast<std::size_t>(oh * stride + ki) * wp + kj;
                    for (int ow = 0; ow < wo; ++ow) drow[ow * stride] += *src++;
                }
            }
        }
    }
}

// Zero-padded copy of one sample.
template <typename T>
void pad_sample(const T* src, int c, int h, int w, const ConvGeom& g, T* dst) {
    const int hp = h + g.pad_top + g.pad_bottom;
    const int wp = w + g.pad_left + g.pad_right;
    std::fill(dst, dst + static_cast<std::size_t>(c) * hp * wp, T(0));
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h; ++i) {
            const T* srow = src + (static_cast<std::size_t>(ch) * h + i) * w;
            T* drow = dst + (static_cast<std::size_t>(ch) * hp + i + g.pad_top) * wp + g.pad_left;
            std::copy(srow, srow + w, drow);
        }
    }
}

template <typename T>
void unpad_add(const T* padded, int c, int h, int w, const ConvGeom& g, T* dst) {
    const int hp = h + g.pad_top + g.pad_bottom;
    const int wp = w + g.pad_left + g.pad_right;
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h; ++i) {
            const T* srow =
                padded + (static_cast<std::size_t>(ch) * hp + i + g.pad_top) * wp + g.pad_left;
            T* drow = dst + (static_cast<std::size_t>(ch) * h + i) * w;
            for (int j = 0; j < w; ++j) drow[j] += srow[j];
        }
    }
}

// Deterministic uniform in [0,1) from raw mt19937_64 output; avoids
// std::uniform_real_distribution, whose stream is implementation-defined.
template <typename T>
T uniform01(std::uint64_t bits) {
    return static_cast<T>(bits >> 40) * static_cast<T>(1.0 / 16777216.0);
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// backward engine
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss tensor");
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    detail::shape_str(loss.shape()));
    }
    auto root = loss.node();

    // Post-order over tracked parents, iterative.
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->tracked && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Per-call gradient flow; parameters accumulate into their persistent slot
    // at the end so repeated backward calls add up.
    std::unordered_map<Node<T>*, std::vector<T>> flow;
    flow.reserve(topo.size());
    flow[root.get()] = {T(1)};

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* node = *it;
        auto found = flow.find(node);
        if (found == flow.end()) continue;  // no path carried gradient here
        if (node->backprop) {
            std::vector<std::vector<T>*> sinks(node->parents.size(), nullptr);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                Node<T>* parent = node->parents[i].get();
                if (!parent->tracked) continue;
                auto [slot, inserted] = flow.try_emplace(parent);
                if (inserted) slot->second.assign(parent->numel(), T(0));
                sinks[i] = &slot->second;
            }
            node->backprop(found->second, sinks);
        }
        if (node->requires_grad) {
            if (node->grad.empty()) node->grad.assign(node->numel(), T(0));
            const auto& g = found->second;
            for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
        }
    }
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

// Shared by forward and backward: runs fn(n, g, col_ptr) with the im2col matrix
// of sample n, group g. Reuses one scratch buffer; aliases the input directly
// for 1x1 stride-1 unpadded convolutions.
template <typename T, typename Fn>
void for_each_col(const T* in, int n, int cin, int h, int w, int groups, int kh, int kw,
                  int stride, const ConvGeom& g, Fn&& fn) {
    const int cg = cin / groups;
    const bool alias = (kh == 1 && kw == 1 && stride == 1 && !g.padded());
    const int hp = h + g.pad_top + g.pad_bottom;
    const int wp = w + g.pad_left + g.pad_right;
    std::vector<T> padded;
    std::vector<T> col;
    if (!alias) {
        if (g.padded()) padded.resize(static_cast<std::size_t>(cin) * hp * wp);
        col.resize(static_cast<std::size_t>(cg) * kh * kw * g.ho * g.wo);
    }
    for (int i = 0; i < n; ++i) {
        const T* sample = in + static_cast<std::size_t>(i) * cin * h * w;
        const T* src = sample;
        if (!alias && g.padded()) {
            pad_sample(sample, cin, h, w, g, padded.data());
            src = padded.data();
        }
        for (int gi = 0; gi < groups; ++gi) {
            if (alias) {
                fn(i, gi, sample + static_cast<std::size_t>(gi) * cg * h * w);
            } else {
                im2col(src + static_cast<std::size_t>(gi) * cg * hp * wp, cg, hp, wp, kh, kw,
                       stride, g.ho, g.wo, col.data());
                fn(i, gi, static_cast<const T*>(col.data()));
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, Padding padding, int groups) {
    require(input.defined() && input.rank() == 4,
            "conv2d: input must be rank 4 [N,Cin,H,W]");
    require(weight.defined() && weight.rank() == 4,
            "conv2d: weight must be rank 4 [Cout,Cin/groups,kH,kW]");
    require(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
    require(groups >= 1, "conv2d: groups must be >= 1, got " + std::to_string(groups));

    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), wcg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    require(cin % groups == 0, "conv2d: input channels (" + std::to_string(cin) +
                                   ") not divisible by groups (" + std::to_string(groups) + ")");
    require(cout % groups == 0, "conv2d: output channels (" + std::to_string(cout) +
                                    ") not divisible by groups (" + std::to_string(groups) + ")");
    require(wcg == cin / groups,
            "conv2d: weight dim 1 is " + std::to_string(wcg) + ", expected Cin/groups = " +
                std::to_string(cin / groups));
    if (bias.defined()) {
        require(bias.rank() == 1 && bias.dim(0) == cout,
                "conv2d: bias dim 0 is " + std::to_string(bias.dim(0)) + ", expected Cout = " +
                    std::to_string(cout));
    }

    const ConvGeom geom = conv_geom(h, w, kh, kw, stride, padding);
    const int cg = cin / groups, og = cout / groups;
    const int howo = geom.ho * geom.wo;
    const std::size_t kdim = static_cast<std::size_t>(cg) * kh * kw;

    std::vector<T> out(static_cast<std::size_t>(n) * cout * howo, T(0));
    if (bias.defined()) {
        const auto b = bias.data();
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < cout; ++c) {
                T* row = out.data() + (static_cast<std::size_t>(i) * cout + c) * howo;
                std::fill(row, row + howo, b[c]);
            }
        }
    }
    const T* wdata = weight.data().data();
    for_each_col(input.data().data(), n, cin, h, w, groups, kh, kw, stride, geom,
                 [&](int i, int gi, const T* col) {
                     gemm_nn(og, howo, static_cast<int>(kdim),
                             wdata + static_cast<std::size_t>(gi) * og * kdim, col,
                             out.data() + (static_cast<std::size_t>(i) * cout +
                                           static_cast<std::size_t>(gi) * og) *
                                              howo);
                 });

    const bool tracked = any_tracked<T>({&input, &weight, &bias});
    auto in_node = input.node();
    auto w_node = weight.node();
    std::vector<NodePtr<T>> parents{in_node, w_node};
    if (bias.defined()) parents.push_back(bias.node());

    return make_output<T>(
        {n, cout, geom.ho, geom.wo}, std::move(out), std::move(parents), tracked,
        [in_node, w_node, n, cin, h, w, cout, kh, kw, stride, groups, geom, cg, og, howo,
         kdim](std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
            std::vector<T>* dx = sinks[0];
            std::vector<T>* dw = sinks[1];
            std::vector<T>* db = sinks.size() > 2 ? sinks[2] : nullptr;
            if (db) {
                for (int i = 0; i < n; ++i) {
                    for (int c = 0; c < cout; ++c) {
                        const T* row = dy.data() + (static_cast<std::size_t>(i) * cout + c) * howo;
                        T acc = T(0);
                        for (int p = 0; p < howo; ++p) acc += row[p];
                        (*db)[c] += acc;
                    }
                }
            }
            if (dw) {
                for_each_col(in_node->data.data(), n, cin, h, w, groups, kh, kw, stride, geom,
                             [&](int i, int gi, const T* col) {
                                 gemm_nt(og, static_cast<int>(kdim), howo,
                                         dy.data() + (static_cast<std::size_t>(i) * cout +
                                                      static_cast<std::size_t>(gi) * og) *
                                                         howo,
                                         col, dw->data() + static_cast<std::size_t>(gi) * og * kdim);
                             });
            }
            if (dx) {
                const bool alias = (kh == 1 && kw == 1 && stride == 1 && !geom.padded());
                const int hp = h + geom.pad_top + geom.pad_bottom;
                const int wp = w + geom.pad_left + geom.pad_right;
                const T* wdata = w_node->data.data();
                std::vector<T> dcol;
                std::vector<T> dpad;
                if (!alias) {
                    dcol.resize(kdim * howo);
                    if (geom.padded()) dpad.resize(static_cast<std::size_t>(cin) * hp * wp);
                }
                for (int i = 0; i < n; ++i) {
                    T* dsample = dx->data() + static_cast<std::size_t>(i) * cin * h * w;
                    if (!alias && geom.padded()) std::fill(dpad.begin(), dpad.end(), T(0));
                    for (int gi = 0; gi < groups; ++gi) {
                        const T* dyg = dy.data() + (static_cast<std::size_t>(i) * cout +
                                                    static_cast<std::size_t>(gi) * og) *
                                                       howo;
                        const T* wg = wdata + static_cast<std::size_t>(gi) * og * kdim;
                        if (alias) {
                            gemm_tn(static_cast<int>(kdim), howo, og, wg, dyg,
                                    dsample + static_cast<std::size_t>(gi) * cg * h * w);
                        } else {
                            std::fill(dcol.begin(), dcol.end(), T(0));
                            gemm_tn(static_cast<int>(kdim), howo, og, wg, dyg, dcol.data());
                            if (geom.padded()) {
                                col2im_add(dcol.data(), cg, hp, wp, kh, kw, stride, geom.ho,
                                           geom.wo,
                                           dpad.data() + static_cast<std::size_t>(gi) * cg * hp * wp);
                            } else {
                                col2im_add(dcol.data(), cg, h, w, kh, kw, stride, geom.ho, geom.wo,
                                           dsample + static_cast<std::size_t>(gi) * cg * h * w);
                            }
                        }
                    }
                    if (!alias && geom.padded()) unpad_add(dpad.data(), cin, h, w, geom, dsample);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// batch_norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, T eps, T momentum,
                     bool training) {
    require(input.defined() && input.rank() == 4, "batch_norm: input must be rank 4 [N,C,H,W]");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::array<const Tensor<T>*, 4> per_channel{&gamma, &beta, &running_mean, &running_var};
    for (const Tensor<T>* p : per_channel) {
        require(p->defined() && p->rank() == 1 && p->dim(0) == c,
                "batch_norm: per-channel tensors must have shape [" + std::to_string(c) + "]");
    }
    require(eps > T(0), "batch_norm: eps must be > 0");

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t count = static_cast<std::size_t>(n) * plane;
    const auto x = input.data();

    std::vector<T> mean(c), invstd(c);
    if (training) {
        std::vector<T> var(c, T(0));
        for (int ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (int i = 0; i < n; ++i) {
                const T* row = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
                for (std::size_t p = 0; p < plane; ++p) acc += row[p];
            }
            mean[ch] = acc / static_cast<T>(count);
        }
        for (int ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (int i = 0; i < n; ++i) {
                const T* row = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const T d = row[p] - mean[ch];
                    acc += d * d;
                }
            }
            var[ch] = acc / static_cast<T>(count);  // biased
            invstd[ch] = T(1) / std::sqrt(var[ch] + eps);
        }
        auto rm = running_mean.data();
        auto rv = running_var.data();
        for (int ch = 0; ch < c; ++ch) {
            rm[ch] = momentum * rm[ch] + (T(1) - momentum) * mean[ch];
            rv[ch] = momentum * rv[ch] + (T(1) - momentum) * var[ch];
        }
    } else {
        const auto rm = running_mean.data();
        const auto rv = running_var.data();
        for (int ch = 0; ch < c; ++ch) {
            mean[ch] = rm[ch];
            invstd[ch] = T(1) / std::sqrt(rv[ch] + eps);
        }
    }

    const auto g = gamma.data();
    const auto b = beta.data();
    std::vector<T> out(x.size());
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
            const T m = mean[ch], is = invstd[ch], gc = g[ch], bc = b[ch];
            for (std::size_t p = 0; p < plane; ++p) {
                out[base + p] = gc * (x[base + p] - m) * is + bc;
            }
        }
    }

    const bool tracked = any_tracked<T>({&input, &gamma, &beta});
    auto in_node = input.node();
    auto gamma_node = gamma.node();
    return make_output<T>(
        input.shape(), std::move(out), {in_node, gamma_node, beta.node()}, tracked,
        [in_node, gamma_node, mean = std::move(mean), invstd = std::move(invstd), n, c, plane,
         count, training](std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
            const auto& x = in_node->data;
            const auto& g = gamma_node->data;
            std::vector<T>* dx = sinks[0];
            std::vector<T>* dgamma = sinks[1];
            std::vector<T>* dbeta = sinks[2];
            for (int ch = 0; ch < c; ++ch) {
                const T m = mean[ch], is = invstd[ch];
                T sum_dy = T(0), sum_dy_xhat = T(0);
                for (int i = 0; i < n; ++i) {
                    const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const T d = dy[base + p];
                        sum_dy += d;
                        sum_dy_xhat += d * (x[base + p] - m) * is;
                    }
                }
                if (dbeta) (*dbeta)[ch] += sum_dy;
                if (dgamma) (*dgamma)[ch] += sum_dy_xhat;
                if (dx) {
                    const T gc = g[ch];
                    if (training) {
                        const T mean_dy = sum_dy / static_cast<T>(count);
                        const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(count);
                        for (int i = 0; i < n; ++i) {
                            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
                            for (std::size_t p = 0; p < plane; ++p) {
                                const T xhat = (x[base + p] - m) * is;
                                (*dx)[base + p] +=
                                    gc * is * (dy[base + p] - mean_dy - xhat * mean_dy_xhat);
                            }
                        }
                    } else {
                        for (int i = 0; i < n; ++i) {
                            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
                            for (std::size_t p = 0; p < plane; ++p) {
                                (*dx)[base + p] += gc * is * dy[base + p];
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> swish(const Tensor<T>& x, T beta) {
    require(x.defined(), "swish: undefined input");
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-beta * in[i]));
        out[i] = in[i] * s;
    }
    auto in_node = x.node();
    return make_output<T>(x.shape(), std::move(out), {in_node}, x.tracked(),
                          [in_node, beta](std::span<const T> dy,
                                          const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              const auto& in = in_node->data;
                              for (std::size_t i = 0; i < in.size(); ++i) {
                                  const T s = T(1) / (T(1) + std::exp(-beta * in[i]));
                                  dx[i] += dy[i] * (s + beta * in[i] * s * (T(1) - s));
                              }
                          });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    require(x.defined(), "sigmoid: undefined input");
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
    auto in_node = x.node();
    return make_output<T>(x.shape(), std::move(out), {in_node}, x.tracked(),
                          [in_node](std::span<const T> dy,
                                    const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              const auto& in = in_node->data;
                              for (std::size_t i = 0; i < in.size(); ++i) {
                                  const T s = T(1) / (T(1) + std::exp(-in[i]));
                                  dx[i] += dy[i] * s * (T(1) - s);
                              }
                          });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    require(logits.defined() && logits.rank() == 2, "softmax: input must be rank 2 [N,C]");
    const int n = logits.dim(0), c = logits.dim(1);
    const auto in = logits.data();
    std::vector<T> out(in.size());
    for (int i = 0; i < n; ++i) {
        const T* row = in.data() + static_cast<std::size_t>(i) * c;
        T* orow = out.data() + static_cast<std::size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < c; ++j) orow[j] *= inv;
    }
    // closure keeps a copy of the output rows; capturing the output node would
    // make the node own itself
    std::vector<T> saved = out;
    return make_output<T>(logits.shape(), std::move(out), {logits.node()}, logits.tracked(),
                          [saved = std::move(saved), n, c](
                              std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              for (int i = 0; i < n; ++i) {
                                  const std::size_t base = static_cast<std::size_t>(i) * c;
                                  T dot = T(0);
                                  for (int j = 0; j < c; ++j) dot += dy[base + j] * saved[base + j];
                                  for (int j = 0; j < c; ++j) {
                                      dx[base + j] += saved[base + j] * (dy[base + j] - dot);
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    require(x.defined() && x.rank() == 2, "fully_connected: input must be rank 2 [N,M]");
    require(w.defined() && w.rank() == 2, "fully_connected: weight must be rank 2 [C,M]");
    const int n = x.dim(0), m = x.dim(1), c = w.dim(0);
    require(w.dim(1) == m, "fully_connected: weight dim 1 is " + std::to_string(w.dim(1)) +
                               ", expected input features = " + std::to_string(m));
    require(b.defined() && b.rank() == 1 && b.dim(0) == c,
            "fully_connected: bias dim 0 must equal output features = " + std::to_string(c));

    std::vector<T> out(static_cast<std::size_t>(n) * c);
    const auto bd = b.data();
    for (int i = 0; i < n; ++i) {
        std::copy(bd.begin(), bd.end(), out.begin() + static_cast<std::size_t>(i) * c);
    }
    gemm_nt(n, c, m, x.data().data(), w.data().data(), out.data());

    const bool tracked = any_tracked<T>({&x, &w, &b});
    auto x_node = x.node();
    auto w_node = w.node();
    return make_output<T>(
        {n, c}, std::move(out), {x_node, w_node, b.node()}, tracked,
        [x_node, w_node, n, m, c](std::span<const T> dy,
                                  const std::vector<std::vector<T>*>& sinks) {
            if (sinks[0]) gemm_nn(n, m, c, dy.data(), w_node->data.data(), sinks[0]->data());
            if (sinks[1]) gemm_tn(c, m, n, dy.data(), x_node->data.data(), sinks[1]->data());
            if (sinks[2]) {
                auto& db = *sinks[2];
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < c; ++j) db[j] += dy[static_cast<std::size_t>(i) * c + j];
                }
            }
        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require(x.defined() && x.rank() == 4, "global_avg_pool: input must be rank 4 [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const auto in = x.data();
    std::vector<T> out(static_cast<std::size_t>(n) * c);
    for (std::size_t nc = 0; nc < out.size(); ++nc) {
        const T* row = in.data() + nc * plane;
        T acc = T(0);
        for (std::size_t p = 0; p < plane; ++p) acc += row[p];
        out[nc] = acc / static_cast<T>(plane);
    }
    return make_output<T>({n, c}, std::move(out), {x.node()}, x.tracked(),
                          [plane](std::span<const T> dy,
                                  const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              const T inv = T(1) / static_cast<T>(plane);
                              for (std::size_t nc = 0; nc < dy.size(); ++nc) {
                                  const T g = dy[nc] * inv;
                                  T* row = dx.data() + nc * plane;
                                  for (std::size_t p = 0; p < plane; ++p) row[p] += g;
                              }
                          });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    require(!xs.empty(), "concat_channels: needs at least one input");
    for (const auto& x : xs) {
        require(x.defined() && x.rank() == 4, "concat_channels: inputs must be rank 4 [N,C,H,W]");
    }
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int ctotal = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        require(xs[k].dim(0) == n && xs[k].dim(2) == h && xs[k].dim(3) == w,
                "concat_channels: input " + std::to_string(k) + " has shape " +
                    detail::shape_str(xs[k].shape()) + ", expected [N,*," + std::to_string(h) +
                    "," + std::to_string(w) + "] with N = " + std::to_string(n));
        ctotal += xs[k].dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> out(static_cast<std::size_t>(n) * ctotal * plane);
    std::vector<int> channels(xs.size());
    bool tracked = false;
    std::vector<NodePtr<T>> parents;
    parents.reserve(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        channels[k] = xs[k].dim(1);
        tracked = tracked || xs[k].tracked();
        parents.push_back(xs[k].node());
    }
    for (int i = 0; i < n; ++i) {
        std::size_t coff = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const std::size_t block = static_cast<std::size_t>(channels[k]) * plane;
            const T* src = xs[k].data().data() + static_cast<std::size_t>(i) * block;
            std::copy(src, src + block,
                      out.data() + (static_cast<std::size_t>(i) * ctotal) * plane + coff);
            coff += block;
        }
    }
    return make_output<T>(
        {n, ctotal, h, w}, std::move(out), std::move(parents), tracked,
        [channels = std::move(channels), n, ctotal, plane](
            std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
            for (int i = 0; i < n; ++i) {
                std::size_t coff = 0;
                for (std::size_t k = 0; k < channels.size(); ++k) {
                    const std::size_t block = static_cast<std::size_t>(channels[k]) * plane;
                    if (sinks[k]) {
                        const T* src =
                            dy.data() + (static_cast<std::size_t>(i) * ctotal) * plane + coff;
                        T* dst = sinks[k]->data() + static_cast<std::size_t>(i) * block;
                        for (std::size_t p = 0; p < block; ++p) dst[p] += src[p];
                    }
                    coff += block;
                }
            }
        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, bool training, std::uint64_t seed) {
    require(x.defined(), "dropout: undefined input");
    require(rate >= T(0) && rate < T(1),
            "dropout: rate must be in [0,1), got " + std::to_string(static_cast<double>(rate)));
    if (!training || rate == T(0)) {
        // identity pass-through, still differentiable
        auto in_node = x.node();
        std::vector<T> out(x.data().begin(), x.data().end());
        return make_output<T>(x.shape(), std::move(out), {in_node}, x.tracked(),
                              [](std::span<const T> dy,
                                 const std::vector<std::vector<T>*>& sinks) {
                                  if (!sinks[0]) return;
                                  auto& dx = *sinks[0];
                                  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                              });
    }
    std::mt19937_64 rng(seed);
    const T keep_scale = T(1) / (T(1) - rate);
    const auto in = x.data();
    std::vector<T> out(in.size());
    std::vector<std::uint8_t> keep(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        keep[i] = uniform01<T>(rng()) >= rate;
        out[i] = keep[i] ? in[i] * keep_scale : T(0);
    }
    return make_output<T>(x.shape(), std::move(out), {x.node()}, x.tracked(),
                          [keep = std::move(keep), keep_scale](
                              std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              for (std::size_t i = 0; i < dy.size(); ++i) {
                                  if (keep[i]) dx[i] += dy[i] * keep_scale;
                              }
                          });
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.defined() && b.defined() && a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                detail::shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<T> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return make_output<T>(a.shape(), std::move(out), {a.node(), b.node()},
                          any_tracked<T>({&a, &b}),
                          [](std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
                              for (auto* sink : sinks) {
                                  if (!sink) continue;
                                  for (std::size_t i = 0; i < dy.size(); ++i)
                                      (*sink)[i] += dy[i];
                              }
                          });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<T> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    auto a_node = a.node();
    auto b_node = b.node();
    return make_output<T>(a.shape(), std::move(out), {a_node, b_node}, any_tracked<T>({&a, &b}),
                          [a_node, b_node](std::span<const T> dy,
                                           const std::vector<std::vector<T>*>& sinks) {
                              if (sinks[0]) {
                                  for (std::size_t i = 0; i < dy.size(); ++i)
                                      (*sinks[0])[i] += dy[i] * b_node->data[i];
                              }
                              if (sinks[1]) {
                                  for (std::size_t i = 0; i < dy.size(); ++i)
                                      (*sinks[1])[i] += dy[i] * a_node->data[i];
                              }
                          });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate) {
    require(x.defined() && x.rank() == 4, "scale_channels: input must be rank 4 [N,C,H,W]");
    require(gate.defined() && gate.rank() == 2 && gate.dim(0) == x.dim(0) &&
                gate.dim(1) == x.dim(1),
            "scale_channels: gate must be [N,C] matching input, got " +
                detail::shape_str(gate.shape()));
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const auto in = x.data();
    const auto g = gate.data();
    std::vector<T> out(in.size());
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc) {
        const T gv = g[nc];
        const T* src = in.data() + nc * plane;
        T* dst = out.data() + nc * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] * gv;
    }
    auto x_node = x.node();
    auto gate_node = gate.node();
    return make_output<T>(
        x.shape(), std::move(out), {x_node, gate_node}, any_tracked<T>({&x, &gate}),
        [x_node, gate_node, n, c, plane](std::span<const T> dy,
                                         const std::vector<std::vector<T>*>& sinks) {
            for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc) {
                const T* dyrow = dy.data() + nc * plane;
                if (sinks[0]) {
                    const T gv = gate_node->data[nc];
                    T* dst = sinks[0]->data() + nc * plane;
                    for (std::size_t p = 0; p < plane; ++p) dst[p] += dyrow[p] * gv;
                }
                if (sinks[1]) {
                    const T* src = x_node->data.data() + nc * plane;
                    T acc = T(0);
                    for (std::size_t p = 0; p < plane; ++p) acc += dyrow[p] * src[p];
                    (*sinks[1])[nc] += acc;
                }
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    require(x.defined(), "scale: undefined input");
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
    return make_output<T>(x.shape(), std::move(out), {x.node()}, x.tracked(),
                          [factor](std::span<const T> dy,
                                   const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
                          });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    require(x.defined(), "sum_all: undefined input");
    const auto in = x.data();
    T acc = T(0);
    for (const T v : in) acc += v;
    return make_output<T>({1}, {acc}, {x.node()}, x.tracked(),
                          [](std::span<const T> dy, const std::vector<std::vector<T>*>& sinks) {
                              if (!sinks[0]) return;
                              auto& dx = *sinks[0];
                              for (auto& v : dx) v += dy[0];
                          });
}

template <typename T>
Tensor<T> nll_from_probs(const Tensor<T>& probs, const std::vector<int>& targets) {
    require(probs.defined() && probs.rank() == 2, "nll_from_probs: probs must be rank 2 [N,C]");
    const int n = probs.dim(0), c = probs.dim(1);
    require(static_cast<int>(targets.size()) == n,
            "nll_from_probs: " + std::to_string(targets.size()) + " targets for batch of " +
                std::to_string(n));
    for (int i = 0; i < n; ++i) {
        require(targets[i] >= 0 && targets[i] < c,
                "nll_from_probs: target " + std::to_string(targets[i]) + " out of range for " +
                    std::to_string(c) + " classes (row " + std::to_string(i) + ")");
    }
    constexpr double kClamp = 1e-12;
    const auto p = probs.data();
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
        const T v = p[static_cast<std::size_t>(i) * c + targets[i]];
        loss -= std::log(std::max(v, static_cast<T>(kClamp)));
    }
    loss /= static_cast<T>(n);
    auto p_node = probs.node();
    return make_output<T>(
        {1}, {loss}, {p_node}, probs.tracked(),
        [p_node, targets, n, c](std::span<const T> dy,
                                const std::vector<std::vector<T>*>& sinks) {
            if (!sinks[0]) return;
            auto& dp = *sinks[0];
            const T scale = dy[0] / static_cast<T>(n);
            for (int i = 0; i < n; ++i) {
                const std::size_t idx = static_cast<std::size_t>(i) * c + targets[i];
                const T v = p_node->data[idx];
                if (v > static_cast<T>(kClamp)) dp[idx] -= scale / v;
            }
        });
}

#define YPOSE_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,      \
                                 Padding, int);                                                  \
    template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                     Tensor<T>&, Tensor<T>&, T, T, bool);                        \
    template Tensor<T> swish<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                             \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                             \
    template Tensor<T> fully_connected<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                     \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                        \
    template Tensor<T> dropout<T>(const Tensor<T>&, T, bool, std::uint64_t);                     \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                             \
    template Tensor<T> nll_from_probs<T>(const Tensor<T>&, const std::vector<int>&);

YPOSE_INSTANTIATE_OPS(float)
YPOSE_INSTANTIATE_OPS(double)
#undef YPOSE_INSTANTIATE_OPS

}  // namespace ypose
