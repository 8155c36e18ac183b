#include "ypose/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace ypose {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, Tensor<T> tensor, bool trainable) {
    if (index_.count(name)) {
        throw std::invalid_argument("param store: duplicate name '" + name + "'");
    }
    index_[name] = entries_.size();
    entries_.push_back({name, tensor, trainable});
    return tensor;
}

template <typename T>
Tensor<T> ParamStore<T>::add_param(const std::string& name, Tensor<T> tensor) {
    return add(name, std::move(tensor), true);
}

template <typename T>
Tensor<T> ParamStore<T>::add_buffer(const std::string& name, Tensor<T> tensor) {
    return add(name, std::move(tensor), false);
}

template <typename T>
Tensor<T>* ParamStore<T>::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

template <typename T>
const Tensor<T>* ParamStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) {
        if (e.trainable) out.push_back(e.tensor);
    }
    return out;
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) {
        if (e.trainable) total += e.tensor.numel();
    }
    return total;
}

template <typename T>
void ParamStore<T>::zero_grads() {
    for (auto& e : entries_) {
        if (e.trainable) e.tensor.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// ParamInit
// ---------------------------------------------------------------------------

template <typename T>
std::uint64_t ParamInit<T>::next_bits() {
    // splitmix64
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

template <typename T>
double ParamInit<T>::next_uniform() {
    return static_cast<double>(next_bits() >> 11) * (1.0 / 9007199254740992.0);
}

template <typename T>
double ParamInit<T>::next_gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = next_uniform();
    while (u1 <= 1e-300) u1 = next_uniform();
    const double u2 = next_uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586;
    spare_ = mag * std::sin(two_pi * u2);
    have_spare_ = true;
    return mag * std::cos(two_pi * u2);
}

template <typename T>
Tensor<T> ParamInit<T>::conv_weight(int out_channels, int in_per_group, int kh, int kw,
                                    int groups) {
    const double fan_out = static_cast<double>(kh) * kw * out_channels / groups;
    const double stddev = std::sqrt(2.0 / fan_out);
    std::vector<T> data(static_cast<std::size_t>(out_channels) * in_per_group * kh * kw);
    for (auto& v : data) v = static_cast<T>(next_gaussian() * stddev);
    return Tensor<T>::from_data({out_channels, in_per_group, kh, kw}, std::move(data), true);
}

template <typename T>
Tensor<T> ParamInit<T>::fc_weight(int out_features, int in_features) {
    const double bound = std::sqrt(1.0 / in_features);
    std::vector<T> data(static_cast<std::size_t>(out_features) * in_features);
    for (auto& v : data) v = static_cast<T>((next_uniform() * 2.0 - 1.0) * bound);
    return Tensor<T>::from_data({out_features, in_features}, std::move(data), true);
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
BatchNormParams<T> BatchNormParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                              int channels) {
    BatchNormParams p;
    p.gamma = store.add_param(prefix + ".gamma", Tensor<T>::filled({channels}, T(1), true));
    p.beta = store.add_param(prefix + ".beta", Tensor<T>::zeros({channels}, true));
    p.running_mean = store.add_buffer(prefix + ".running_mean", Tensor<T>::zeros({channels}));
    p.running_var = store.add_buffer(prefix + ".running_var", Tensor<T>::filled({channels}, T(1)));
    return p;
}

template <typename T>
Tensor<T> BatchNormParams<T>::forward(const Tensor<T>& x, const NormSettings& ns, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, static_cast<T>(ns.eps),
                      static_cast<T>(ns.momentum), training);
}

template <typename T>
ConvBnAct<T> ConvBnAct<T>::create(ParamStore<T>& store, ParamInit<T>& init,
                                  const std::string& prefix, int in_channels, int out_channels,
                                  int kernel, int stride, int groups, bool act) {
    ConvBnAct c;
    c.weight = store.add_param(
        prefix + ".conv.weight",
        init.conv_weight(out_channels, in_channels / groups, kernel, kernel, groups));
    c.bn = BatchNormParams<T>::create(store, prefix + ".bn", out_channels);
    c.stride = stride;
    c.groups = groups;
    c.act = act;
    return c;
}

template <typename T>
Tensor<T> ConvBnAct<T>::forward(const Tensor<T>& x, const NormSettings& ns, bool training) {
    auto h = conv2d(x, weight, stride, Padding::kSame, groups);
    h = bn.forward(h, ns, training);
    return act ? swish(h) : h;
}

template <typename T>
SqueezeExcite<T> SqueezeExcite<T>::create(ParamStore<T>& store, ParamInit<T>& init,
                                          const std::string& prefix, int channels, int reduced) {
    SqueezeExcite s;
    s.w_reduce = store.add_param(prefix + ".reduce.weight", init.fc_weight(reduced, channels));
    s.b_reduce = store.add_param(prefix + ".reduce.bias", Tensor<T>::zeros({reduced}, true));
    s.w_expand = store.add_param(prefix + ".expand.weight", init.fc_weight(channels, reduced));
    s.b_expand = store.add_param(prefix + ".expand.bias", Tensor<T>::zeros({channels}, true));
    return s;
}

template <typename T>
Tensor<T> SqueezeExcite<T>::forward(const Tensor<T>& x) {
    auto s = global_avg_pool(x);
    s = swish(fully_connected(s, w_reduce, b_reduce));
    s = sigmoid(fully_connected(s, w_expand, b_expand));
    return scale_channels(x, s);
}

template <typename T>
MBConvBlock<T> MBConvBlock<T>::create(ParamStore<T>& store, ParamInit<T>& init,
                                      const std::string& prefix, const MBConvConfig& cfg) {
    if (cfg.in_channels < 1 || cfg.out_channels < 1) {
        throw std::invalid_argument("mbconv: channel counts must be positive");
    }
    MBConvBlock b;
    b.cfg = cfg;
    const int expanded = cfg.in_channels * cfg.expansion_ratio;
    if (cfg.expansion_ratio != 1) {
        b.expand = ConvBnAct<T>::create(store, init, prefix + ".expand", cfg.in_channels,
                                        expanded, 1, 1, 1, true);
    }
    b.depthwise = ConvBnAct<T>::create(store, init, prefix + ".depthwise", expanded, expanded,
                                       cfg.kernel, cfg.stride, expanded, true);
    if (cfg.se_ratio) {
        // reduction is computed from the block's input channels, not the
        // expanded width
        const int reduced = static_cast<int>(std::ceil(cfg.in_channels * *cfg.se_ratio));
        b.se = SqueezeExcite<T>::create(store, init, prefix + ".se", expanded, reduced);
    }
    b.project = ConvBnAct<T>::create(store, init, prefix + ".project", expanded, cfg.out_channels,
                                     1, 1, 1, false);
    return b;
}

template <typename T>
Tensor<T> MBConvBlock<T>::forward(const Tensor<T>& x, const NormSettings& ns, bool training) {
    if (x.dim(1) != cfg.in_channels) {
        throw std::invalid_argument("mbconv: input has " + std::to_string(x.dim(1)) +
                                    " channels, block expects " + std::to_string(cfg.in_channels));
    }
    auto h = x;
    if (expand) h = expand->forward(h, ns, training);
    h = depthwise.forward(h, ns, training);
    if (se) h = se->forward(h);
    h = project.forward(h, ns, training);
    return cfg.has_skip() ? add(h, x) : h;
}

template <typename T>
RefinementUnit<T> RefinementUnit<T>::create(ParamStore<T>& store, ParamInit<T>& init,
                                            const std::string& prefix, int in_channels,
                                            const RefinementConfig& cfg) {
    if (cfg.growth_rate < 1) {
        throw std::invalid_argument("refinement: growth rate must be >= 1");
    }
    RefinementUnit u;
    u.in_channels = in_channels;
    u.growth = cfg.growth_rate;
    const int bottleneck = cfg.bottleneck_factor * cfg.growth_rate;
    u.bn1 = BatchNormParams<T>::create(store, prefix + ".bn1", in_channels);
    u.w1 = store.add_param(prefix + ".conv1.weight",
                           init.conv_weight(bottleneck, in_channels, 1, 1, 1));
    u.b1 = store.add_param(prefix + ".conv1.bias", Tensor<T>::zeros({bottleneck}, true));
    u.bn2 = BatchNormParams<T>::create(store, prefix + ".bn2", bottleneck);
    u.w2 = store.add_param(prefix + ".conv2.weight",
                           init.conv_weight(cfg.growth_rate, bottleneck, 3, 3, 1));
    u.b2 = store.add_param(prefix + ".conv2.bias", Tensor<T>::zeros({cfg.growth_rate}, true));
    return u;
}

template <typename T>
Tensor<T> RefinementUnit<T>::forward(const Tensor<T>& x, const NormSettings& ns, bool training) {
    auto h = swish(bn1.forward(x, ns, training));
    h = conv2d(h, w1, b1, 1, Padding::kSame);
    h = swish(bn2.forward(h, ns, training));
    h = conv2d(h, w2, b2, 1, Padding::kSame);
    return concat_channels<T>({x, h});
}

#define YPOSE_INSTANTIATE_BLOCKS(T)         \
    template class ParamStore<T>;           \
    template class ParamInit<T>;            \
    template struct BatchNormParams<T>;     \
    template struct ConvBnAct<T>;           \
    template struct SqueezeExcite<T>;       \
    template struct MBConvBlock<T>;         \
    template struct RefinementUnit<T>;

YPOSE_INSTANTIATE_BLOCKS(float)
YPOSE_INSTANTIATE_BLOCKS(double)
#undef YPOSE_INSTANTIATE_BLOCKS

}  // namespace ypose
