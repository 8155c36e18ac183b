#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ypose/ops.hpp"
#include "ypose/tensor.hpp"

namespace ypose {

struct MBConvConfig {
    int in_channels = 0;
    int out_channels = 0;
    int expansion_ratio = 6;
    int kernel = 3;
    int stride = 1;
    std::optional<double> se_ratio;  // absent for plain inverted residuals

    bool has_skip() const { return stride == 1 && in_channels == out_channels; }
};

struct RefinementConfig {
    int growth_rate = 32;
    int bottleneck_factor = 4;
    int num_units = 16;
};

struct NormSettings {
    double eps = 1e-3;
    double momentum = 0.99;
};

/// Named parameter registry. Insertion order is the canonical order for
/// checkpoints and accounting tables; names must be unique. Buffers (batch
/// norm running stats) are saved with checkpoints but excluded from parameter
/// counts.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable = true;
    };

    Tensor<T> add_param(const std::string& name, Tensor<T> tensor);
    Tensor<T> add_buffer(const std::string& name, Tensor<T> tensor);

    const std::vector<Entry>& entries() const { return entries_; }
    Tensor<T>* find(const std::string& name);
    const Tensor<T>* find(const std::string& name) const;

    std::vector<Tensor<T>> trainable() const;
    std::size_t trainable_count() const;
    void zero_grads();

private:
    Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable);

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Seeded initializers: conv weights ~ N(0, 2/fan_out), fully-connected
/// weights ~ U(+-sqrt(1/fan_in)), norm scale 1 / shift 0. The gaussian is a
/// hand-rolled Box-Muller over the raw engine stream so the draw sequence is
/// implementation-independent.
template <typename T>
class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    Tensor<T> conv_weight(int out_channels, int in_per_group, int kh, int kw, int groups);
    Tensor<T> fc_weight(int out_features, int in_features);

    double next_uniform();  // [0,1)
    double next_gaussian();

private:
    std::uint64_t next_bits();
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
struct BatchNormParams {
    Tensor<T> gamma, beta, running_mean, running_var;

    static BatchNormParams create(ParamStore<T>& store, const std::string& prefix, int channels);
    Tensor<T> forward(const Tensor<T>& x, const NormSettings& ns, bool training);
};

/// conv (bias-free) + batch norm + optional swish.
template <typename T>
struct ConvBnAct {
    Tensor<T> weight;
    BatchNormParams<T> bn;
    int stride = 1;
    int groups = 1;
    bool act = true;

    static ConvBnAct create(ParamStore<T>& store, ParamInit<T>& init, const std::string& prefix,
                            int in_channels, int out_channels, int kernel, int stride, int groups,
                            bool act);
    Tensor<T> forward(const Tensor<T>& x, const NormSettings& ns, bool training);
};

template <typename T>
struct SqueezeExcite {
    Tensor<T> w_reduce, b_reduce, w_expand, b_expand;

    static SqueezeExcite create(ParamStore<T>& store, ParamInit<T>& init,
                                const std::string& prefix, int channels, int reduced);
    Tensor<T> forward(const Tensor<T>& x);
};

/// Mobile inverted bottleneck: 1x1 expand (skipped at ratio 1), depthwise,
/// optional squeeze-excite, 1x1 linear projection, residual skip when the
/// shape is preserved. With se_ratio absent this is the plain MobileNet-V2
/// inverted residual (activation is swish either way).
template <typename T>
struct MBConvBlock {
    MBConvConfig cfg;
    std::optional<ConvBnAct<T>> expand;
    ConvBnAct<T> depthwise;
    std::optional<SqueezeExcite<T>> se;
    ConvBnAct<T> project;

    static MBConvBlock create(ParamStore<T>& store, ParamInit<T>& init, const std::string& prefix,
                              const MBConvConfig& cfg);
    Tensor<T> forward(const Tensor<T>& x, const NormSettings& ns, bool training);
};

/// Dense refinement unit: BN - swish - 1x1 conv (bottleneck_factor*k) - BN -
/// swish - 3x3 conv (k), output concatenated onto the input so the first
/// in_channels of the result are the input bit-for-bit.
template <typename T>
struct RefinementUnit {
    int in_channels = 0;
    int growth = 0;
    BatchNormParams<T> bn1;
    Tensor<T> w1, b1;
    BatchNormParams<T> bn2;
    Tensor<T> w2, b2;

    static RefinementUnit create(ParamStore<T>& store, ParamInit<T>& init,
                                 const std::string& prefix, int in_channels,
                                 const RefinementConfig& cfg);
    Tensor<T> forward(const Tensor<T>& x, const NormSettings& ns, bool training);
};

#define YPOSE_EXTERN_BLOCKS(T)            \
    extern template class ParamStore<T>;  \
    extern template class ParamInit<T>;   \
    extern template struct BatchNormParams<T>; \
    extern template struct ConvBnAct<T>;  \
    extern template struct SqueezeExcite<T>; \
    extern template struct MBConvBlock<T>; \
    extern template struct RefinementUnit<T>;

YPOSE_EXTERN_BLOCKS(float)
YPOSE_EXTERN_BLOCKS(double)
#undef YPOSE_EXTERN_BLOCKS

}  // namespace ypose
