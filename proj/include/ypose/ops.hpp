#pragma once

#include <cstdint>
#include <vector>

#include "ypose/tensor.hpp"

namespace ypose {

enum class Padding { kSame, kValid };

/// 2-D cross-correlation (no kernel flip), NCHW.
///   input  [N, Cin, H, W]
///   weight [Cout, Cin/groups, kH, kW]
///   bias   [Cout] or an undefined tensor for none
/// Same padding follows the ceil(H/stride) output rule with the extra pixel on
/// the bottom/right when the total is odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, Padding padding, int groups = 1);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, Padding padding,
                 int groups = 1) {
    return conv2d(input, weight, Tensor<T>{}, stride, padding, groups);
}

/// Per-channel batch normalization over (N,H,W). Training mode normalizes by
/// batch statistics (biased variance) and updates running stats in place:
/// running = momentum*running + (1-momentum)*batch. Eval mode uses running
/// stats only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, T eps, T momentum,
                     bool training);

/// x * sigmoid(beta * x), elementwise. beta is a fixed constant (1.0
/// throughout this project), not a trained parameter.
template <typename T>
Tensor<T> swish(const Tensor<T>& x, T beta = T(1));

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Row-wise softmax of [N, C] logits, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// y = x W^T + b with x [N, M], w [C, M], b [C].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// [N, C, H, W] -> [N, C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Concatenates along the channel axis, preserving input order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

/// Training mode: zero each element with probability rate and scale survivors
/// by 1/(1-rate), mask derived from the seed. Eval mode: identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, bool training, std::uint64_t seed);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x [N, C, H, W] scaled per channel by gate [N, C] (squeeze-excite gating).
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Sum of all elements, as a shape-{1} scalar.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);

/// mean over rows of -log(probs[n, targets[n]]), log clamped at 1e-12.
template <typename T>
Tensor<T> nll_from_probs(const Tensor<T>& probs, const std::vector<int>& targets);

#define YPOSE_EXTERN_OPS(T)                                                                       \
    extern template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        int, Padding, int);                                      \
    extern template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,\
                                            Tensor<T>&, Tensor<T>&, T, T, bool);                 \
    extern template Tensor<T> swish<T>(const Tensor<T>&, T);                                     \
    extern template Tensor<T> sigmoid<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> softmax<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> fully_connected<T>(const Tensor<T>&, const Tensor<T>&,             \
                                                 const Tensor<T>&);                              \
    extern template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                              \
    extern template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                 \
    extern template Tensor<T> dropout<T>(const Tensor<T>&, T, bool, std::uint64_t);              \
    extern template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                        \
    extern template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                        \
    extern template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);             \
    extern template Tensor<T> scale<T>(const Tensor<T>&, T);                                     \
    extern template Tensor<T> sum_all<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> nll_from_probs<T>(const Tensor<T>&, const std::vector<int>&);

YPOSE_EXTERN_OPS(float)
YPOSE_EXTERN_OPS(double)
#undef YPOSE_EXTERN_OPS

}  // namespace ypose
