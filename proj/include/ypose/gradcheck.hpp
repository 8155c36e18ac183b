#pragma once

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "ypose/ops.hpp"
#include "ypose/tensor.hpp"

namespace ypose {

/// Central-difference verification of reverse-mode gradients. `loss_fn` must
/// deterministically recompute a scalar loss from the current parameter
/// values (seed any dropout inside it). Always run this with T = double.
/// Returns the max relative error with denominator max(|analytic|, |numeric|,
/// 1e-8).
template <typename T, typename LossFn>
T grad_check(LossFn&& loss_fn, std::vector<Tensor<T>> params, T step = T(1e-5)) {
    static_assert(std::is_same_v<T, double>,
                  "grad_check runs in double precision (PrecisionMode::kDouble)");
    for (auto& p : params) p.zero_grad();
    backward(loss_fn());

    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    T max_rel = T(0);
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T saved = values[i];
            values[i] = saved + step;
            const T up = loss_fn().item();
            values[i] = saved - step;
            const T down = loss_fn().item();
            values[i] = saved;
            const T numeric = (up - down) / (T(2) * step);
            const T a = analytic[k][i];
            const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace ypose
