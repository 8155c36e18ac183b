#pragma once

// Independent brute-force references used to freeze expected values. These
// deliberately share no code with the library implementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

// Plain seven-loop cross-correlation on NCHW buffers, zero padding given
// explicitly. Output [n][cout][ho][wo].
inline std::vector<double> conv2d_loops(const std::vector<double>& in, int n, int cin, int h,
                                        int w, const std::vector<double>& weight, int cout, int kh,
                                        int kw, int groups, int stride, int pad_top, int pad_left,
                                        int ho, int wo, const std::vector<double>* bias = nullptr) {
    const int cg = cin / groups;
    const int og = cout / groups;
    std::vector<double> out(static_cast<std::size_t>(n) * cout * ho * wo, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int oc = 0; oc < cout; ++oc) {
            const int g = oc / og;
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow) {
                    double acc = bias ? (*bias)[oc] : 0.0;
                    for (int ic = 0; ic < cg; ++ic) {
                        const int c = g * cg + ic;
                        for (int ki = 0; ki < kh; ++ki) {
                            const int ih = oh * stride + ki - pad_top;
                            if (ih < 0 || ih >= h) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int iw = ow * stride + kj - pad_left;
                                if (iw < 0 || iw >= w) continue;
                                acc += in[((static_cast<std::size_t>(i) * cin + c) * h + ih) * w +
                                          iw] *
                                       weight[((static_cast<std::size_t>(oc) * cg + ic) * kh + ki) *
                                                  kw +
                                              kj];
                            }
                        }
                    }
                    out[((static_cast<std::size_t>(i) * cout + oc) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    return out;
}

// y[n][c] = sum_m x[n][m] * w[c][m] + b[c], double loop.
inline std::vector<double> matmul_loops(const std::vector<double>& x, int n, int m,
                                        const std::vector<double>& w, int c,
                                        const std::vector<double>& b) {
    std::vector<double> out(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            double acc = b[j];
            for (int k = 0; k < m; ++k) {
                acc += x[static_cast<std::size_t>(i) * m + k] *
                       w[static_cast<std::size_t>(j) * m + k];
            }
            out[static_cast<std::size_t>(i) * c + j] = acc;
        }
    }
    return out;
}

struct ClassScores {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MacroScores {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Macro precision/recall/F1 by direct per-class counting. Zero-denominator
// classes score 0 and still divide into the macro mean.
inline MacroScores macro_prf(const std::vector<int>& predicted, const std::vector<int>& truth,
                             int num_classes) {
    MacroScores macro;
    for (int c = 0; c < num_classes; ++c) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool p = predicted[i] == c;
            const bool t = truth[i] == c;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
        ClassScores s;
        if (tp + fp > 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        if (tp + fn > 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        if (s.precision + s.recall > 0) {
            s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
        }
        macro.precision += s.precision;
        macro.recall += s.recall;
        macro.f1 += s.f1;
    }
    macro.precision /= num_classes;
    macro.recall /= num_classes;
    macro.f1 /= num_classes;
    return macro;
}

// Top-k hit by exhaustive counting: how many classes strictly beat the truth
// class, with ties resolved toward lower class index.
inline bool topk_hit(const std::vector<double>& row, int truth, int k) {
    int better = 0;
    for (int j = 0; j < static_cast<int>(row.size()); ++j) {
        if (j == truth) continue;
        if (row[j] > row[truth] || (row[j] == row[truth] && j < truth)) ++better;
    }
    return better < k;
}

// Separate-code-path bilinear sampler on 8-bit RGB, half-pixel centers.
inline std::vector<double> bilinear_rgb(const std::vector<std::uint8_t>& rgb, int w, int h, int x0,
                                        int y0, int cw, int ch, int out_size) {
    std::vector<double> out(3ull * out_size * out_size);
    const double sx = static_cast<double>(cw) / out_size;
    const double sy = static_cast<double>(ch) / out_size;
    for (int oy = 0; oy < out_size; ++oy) {
        for (int ox = 0; ox < out_size; ++ox) {
            const double fx = (ox + 0.5) * sx - 0.5;
            const double fy = (oy + 0.5) * sy - 0.5;
            const int ix = static_cast<int>(std::floor(fx));
            const int iy = static_cast<int>(std::floor(fy));
            const double ax = fx - ix, ay = fy - iy;
            for (int c = 0; c < 3; ++c) {
                auto tap = [&](int yy, int xx) {
                    yy = std::clamp(yy, 0, ch - 1) + y0;
                    xx = std::clamp(xx, 0, cw - 1) + x0;
                    return static_cast<double>(rgb[(static_cast<std::size_t>(yy) * w + xx) * 3 + c]);
                };
                const double top = tap(iy, ix) * (1 - ax) + tap(iy, ix + 1) * ax;
                const double bot = tap(iy + 1, ix) * (1 - ax) + tap(iy + 1, ix + 1) * ax;
                out[(static_cast<std::size_t>(c) * out_size + oy) * out_size + ox] =
                    top * (1 - ay) + bot * ay;
            }
        }
    }
    return out;
}

inline std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                      double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace oracle
