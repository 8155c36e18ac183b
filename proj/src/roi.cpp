#include "ypose/roi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ypose {

void RoiAnnotation::validate(int width, int height) const {
    if (!(0 <= x0 && x0 < x1 && x1 <= width) || !(0 <= y0 && y0 < y1 && y1 <= height)) {
        throw std::invalid_argument("roi: box (" + std::to_string(x0) + "," + std::to_string(y0) +
                                    "," + std::to_string(x1) + "," + std::to_string(y1) +
                                    ") outside " + std::to_string(width) + "x" +
                                    std::to_string(height));
    }
    if (confidence < 0.0 || confidence > 1.0) {
        throw std::invalid_argument("roi: confidence must be in [0,1]");
    }
    if (mask && (mask->width != width || mask->height != height)) {
        throw std::invalid_argument("roi: mask is " + std::to_string(mask->width) + "x" +
                                    std::to_string(mask->height) + ", image is " +
                                    std::to_string(width) + "x" + std::to_string(height));
    }
}

std::optional<RoiAnnotation> load_sidecar(const std::filesystem::path& image_path, int width,
                                          int height) {
    const auto roi_path = std::filesystem::path(image_path.string() + ".roi");
    std::ifstream in(roi_path);
    if (!in) return std::nullopt;
    RoiAnnotation ann;
    if (!(in >> ann.x0 >> ann.y0 >> ann.x1 >> ann.y1 >> ann.confidence)) {
        throw std::runtime_error("roi: malformed sidecar " + roi_path.string() +
                                 " (expected 'x0 y0 x1 y1 confidence')");
    }
    ann.source = RoiSource::kExternal;
    const auto mask_path = std::filesystem::path(image_path.string() + ".mask.pgm");
    if (std::filesystem::exists(mask_path)) ann.mask = read_pgm(mask_path);
    ann.validate(width, height);
    return ann;
}

namespace {

std::array<std::uint8_t, 3> border_median_color(const Image& img) {
    std::array<std::vector<std::uint8_t>, 3> samples;
    auto take = [&](int y, int x) {
        for (int c = 0; c < 3; ++c) samples[c].push_back(img.at(y, x, c));
    };
    for (int x = 0; x < img.width; ++x) {
        take(0, x);
        take(img.height - 1, x);
    }
    for (int y = 1; y + 1 < img.height; ++y) {
        take(y, 0);
        take(y, img.width - 1);
    }
    std::array<std::uint8_t, 3> median{};
    for (int c = 0; c < 3; ++c) {
        auto& s = samples[c];
        std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
        median[c] = s[s.size() / 2];
    }
    return median;
}

// Otsu threshold index over a 256-bin histogram; foreground is > threshold.
int otsu_threshold(const std::vector<std::size_t>& hist, std::size_t total) {
    double sum = 0.0;
    for (int i = 0; i < 256; ++i) sum += static_cast<double>(i) * hist[i];
    double sum_b = 0.0;
    std::size_t w_b = 0;
    double best_var = -1.0;
    int best_t = 0;
    for (int t = 0; t < 256; ++t) {
        w_b += hist[t];
        if (w_b == 0) continue;
        const std::size_t w_f = total - w_b;
        if (w_f == 0) break;
        sum_b += static_cast<double>(t) * hist[t];
        const double m_b = sum_b / w_b;
        const double m_f = (sum - sum_b) / w_f;
        const double var =
            static_cast<double>(w_b) * static_cast<double>(w_f) * (m_b - m_f) * (m_b - m_f);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return best_t;
}

}  // namespace

RoiAnnotation heuristic_segment(const Image& img) {
    if (img.width < 2 || img.height < 2) {
        throw std::invalid_argument("roi: image too small to segment");
    }
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    const auto bg = border_median_color(img);

    std::vector<float> dist(n);
    float dmax = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        float acc = 0.0f;
        for (int c = 0; c < 3; ++c) {
            const float d = static_cast<float>(img.pixels[i * 3 + c]) - bg[c];
            acc += d * d;
        }
        dist[i] = std::sqrt(acc);
        dmax = std::max(dmax, dist[i]);
    }
    RoiAnnotation none;
    if (dmax <= 0.0f) return none;  // uniform image, no foreground

    std::vector<std::size_t> hist(256, 0);
    std::vector<std::uint8_t> level(n);
    for (std::size_t i = 0; i < n; ++i) {
        level[i] = static_cast<std::uint8_t>(std::min(255.0f, dist[i] / dmax * 255.0f));
        ++hist[level[i]];
    }
    const int threshold = otsu_threshold(hist, n);

    std::vector<std::uint8_t> fg(n);
    for (std::size_t i = 0; i < n; ++i) fg[i] = level[i] > threshold;

    // largest 4-connected component by flood fill
    std::vector<std::int32_t> label(n, -1);
    std::vector<std::size_t> stack;
    std::int32_t best_label = -1;
    std::size_t best_area = 0;
    std::int32_t next_label = 0;
    for (std::size_t start = 0; start < n; ++start) {
        if (!fg[start] || label[start] >= 0) continue;
        std::size_t area = 0;
        stack.push_back(start);
        label[start] = next_label;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++area;
            const int y = static_cast<int>(p) / img.width;
            const int x = static_cast<int>(p) % img.width;
            const std::array<std::pair<int, int>, 4> nbrs{
                {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
            for (const auto& [ny, nx] : nbrs) {
                if (ny < 0 || ny >= img.height || nx < 0 || nx >= img.width) continue;
                const std::size_t q = static_cast<std::size_t>(ny) * img.width + nx;
                if (fg[q] && label[q] < 0) {
                    label[q] = next_label;
                    stack.push_back(q);
                }
            }
        }
        if (area > best_area) {
            best_area = area;
            best_label = next_label;
        }
        ++next_label;
    }
    if (best_area < n / 100 || best_label < 0) return none;  // under 1% of the image

    int bx0 = img.width, by0 = img.height, bx1 = 0, by1 = 0;
    GrayImage mask;
    mask.width = img.width;
    mask.height = img.height;
    mask.pixels.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != best_label) continue;
        mask.pixels[i] = 255;
        const int y = static_cast<int>(i) / img.width;
        const int x = static_cast<int>(i) % img.width;
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x + 1);
        by1 = std::max(by1, y + 1);
    }

    // 5% margin in total per dimension (2.5% per side, floored so the box
    // never grows beyond that)
    const int mx = static_cast<int>(0.025 * (bx1 - bx0));
    const int my = static_cast<int>(0.025 * (by1 - by0));
    RoiAnnotation ann;
    ann.x0 = std::max(0, bx0 - mx);
    ann.y0 = std::max(0, by0 - my);
    ann.x1 = std::min(img.width, bx1 + mx);
    ann.y1 = std::min(img.height, by1 + my);
    ann.mask = std::move(mask);
    const double box_area = static_cast<double>(ann.x1 - ann.x0) * (ann.y1 - ann.y0);
    ann.confidence = std::min(1.0, static_cast<double>(best_area) / box_area);
    ann.source = RoiSource::kHeuristic;
    ann.validate(img.width, img.height);
    return ann;
}

RoiAnnotation segment_person(const Image& img, const std::filesystem::path& image_path) {
    if (!image_path.empty()) {
        if (auto sidecar = load_sidecar(image_path, img.width, img.height)) return *sidecar;
    }
    return heuristic_segment(img);
}

RefinedImage refine_image(const Image& img, const RoiAnnotation& annotation, bool synthetic) {
    RefinedImage out;
    int x0 = 0, y0 = 0, x1 = img.width, y1 = img.height;
    if (synthetic) {
        out.provenance = Provenance::kBypassSynthetic;
    } else if (annotation.source == RoiSource::kNone) {
        out.provenance = Provenance::kFallbackFull;
    } else {
        annotation.validate(img.width, img.height);
        x0 = annotation.x0;
        y0 = annotation.y0;
        x1 = annotation.x1;
        y1 = annotation.y1;
        out.provenance = Provenance::kCropped;
    }
    auto pixels = crop_resize_chw(img, x0, y0, x1, y1, kRefinedSize);
    out.pixels =
        Tensor<float>::from_data({3, kRefinedSize, kRefinedSize}, std::move(pixels));
    return out;
}

double bbox_iou(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1) {
    const int ix0 = std::max(ax0, bx0), iy0 = std::max(ay0, by0);
    const int ix1 = std::min(ax1, bx1), iy1 = std::min(ay1, by1);
    const double inter =
        std::max(0, ix1 - ix0) * static_cast<double>(std::max(0, iy1 - iy0));
    const double area_a = static_cast<double>(ax1 - ax0) * (ay1 - ay0);
    const double area_b = static_cast<double>(bx1 - bx0) * (by1 - by0);
    const double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace ypose
