#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ypose/image.hpp"
#include "ypose/tensor.hpp"

namespace ypose {

inline constexpr int kRefinedSize = 224;

enum class RoiSource { kExternal, kHeuristic, kNone };
enum class Provenance { kCropped, kBypassSynthetic, kFallbackFull };

/// Person region for one image. Box is pixel coordinates, inclusive-exclusive.
struct RoiAnnotation {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    std::optional<GrayImage> mask;  // nonzero = foreground, image-sized
    double confidence = 0.0;
    RoiSource source = RoiSource::kNone;

    void validate(int width, int height) const;
};

struct RefinedImage {
    Tensor<float> pixels;  // [3, 224, 224], 0..255 scale
    Provenance provenance = Provenance::kFallbackFull;
};

/// Sidecar annotation for `image.ppm` lives in `image.ppm.roi` (one line:
/// x0 y0 x1 y1 confidence) with an optional binary mask in
/// `image.ppm.mask.pgm`.
std::optional<RoiAnnotation> load_sidecar(const std::filesystem::path& image_path, int width,
                                          int height);

/// Background-subtraction segmenter: estimates the background color from the
/// median of border pixels, Otsu-thresholds the color-distance image, keeps
/// the largest 4-connected foreground component, and returns its mask plus the
/// component box expanded by a 5% margin (2.5% per side, clamped). Components
/// under 1% of the image come back as source none.
RoiAnnotation heuristic_segment(const Image& img);

/// External sidecar if present, otherwise the heuristic.
RoiAnnotation segment_person(const Image& img, const std::filesystem::path& image_path = {});

/// Synthetic images and missing annotations use the whole frame; otherwise the
/// annotation box is cropped. Either way the result is a bilinear 224x224
/// resample without aspect preservation.
RefinedImage refine_image(const Image& img, const RoiAnnotation& annotation, bool synthetic);

double bbox_iou(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1);

}  // namespace ypose
