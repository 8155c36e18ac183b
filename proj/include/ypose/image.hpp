#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ypose {

/// 8-bit RGB image, interleaved row-major (HWC).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width*height*3

    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

/// Single-channel 8-bit image (masks, heatmaps).
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width*height

    std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
};

// Binary netpbm: P6 for RGB, P5 for grayscale. read_image also accepts P5
// (expanded to gray RGB).
Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

/// Bilinear crop-resample of an RGB image into planar CHW floats (values keep
/// the 0..255 scale). Half-pixel centers, edge clamped. The crop rectangle is
/// inclusive-exclusive.
std::vector<float> crop_resize_chw(const Image& img, int x0, int y0, int x1, int y1,
                                   int out_size);

/// Bilinear resample of one float plane.
std::vector<float> resize_plane(const float* src, int h, int w, int out_h, int out_w);

}  // namespace ypose
