#include "ypose/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ypose {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        const int c = in.peek();
        if (c == EOF) break;
        if (std::isspace(c)) {
            in.get();
        } else if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in >> tok;
            return tok;
        }
    }
    throw std::runtime_error("netpbm: truncated header");
}

int header_int(std::istream& in, const char* what) {
    const std::string tok = next_token(in);
    try {
        const int v = std::stoi(tok);
        if (v <= 0) throw std::invalid_argument("non-positive");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(std::string("netpbm: bad ") + what + " '" + tok + "'");
    }
}

std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image file: " + path.string());
    return in;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    auto in = open_binary(path);
    const std::string magic = next_token(in);
    if (magic != "P6" && magic != "P5") {
        throw std::runtime_error("unsupported image format '" + magic + "' in " + path.string() +
                                 " (expected binary PPM/PGM)");
    }
    const int w = header_int(in, "width");
    const int h = header_int(in, "height");
    const int maxval = header_int(in, "maxval");
    if (maxval != 255) throw std::runtime_error("netpbm: only maxval 255 supported");
    in.get();  // single whitespace after maxval

    Image img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    if (magic == "P6") {
        in.read(reinterpret_cast<char*>(img.pixels.data()),
                static_cast<std::streamsize>(img.pixels.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
            throw std::runtime_error("netpbm: truncated pixel data in " + path.string());
        }
    } else {
        std::vector<std::uint8_t> gray(static_cast<std::size_t>(w) * h);
        in.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
        if (in.gcount() != static_cast<std::streamsize>(gray.size())) {
            throw std::runtime_error("netpbm: truncated pixel data in " + path.string());
        }
        for (std::size_t i = 0; i < gray.size(); ++i) {
            img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = gray[i];
        }
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image file: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
    auto in = open_binary(path);
    const std::string magic = next_token(in);
    if (magic != "P5") {
        throw std::runtime_error("unsupported mask format '" + magic + "' in " + path.string() +
                                 " (expected binary PGM)");
    }
    const int w = header_int(in, "width");
    const int h = header_int(in, "height");
    const int maxval = header_int(in, "maxval");
    if (maxval != 255) throw std::runtime_error("netpbm: only maxval 255 supported");
    in.get();

    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw std::runtime_error("netpbm: truncated pixel data in " + path.string());
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image file: " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<float> crop_resize_chw(const Image& img, int x0, int y0, int x1, int y1,
                                   int out_size) {
    if (x0 < 0 || y0 < 0 || x1 > img.width || y1 > img.height || x0 >= x1 || y0 >= y1) {
        throw std::invalid_argument("crop_resize: bad rectangle (" + std::to_string(x0) + "," +
                                    std::to_string(y0) + "," + std::to_string(x1) + "," +
                                    std::to_string(y1) + ") for " + std::to_string(img.width) +
                                    "x" + std::to_string(img.height));
    }
    const int cw = x1 - x0, ch = y1 - y0;
    const float sx = static_cast<float>(cw) / out_size;
    const float sy = static_cast<float>(ch) / out_size;
    std::vector<float> out(3ull * out_size * out_size);
    for (int oy = 0; oy < out_size; ++oy) {
        const float fy = (oy + 0.5f) * sy - 0.5f;
        const int iy = static_cast<int>(std::floor(fy));
        const float ay = fy - iy;
        const int y_lo = std::clamp(iy, 0, ch - 1) + y0;
        const int y_hi = std::clamp(iy + 1, 0, ch - 1) + y0;
        for (int ox = 0; ox < out_size; ++ox) {
            const float fx = (ox + 0.5f) * sx - 0.5f;
            const int ix = static_cast<int>(std::floor(fx));
            const float ax = fx - ix;
            const int x_lo = std::clamp(ix, 0, cw - 1) + x0;
            const int x_hi = std::clamp(ix + 1, 0, cw - 1) + x0;
            for (int c = 0; c < 3; ++c) {
                const float top =
                    img.at(y_lo, x_lo, c) * (1.0f - ax) + img.at(y_lo, x_hi, c) * ax;
                const float bot =
                    img.at(y_hi, x_lo, c) * (1.0f - ax) + img.at(y_hi, x_hi, c) * ax;
                out[(static_cast<std::size_t>(c) * out_size + oy) * out_size + ox] =
                    top * (1.0f - ay) + bot * ay;
            }
        }
    }
    return out;
}

std::vector<float> resize_plane(const float* src, int h, int w, int out_h, int out_w) {
    std::vector<float> out(static_cast<std::size_t>(out_h) * out_w);
    const float sx = static_cast<float>(w) / out_w;
    const float sy = static_cast<float>(h) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
        const float fy = (oy + 0.5f) * sy - 0.5f;
        const int iy = static_cast<int>(std::floor(fy));
        const float ay = fy - iy;
        const int y_lo = std::clamp(iy, 0, h - 1);
        const int y_hi = std::clamp(iy + 1, 0, h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const float fx = (ox + 0.5f) * sx - 0.5f;
            const int ix = static_cast<int>(std::floor(fx));
            const float ax = fx - ix;
            const int x_lo = std::clamp(ix, 0, w - 1);
            const int x_hi = std::clamp(ix + 1, 0, w - 1);
            const float top = src[static_cast<std::size_t>(y_lo) * w + x_lo] * (1.0f - ax) +
                              src[static_cast<std::size_t>(y_lo) * w + x_hi] * ax;
            const float bot = src[static_cast<std::size_t>(y_hi) * w + x_lo] * (1.0f - ax) +
                              src[static_cast<std::size_t>(y_hi) * w + x_hi] * ax;
            out[static_cast<std::size_t>(oy) * out_w + ox] = top * (1.0f - ay) + bot * ay;
        }
    }
    return out;
}

}  // namespace ypose
