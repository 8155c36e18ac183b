#include "ypose/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ypose/image.hpp"

namespace ypose {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

struct Rng {
    std::uint64_t state;
    std::uint64_t bits() { return state = mix64(state); }
    int range(int lo, int hi) {  // [lo, hi)
        return lo + static_cast<int>(bits() % static_cast<std::uint64_t>(hi - lo));
    }
    double uniform() { return static_cast<double>(bits() >> 11) * (1.0 / 9007199254740992.0); }
};

std::array<std::uint8_t, 3> class_color(int cls, int total) {
    // evenly spaced hues, fixed saturation/value
    const double h = 360.0 * cls / std::max(1, total);
    const double s = 0.85, v = 0.85;
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (h < 60) { r = c; g = x; }
    else if (h < 120) { r = x; g = c; }
    else if (h < 180) { g = c; b = x; }
    else if (h < 240) { g = x; b = c; }
    else if (h < 300) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return {static_cast<std::uint8_t>((r + m) * 255), static_cast<std::uint8_t>((g + m) * 255),
            static_cast<std::uint8_t>((b + m) * 255)};
}

}  // namespace

ToyCorpus generate_toy_corpus(const std::filesystem::path& out_dir,
                              const ToyCorpusOptions& opt) {
    if (opt.fine_classes < 1 || opt.mid_classes < 1 || opt.coarse_classes < 1 ||
        opt.fine_classes < opt.mid_classes || opt.mid_classes < opt.coarse_classes) {
        throw std::invalid_argument("toy corpus: need fine >= mid >= coarse >= 1 classes");
    }
    if (opt.images_per_class < 1 || opt.width < 32 || opt.height < 32) {
        throw std::invalid_argument("toy corpus: bad image count or size");
    }
    std::filesystem::create_directories(out_dir / "images");

    ToyCorpus corpus;
    corpus.hierarchy_csv = out_dir / "hierarchy.csv";
    corpus.manifest_csv = out_dir / "manifest.csv";
    corpus.truth_csv = out_dir / "truth_boxes.csv";

    auto mid_of = [&](int fine) { return fine * opt.mid_classes / opt.fine_classes; };
    auto coarse_of = [&](int mid) { return mid * opt.coarse_classes / opt.mid_classes; };
    auto fine_name = [](int i) { return "pose_" + std::to_string(i); };
    auto mid_name = [](int i) { return "group_" + std::to_string(i); };
    auto coarse_name = [](int i) { return "family_" + std::to_string(i); };

    {
        std::ofstream h(corpus.hierarchy_csv);
        if (!h) throw std::runtime_error("toy corpus: cannot write " + corpus.hierarchy_csv.string());
        h << "class82,class20,class6\n";
        for (int f = 0; f < opt.fine_classes; ++f) {
            h << fine_name(f) << "," << mid_name(mid_of(f)) << ","
              << coarse_name(coarse_of(mid_of(f))) << "\n";
        }
    }

    std::ofstream manifest(corpus.manifest_csv);
    std::ofstream truth(corpus.truth_csv);
    if (!manifest || !truth) {
        throw std::runtime_error("toy corpus: cannot write manifest/truth files");
    }
    manifest << "path,label6,label20,label82,synthetic\n";
    truth << "path,x0,y0,x1,y1\n";

    const int synthetic_per_class = static_cast<int>(
        std::floor(opt.synthetic_fraction * opt.images_per_class + 0.5));

    for (int f = 0; f < opt.fine_classes; ++f) {
        const auto color = class_color(f, opt.fine_classes);
        for (int k = 0; k < opt.images_per_class; ++k) {
            Rng rng{mix64(opt.seed) ^ mix64(static_cast<std::uint64_t>(f) * 1009 + k + 1)};
            Image img;
            img.width = opt.width;
            img.height = opt.height;
            const std::uint8_t bg_r = static_cast<std::uint8_t>(rng.range(96, 176));
            const std::uint8_t bg_g = static_cast<std::uint8_t>(rng.range(96, 176));
            const std::uint8_t bg_b = static_cast<std::uint8_t>(rng.range(96, 176));
            img.pixels.resize(static_cast<std::size_t>(opt.width) * opt.height * 3);
            for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
                img.pixels[i] = bg_r;
                img.pixels[i + 1] = bg_g;
                img.pixels[i + 2] = bg_b;
            }

            const int bw = rng.range(opt.width / 5, opt.width / 2);
            const int bh = rng.range(opt.height / 5, opt.height / 2);
            const int x0 = rng.range(1, opt.width - bw - 1);
            const int y0 = rng.range(1, opt.height - bh - 1);
            const bool ellipse = rng.bits() & 1;

            int tx0 = opt.width, ty0 = opt.height, tx1 = 0, ty1 = 0;
            const double cx = x0 + bw / 2.0, cy = y0 + bh / 2.0;
            const double rx = bw / 2.0, ry = bh / 2.0;
            for (int y = y0; y < y0 + bh; ++y) {
                for (int x = x0; x < x0 + bw; ++x) {
                    if (ellipse) {
                        const double dx = (x + 0.5 - cx) / rx;
                        const double dy = (y + 0.5 - cy) / ry;
                        if (dx * dx + dy * dy > 1.0) continue;
                    }
                    img.at(y, x, 0) = color[0];
                    img.at(y, x, 1) = color[1];
                    img.at(y, x, 2) = color[2];
                    tx0 = std::min(tx0, x);
                    ty0 = std::min(ty0, y);
                    tx1 = std::max(tx1, x + 1);
                    ty1 = std::max(ty1, y + 1);
                }
            }

            std::ostringstream name;
            name << "images/cls" << f << "_img" << k << ".ppm";
            write_ppm(out_dir / name.str(), img);
            const bool synthetic = k < synthetic_per_class;
            const int mid = mid_of(f);
            manifest << name.str() << "," << coarse_name(coarse_of(mid)) << "," << mid_name(mid)
                     << "," << fine_name(f) << "," << (synthetic ? 1 : 0) << "\n";
            truth << name.str() << "," << tx0 << "," << ty0 << "," << tx1 << "," << ty1 << "\n";
            ++corpus.num_images;
        }
    }
    return corpus;
}

std::vector<TruthBox> load_truth_boxes(const std::filesystem::path& truth_csv) {
    std::ifstream in(truth_csv);
    if (!in) throw std::runtime_error("cannot open truth file: " + truth_csv.string());
    std::vector<TruthBox> boxes;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        TruthBox box;
        std::istringstream row(line);
        std::string field;
        std::getline(row, box.path, ',');
        std::getline(row, field, ',');
        box.x0 = std::stoi(field);
        std::getline(row, field, ',');
        box.y0 = std::stoi(field);
        std::getline(row, field, ',');
        box.x1 = std::stoi(field);
        std::getline(row, field, ',');
        box.y1 = std::stoi(field);
        boxes.push_back(std::move(box));
    }
    return boxes;
}

}  // namespace ypose
