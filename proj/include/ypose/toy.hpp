#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ypose {

/// Synthetic blob corpus: one solid-color shape per image on a muted solid
/// background, shape color keyed to the fine class so small models can learn
/// it. Lets every command run without the real dataset.
struct ToyCorpusOptions {
    int fine_classes = 8;
    int mid_classes = 4;
    int coarse_classes = 2;
    int images_per_class = 8;
    int width = 128;
    int height = 96;
    double synthetic_fraction = 0.0;  // leading fraction of each class flagged synthetic
    std::uint64_t seed = 1;
};

struct ToyCorpus {
    std::filesystem::path manifest_csv;
    std::filesystem::path hierarchy_csv;
    std::filesystem::path truth_csv;  // path,x0,y0,x1,y1 of each drawn blob
    int num_images = 0;
};

ToyCorpus generate_toy_corpus(const std::filesystem::path& out_dir,
                              const ToyCorpusOptions& options);

struct TruthBox {
    std::string path;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

std::vector<TruthBox> load_truth_boxes(const std::filesystem::path& truth_csv);

}  // namespace ypose
