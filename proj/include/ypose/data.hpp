#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ypose/roi.hpp"
#include "ypose/tensor.hpp"

namespace ypose {

/// Three-level class tree loaded from a CSV of `class82,class20,class6` name
/// rows (one row per finest class; coarser names repeat). Indices follow first
/// appearance. Real data has 82/20/6 classes; toy corpora may use any
/// cardinalities as long as fine >= mid >= coarse.
struct LabelHierarchy {
    std::vector<std::string> fine_names, mid_names, coarse_names;
    std::vector<int> fine_to_mid;
    std::vector<int> mid_to_coarse;

    int num_fine() const { return static_cast<int>(fine_names.size()); }
    int num_mid() const { return static_cast<int>(mid_names.size()); }
    int num_coarse() const { return static_cast<int>(coarse_names.size()); }
    int level_classes(int level) const;  // 0 coarse, 1 mid, 2 fine
    std::optional<int> fine_index(const std::string& name) const;

    static LabelHierarchy load(const std::filesystem::path& csv_path);
};

enum class Split : int { kTrain = 0, kVal = 1, kTest = 2 };

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory
    int coarse = -1, mid = -1, fine = -1;
    bool synthetic = false;
    Split split = Split::kTrain;
};

struct DatasetManifest {
    LabelHierarchy hierarchy;
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;
    std::vector<std::string> warnings;

    std::vector<std::size_t> split_indices(Split split) const;
    std::filesystem::path image_path(std::size_t record) const;
};

/// Manifest CSV: header `path,label6,label20,label82,synthetic`, labels by
/// name. Every row is validated against the hierarchy (a fine label whose
/// parents disagree with the row is an error); duplicate paths are errors;
/// missing image files are collected as warnings.
DatasetManifest load_manifest(const std::filesystem::path& manifest_csv,
                              const std::filesystem::path& hierarchy_csv);

struct SplitRatios {
    double train = 0.75, val = 0.125, test = 0.125;
};

/// Stratified by fine class, deterministic in the seed. Classes with fewer
/// than 3 images go entirely to train (with a warning); classes with at least
/// 8 images always contribute a test sample when the test ratio is nonzero.
void split_dataset(DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

struct PipelineOptions {
    int input_size = 224;
    bool roi_enabled = true;
    // fixed normalization constants applied after scaling pixels to [0,1]
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

/// Resamples a refined 224x224 image to the model input size and normalizes
/// it: pixels to [0,1], then per-channel standardization.
Tensor<float> to_model_input(const RefinedImage& refined, const PipelineOptions& options);

/// Per-record image pipeline: decode, ROI refine (sidecar/heuristic, with the
/// synthetic bypass), resample to the model input size, normalize. Results
/// are cached per record up to a fixed byte budget, which makes repeated
/// epochs over small corpora cheap without ballooning on large ones.
class DataPipeline {
public:
    static constexpr std::size_t kCacheBudgetBytes = 512u << 20;

    DataPipeline(const DatasetManifest& manifest, const PipelineOptions& options)
        : manifest_(&manifest), options_(options) {}

    Tensor<float> load_record(std::size_t index) const;
    RefinedImage refine_record(std::size_t index) const;  // uncached, 0..255 scale

    const DatasetManifest& manifest() const { return *manifest_; }
    const PipelineOptions& options() const { return options_; }

private:
    const DatasetManifest* manifest_;
    PipelineOptions options_;
    mutable std::unordered_map<std::size_t, Tensor<float>> cache_;
    mutable std::size_t cached_bytes_ = 0;
};

struct Batch {
    Tensor<float> images;                    // [B, 3, S, S]
    std::array<std::vector<int>, 3> labels;  // coarse, mid, fine
    std::vector<std::size_t> record_indices;
};

/// Epoch-seeded shuffled batches over one split; the final short batch is
/// kept. Unreadable images are skipped with a warning, never aborting the
/// epoch.
class BatchStream {
public:
    BatchStream(const DataPipeline& pipeline, Split split, int batch_size, std::uint64_t seed,
                int epoch);

    std::optional<Batch> next();
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    const DataPipeline* pipeline_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int batch_size_;
    std::vector<std::string> warnings_;
};

/// Fisher-Yates with a splitmix-driven index stream; stable across standard
/// library implementations.
void deterministic_shuffle(std::vector<std::size_t>& items, std::uint64_t seed);

}  // namespace ypose
