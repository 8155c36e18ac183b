#include "ypose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ypose/image.hpp"

namespace ypose {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

std::string strip(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

void deterministic_shuffle(std::vector<std::size_t>& items, std::uint64_t seed) {
    std::uint64_t state = seed;
    for (std::size_t i = items.size(); i > 1; --i) {
        state = mix64(state);
        const std::size_t j = state % i;
        std::swap(items[i - 1], items[j]);
    }
}

// ---------------------------------------------------------------------------
// LabelHierarchy
// ---------------------------------------------------------------------------

int LabelHierarchy::level_classes(int level) const {
    switch (level) {
        case 0: return num_coarse();
        case 1: return num_mid();
        case 2: return num_fine();
    }
    throw std::invalid_argument("hierarchy: level must be 0, 1, or 2");
}

std::optional<int> LabelHierarchy::fine_index(const std::string& name) const {
    for (std::size_t i = 0; i < fine_names.size(); ++i) {
        if (fine_names[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
}

LabelHierarchy LabelHierarchy::load(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open hierarchy file: " + csv_path.string());
    LabelHierarchy h;
    std::map<std::string, int> mid_index, coarse_index;
    std::unordered_set<std::string> seen_fine;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip(line);
        if (line.empty()) continue;
        if (line_no == 1) {
            if (split_csv_line(line).size() != 3) {
                throw std::runtime_error("hierarchy: expected header 'class82,class20,class6'");
            }
            continue;
        }
        auto fields = split_csv_line(line);
        if (fields.size() != 3) {
            throw std::runtime_error("hierarchy line " + std::to_string(line_no) +
                                     ": expected 3 columns, got " +
                                     std::to_string(fields.size()));
        }
        const std::string fine = strip(fields[0]);
        const std::string mid = strip(fields[1]);
        const std::string coarse = strip(fields[2]);
        if (fine.empty() || mid.empty() || coarse.empty()) {
            throw std::runtime_error("hierarchy line " + std::to_string(line_no) +
                                     ": empty class name");
        }
        if (!seen_fine.insert(fine).second) {
            throw std::runtime_error("hierarchy line " + std::to_string(line_no) +
                                     ": duplicate fine class '" + fine + "'");
        }
        int coarse_id;
        if (auto it = coarse_index.find(coarse); it != coarse_index.end()) {
            coarse_id = it->second;
        } else {
            coarse_id = static_cast<int>(h.coarse_names.size());
            coarse_index[coarse] = coarse_id;
            h.coarse_names.push_back(coarse);
        }
        int mid_id;
        if (auto it = mid_index.find(mid); it != mid_index.end()) {
            mid_id = it->second;
            if (h.mid_to_coarse[mid_id] != coarse_id) {
                throw std::runtime_error("hierarchy line " + std::to_string(line_no) +
                                         ": mid class '" + mid +
                                         "' maps to two different coarse classes");
            }
        } else {
            mid_id = static_cast<int>(h.mid_names.size());
            mid_index[mid] = mid_id;
            h.mid_names.push_back(mid);
            h.mid_to_coarse.push_back(coarse_id);
        }
        h.fine_names.push_back(fine);
        h.fine_to_mid.push_back(mid_id);
    }
    if (h.fine_names.empty()) throw std::runtime_error("hierarchy: no classes defined");
    if (!(h.num_fine() >= h.num_mid() && h.num_mid() >= h.num_coarse())) {
        throw std::runtime_error("hierarchy: expected fine >= mid >= coarse cardinalities");
    }
    return h;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

std::vector<std::size_t> DatasetManifest::split_indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) out.push_back(i);
    }
    return out;
}

std::filesystem::path DatasetManifest::image_path(std::size_t record) const {
    return base_dir / records[record].path;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_csv,
                              const std::filesystem::path& hierarchy_csv) {
    DatasetManifest m;
    m.hierarchy = LabelHierarchy::load(hierarchy_csv);
    m.base_dir = manifest_csv.parent_path();

    std::ifstream in(manifest_csv);
    if (!in) throw std::runtime_error("cannot open manifest file: " + manifest_csv.string());
    std::unordered_set<std::string> seen_paths;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip(line);
        if (line.empty()) continue;
        if (line_no == 1) {
            auto header = split_csv_line(line);
            if (header.size() != 5 || strip(header[0]) != "path") {
                throw std::runtime_error(
                    "manifest: expected header 'path,label6,label20,label82,synthetic'");
            }
            continue;
        }
        auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 5 columns, got " +
                                     std::to_string(fields.size()));
        }
        ManifestRecord rec;
        rec.path = strip(fields[0]);
        const std::string coarse = strip(fields[1]);
        const std::string mid = strip(fields[2]);
        const std::string fine = strip(fields[3]);
        const std::string synthetic = strip(fields[4]);

        if (rec.path.empty()) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": empty path");
        }
        if (!seen_paths.insert(rec.path).second) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": duplicate path '" + rec.path + "'");
        }
        const auto fine_id = m.hierarchy.fine_index(fine);
        if (!fine_id) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": unknown fine class '" + fine + "'");
        }
        rec.fine = *fine_id;
        rec.mid = m.hierarchy.fine_to_mid[rec.fine];
        rec.coarse = m.hierarchy.mid_to_coarse[rec.mid];
        if (m.hierarchy.mid_names[rec.mid] != mid) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": fine class '" +
                                     fine + "' belongs to '" + m.hierarchy.mid_names[rec.mid] +
                                     "' but the row says '" + mid + "'");
        }
        if (m.hierarchy.coarse_names[rec.coarse] != coarse) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": fine class '" +
                                     fine + "' belongs to '" +
                                     m.hierarchy.coarse_names[rec.coarse] +
                                     "' but the row says '" + coarse + "'");
        }
        if (synthetic == "1" || synthetic == "true") {
            rec.synthetic = true;
        } else if (synthetic == "0" || synthetic == "false") {
            rec.synthetic = false;
        } else {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": synthetic flag must be 0/1/true/false, got '" + synthetic +
                                     "'");
        }
        if (!std::filesystem::exists(m.base_dir / rec.path)) {
            m.warnings.push_back("missing image file: " + rec.path);
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

void split_dataset(DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split: ratios must be non-negative and sum to 1");
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        by_class[manifest.records[i].fine].push_back(i);
    }
    for (auto& [cls, indices] : by_class) {
        const std::size_t n = indices.size();
        if (n < 3) {
            for (auto i : indices) manifest.records[i].split = Split::kTrain;
            manifest.warnings.push_back("class '" + manifest.hierarchy.fine_names[cls] +
                                        "' has only " + std::to_string(n) +
                                        " images; all assigned to train");
            continue;
        }
        deterministic_shuffle(indices, mix64(seed) ^ mix64(static_cast<std::uint64_t>(cls) + 1));
        std::size_t n_val = static_cast<std::size_t>(std::floor(n * ratios.val + 0.5));
        std::size_t n_test = static_cast<std::size_t>(std::floor(n * ratios.test + 0.5));
        if (ratios.test > 0 && n >= 8 && n_test == 0) n_test = 1;
        while (n_val + n_test >= n) {  // keep at least one training sample
            if (n_val > 0) --n_val;
            else --n_test;
        }
        const std::size_t n_train = n - n_val - n_test;
        for (std::size_t k = 0; k < n; ++k) {
            Split s = k < n_train             ? Split::kTrain
                      : k < n_train + n_val   ? Split::kVal
                                              : Split::kTest;
            manifest.records[indices[k]].split = s;
        }
    }
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

RefinedImage DataPipeline::refine_record(std::size_t index) const {
    const auto& rec = manifest_->records.at(index);
    const auto path = manifest_->image_path(index);
    const Image img = read_image(path);
    RoiAnnotation ann;  // source none: whole frame
    if (options_.roi_enabled && !rec.synthetic) ann = segment_person(img, path);
    return refine_image(img, ann, rec.synthetic);
}

Tensor<float> to_model_input(const RefinedImage& refined, const PipelineOptions& options) {
    const int s = options.input_size;
    std::vector<float> chw;
    if (s == kRefinedSize) {
        chw.assign(refined.pixels.data().begin(), refined.pixels.data().end());
    } else {
        chw.resize(3ull * s * s);
        for (int c = 0; c < 3; ++c) {
            auto plane = resize_plane(
                refined.pixels.data().data() + static_cast<std::size_t>(c) * kRefinedSize *
                                                   kRefinedSize,
                kRefinedSize, kRefinedSize, s, s);
            std::copy(plane.begin(), plane.end(), chw.begin() + static_cast<std::size_t>(c) * s * s);
        }
    }
    for (int c = 0; c < 3; ++c) {
        float* plane = chw.data() + static_cast<std::size_t>(c) * s * s;
        for (int p = 0; p < s * s; ++p) {
            plane[p] = (plane[p] / 255.0f - options.mean[c]) / options.stddev[c];
        }
    }
    return Tensor<float>::from_data({3, s, s}, std::move(chw));
}

Tensor<float> DataPipeline::load_record(std::size_t index) const {
    if (auto it = cache_.find(index); it != cache_.end()) return it->second;
    auto tensor = to_model_input(refine_record(index), options_);
    const std::size_t bytes = tensor.numel() * sizeof(float);
    if (cached_bytes_ + bytes <= kCacheBudgetBytes) {
        cache_.emplace(index, tensor);
        cached_bytes_ += bytes;
    }
    return tensor;
}

BatchStream::BatchStream(const DataPipeline& pipeline, Split split, int batch_size,
                         std::uint64_t seed, int epoch)
    : pipeline_(&pipeline), batch_size_(batch_size) {
    if (batch_size < 1) throw std::invalid_argument("batches: batch size must be >= 1");
    order_ = pipeline.manifest().split_indices(split);
    deterministic_shuffle(order_, mix64(seed) ^ mix64(static_cast<std::uint64_t>(epoch) + 0x51ed));
}

std::optional<Batch> BatchStream::next() {
    const int s = pipeline_->options().input_size;
    std::vector<Tensor<float>> images;
    Batch batch;
    while (cursor_ < order_.size() && static_cast<int>(images.size()) < batch_size_) {
        const std::size_t idx = order_[cursor_++];
        try {
            images.push_back(pipeline_->load_record(idx));
        } catch (const std::exception& e) {
            warnings_.push_back("skipping record '" +
                                pipeline_->manifest().records[idx].path + "': " + e.what());
            continue;
        }
        const auto& rec = pipeline_->manifest().records[idx];
        batch.labels[0].push_back(rec.coarse);
        batch.labels[1].push_back(rec.mid);
        batch.labels[2].push_back(rec.fine);
        batch.record_indices.push_back(idx);
    }
    if (images.empty()) return std::nullopt;

    const int b = static_cast<int>(images.size());
    std::vector<float> data(static_cast<std::size_t>(b) * 3 * s * s);
    for (int i = 0; i < b; ++i) {
        std::copy(images[i].data().begin(), images[i].data().end(),
                  data.begin() + static_cast<std::size_t>(i) * 3 * s * s);
    }
    batch.images = Tensor<float>::from_data({b, 3, s, s}, std::move(data));
    return batch;
}

}  // namespace ypose
