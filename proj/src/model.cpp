#include "ypose/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ypose/image.hpp"
#include "ypose/ops.hpp"

namespace ypose {

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

void ModelSpec::validate() const {
    backbone_table(backbone);  // throws on unknown name
    if (scaling.width <= 0 || scaling.depth <= 0) {
        throw std::invalid_argument("model spec: width/depth coefficients must be positive");
    }
    if (scaling.depth_divisor < 1 || scaling.min_depth < 1) {
        throw std::invalid_argument("model spec: depth divisor and min depth must be positive");
    }
    if (heads.empty()) throw std::invalid_argument("model spec: needs at least one head");
    for (int h : heads) {
        if (h < 1) throw std::invalid_argument("model spec: head class counts must be positive");
    }
    if (input_size < 32 || input_size % 32 != 0) {
        throw std::invalid_argument("model spec: input size must be a positive multiple of 32, got " +
                                    std::to_string(input_size));
    }
    if (dropout_rate < 0 || dropout_rate >= 1) {
        throw std::invalid_argument("model spec: dropout rate must be in [0,1)");
    }
    if (refinement.num_units < 0) {
        throw std::invalid_argument("model spec: refinement unit count cannot be negative");
    }
    if (refinement.num_units > 0 &&
        (refinement.growth_rate < 1 || refinement.bottleneck_factor < 1)) {
        throw std::invalid_argument("model spec: refinement growth/bottleneck must be positive");
    }
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

std::string ModelSpec::serialize() const {
    std::ostringstream os;
    os << "backbone=" << backbone << "\n";
    os << "width=" << fmt_double(scaling.width) << "\n";
    os << "depth=" << fmt_double(scaling.depth) << "\n";
    os << "depth_divisor=" << scaling.depth_divisor << "\n";
    os << "min_depth=" << scaling.min_depth << "\n";
    os << "refinement_units=" << refinement.num_units << "\n";
    os << "growth_rate=" << refinement.growth_rate << "\n";
    os << "bottleneck_factor=" << refinement.bottleneck_factor << "\n";
    os << "heads=";
    for (std::size_t i = 0; i < heads.size(); ++i) os << (i ? "," : "") << heads[i];
    os << "\n";
    os << "input_size=" << input_size << "\n";
    os << "dropout=" << fmt_double(dropout_rate) << "\n";
    os << "bn_eps=" << fmt_double(norm.eps) << "\n";
    os << "bn_momentum=" << fmt_double(norm.momentum) << "\n";
    return os.str();
}

ModelSpec ModelSpec::deserialize(const std::string& text) {
    ModelSpec spec;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("model spec: bad line '" + line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "backbone") spec.backbone = value;
            else if (key == "width") spec.scaling.width = std::stod(value);
            else if (key == "depth") spec.scaling.depth = std::stod(value);
            else if (key == "depth_divisor") spec.scaling.depth_divisor = std::stoi(value);
            else if (key == "min_depth") spec.scaling.min_depth = std::stoi(value);
            else if (key == "refinement_units") spec.refinement.num_units = std::stoi(value);
            else if (key == "growth_rate") spec.refinement.growth_rate = std::stoi(value);
            else if (key == "bottleneck_factor") spec.refinement.bottleneck_factor = std::stoi(value);
            else if (key == "input_size") spec.input_size = std::stoi(value);
            else if (key == "dropout") spec.dropout_rate = std::stod(value);
            else if (key == "bn_eps") spec.norm.eps = std::stod(value);
            else if (key == "bn_momentum") spec.norm.momentum = std::stod(value);
            else if (key == "heads") {
                spec.heads.clear();
                std::istringstream hs(value);
                std::string tok;
                while (std::getline(hs, tok, ',')) spec.heads.push_back(std::stoi(tok));
            } else {
                throw std::invalid_argument("model spec: unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("model spec: bad value for '" + key + "': " + value);
        }
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    ParamInit<float> init(seed);

    const BackboneTable table = scaled_backbone(backbone_table(spec.backbone), spec.scaling);
    m.stem_filters_ = table.stem_filters;
    m.head_filters_ = table.head_filters;

    m.stem_ = ConvBnAct<float>::create(m.store_, init, "stem", 3, table.stem_filters, 3, 2, 1,
                                       true);
    int channels = table.stem_filters;
    int block_idx = 0;
    for (const auto& stage : table.stages) {
        for (int r = 0; r < stage.repeats; ++r) {
            MBConvConfig cfg;
            cfg.in_channels = channels;
            cfg.out_channels = stage.filters;
            cfg.expansion_ratio = stage.expansion;
            cfg.kernel = stage.kernel;
            cfg.stride = r == 0 ? stage.stride : 1;
            cfg.se_ratio = stage.se_ratio;
            m.blocks_.push_back(MBConvBlock<float>::create(
                m.store_, init, "blocks." + std::to_string(block_idx), cfg));
            m.block_cfgs_.push_back(cfg);
            channels = stage.filters;
            ++block_idx;
        }
    }
    m.head_ = ConvBnAct<float>::create(m.store_, init, "head", channels, table.head_filters, 1, 1,
                                       1, true);
    channels = table.head_filters;
    for (int u = 0; u < spec.refinement.num_units; ++u) {
        m.refine_.push_back(RefinementUnit<float>::create(
            m.store_, init, "refine." + std::to_string(u), channels, spec.refinement));
        channels += spec.refinement.growth_rate;
    }
    m.feature_channels_ = channels;
    for (std::size_t h = 0; h < spec.heads.size(); ++h) {
        const std::string prefix = "heads." + std::to_string(h);
        FcHead head;
        head.weight =
            m.store_.add_param(prefix + ".weight", init.fc_weight(spec.heads[h], channels));
        head.bias =
            m.store_.add_param(prefix + ".bias", Tensor<float>::zeros({spec.heads[h]}, true));
        m.heads_.push_back(std::move(head));
    }
    return m;
}

Tensor<float> Model::trunk_forward(const Tensor<float>& input, bool training) {
    if (!input.defined() || input.rank() != 4 || input.dim(1) != 3) {
        throw std::invalid_argument("model: input must be [N,3,H,W]");
    }
    auto h = stem_.forward(input, spec_.norm, training);
    for (auto& block : blocks_) h = block.forward(h, spec_.norm, training);
    h = head_.forward(h, spec_.norm, training);
    for (auto& unit : refine_) h = unit.forward(h, spec_.norm, training);
    return h;
}

std::vector<Tensor<float>> Model::forward(const Tensor<float>& input, bool training,
                                          std::uint64_t dropout_seed) {
    auto features = trunk_forward(input, training);
    auto pooled = global_avg_pool(features);
    pooled = dropout(pooled, static_cast<float>(spec_.dropout_rate), training, dropout_seed);
    std::vector<Tensor<float>> out;
    out.reserve(heads_.size());
    for (auto& head : heads_) {
        out.push_back(softmax(fully_connected(pooled, head.weight, head.bias)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// accounting
// ---------------------------------------------------------------------------

std::size_t count_params(const Model& model) { return model.params().trainable_count(); }

namespace {

std::size_t prefix_params(const Model& model, const std::string& prefix) {
    std::size_t total = 0;
    for (const auto& e : model.params().entries()) {
        if (e.trainable && e.name.size() > prefix.size() && e.name.compare(0, prefix.size(), prefix) == 0 &&
            e.name[prefix.size()] == '.') {
            total += e.tensor.numel();
        }
    }
    return total;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

std::vector<LayerProfile> profile(const Model& model, int input_size) {
    if (input_size < 1) throw std::invalid_argument("profile: input size must be positive");
    std::vector<LayerProfile> rows;
    const auto& spec = model.spec();

    int s = ceil_div(input_size, 2);
    rows.push_back({"stem", prefix_params(model, "stem"),
                    static_cast<std::size_t>(model.stem_filters()) * 3 * 9 * s * s});

    const auto& cfgs = model.block_configs();
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        const auto& cfg = cfgs[i];
        const int s_out = ceil_div(s, cfg.stride);
        const std::size_t expanded =
            static_cast<std::size_t>(cfg.in_channels) * cfg.expansion_ratio;
        std::size_t macs = 0;
        if (cfg.expansion_ratio != 1) {
            macs += expanded * cfg.in_channels * s * s;  // 1x1 expand
        }
        macs += expanded * cfg.kernel * cfg.kernel * s_out * s_out;  // depthwise (Cin/g = 1)
        if (cfg.se_ratio) {
            const std::size_t reduced =
                static_cast<std::size_t>(std::ceil(cfg.in_channels * *cfg.se_ratio));
            macs += expanded * reduced * 2;  // squeeze + excite FCs
        }
        macs += static_cast<std::size_t>(cfg.out_channels) * expanded * s_out * s_out;  // project
        rows.push_back({"blocks." + std::to_string(i),
                        prefix_params(model, "blocks." + std::to_string(i)), macs});
        s = s_out;
    }

    rows.push_back({"head", prefix_params(model, "head"),
                    static_cast<std::size_t>(model.head_filters()) *
                        (cfgs.empty() ? model.stem_filters() : cfgs.back().out_channels) * s * s});

    int channels = model.head_filters();
    for (int u = 0; u < spec.refinement.num_units; ++u) {
        const std::size_t bottleneck =
            static_cast<std::size_t>(spec.refinement.bottleneck_factor) *
            spec.refinement.growth_rate;
        std::size_t macs = bottleneck * channels * s * s;                          // 1x1
        macs += static_cast<std::size_t>(spec.refinement.growth_rate) * bottleneck * 9 * s * s;
        rows.push_back({"refine." + std::to_string(u),
                        prefix_params(model, "refine." + std::to_string(u)), macs});
        channels += spec.refinement.growth_rate;
    }

    for (std::size_t h = 0; h < spec.heads.size(); ++h) {
        rows.push_back({"heads." + std::to_string(h),
                        prefix_params(model, "heads." + std::to_string(h)),
                        static_cast<std::size_t>(channels) * spec.heads[h]});
    }
    return rows;
}

std::size_t count_macs(const Model& model, int input_size) {
    std::size_t total = 0;
    for (const auto& row : profile(model, input_size)) total += row.macs;
    return total;
}

std::string profile_csv(const std::vector<LayerProfile>& rows) {
    std::ostringstream os;
    os << "layer_name,params,macs\n";
    for (const auto& r : rows) os << r.name << "," << r.params << "," << r.macs << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'Y', 'P', 'S', 'E'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kSpecBlobName = "__spec__";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = bytes_[pos_] | (bytes_[pos_ + 1] << 8) | (bytes_[pos_ + 2] << 16) |
                          (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated stream");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

NamedBlob spec_blob(const ModelSpec& spec) {
    const std::string text = spec.serialize();
    NamedBlob blob;
    blob.name = kSpecBlobName;
    blob.dims = {static_cast<int>(text.size())};
    blob.values.reserve(text.size());
    for (unsigned char c : text) blob.values.push_back(static_cast<float>(c));
    return blob;
}

std::string spec_text_from_blob(const NamedBlob& blob) {
    std::string text;
    text.reserve(blob.values.size());
    for (float v : blob.values) text.push_back(static_cast<char>(static_cast<int>(v)));
    return text;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedBlob>& blobs) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& blob : blobs) {
        put_u32(out, static_cast<std::uint32_t>(blob.name.size()));
        out.insert(out.end(), blob.name.begin(), blob.name.end());
        put_u32(out, static_cast<std::uint32_t>(blob.dims.size()));
        std::size_t numel = 1;
        for (int d : blob.dims) {
            put_u32(out, static_cast<std::uint32_t>(d));
            numel *= static_cast<std::size_t>(d);
        }
        if (numel != blob.values.size()) {
            throw std::logic_error("checkpoint: blob '" + blob.name + "' dims do not match data");
        }
        for (float v : blob.values) put_f32(out, v);
    }
    return out;
}

std::vector<NamedBlob> parse_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const std::string magic = r.str(4);
    if (magic != std::string(kMagic, 4)) {
        throw std::runtime_error("checkpoint: bad magic bytes (not a checkpoint file)");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unknown format version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedBlob> blobs;
    blobs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedBlob blob;
        const std::uint32_t name_len = r.u32();
        blob.name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 4) {
            throw std::runtime_error("checkpoint: tensor '" + blob.name + "' has bad rank " +
                                     std::to_string(rank));
        }
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32();
            if (dim == 0 || dim > (1u << 28)) {
                throw std::runtime_error("checkpoint: tensor '" + blob.name +
                                         "' has bad dimension " + std::to_string(dim));
            }
            blob.dims.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        blob.values.resize(numel);
        for (std::size_t v = 0; v < numel; ++v) blob.values[v] = r.f32();
        blobs.push_back(std::move(blob));
    }
    if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes after last tensor");
    return blobs;
}

std::vector<std::uint8_t> save_checkpoint(const Model& model,
                                          const std::vector<NamedBlob>& extras) {
    std::vector<NamedBlob> blobs;
    blobs.reserve(model.params().entries().size() + 1 + extras.size());
    for (const auto& e : model.params().entries()) {
        NamedBlob blob;
        blob.name = e.name;
        blob.dims = e.tensor.shape();
        blob.values.assign(e.tensor.data().begin(), e.tensor.data().end());
        blobs.push_back(std::move(blob));
    }
    blobs.push_back(spec_blob(model.spec()));
    for (const auto& e : extras) blobs.push_back(e);
    return encode_checkpoint(blobs);
}

void load_weights(Model& model, const std::vector<NamedBlob>& blobs) {
    std::map<std::string, const NamedBlob*> by_name;
    for (const auto& blob : blobs) by_name[blob.name] = &blob;
    for (auto& e : model.params().entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) {
            throw std::runtime_error("checkpoint: missing tensor '" + e.name + "'");
        }
        const NamedBlob& blob = *it->second;
        Tensor<float> t = e.tensor;
        if (blob.dims != t.shape()) {
            throw std::runtime_error("checkpoint: tensor '" + e.name + "' has shape " +
                                     detail::shape_str(blob.dims) + " but the model expects " +
                                     detail::shape_str(t.shape()));
        }
        std::copy(blob.values.begin(), blob.values.end(), t.data().begin());
    }
}

Model load_checkpoint(std::span<const std::uint8_t> bytes) {
    const auto blobs = parse_checkpoint(bytes);
    const NamedBlob* spec_entry = nullptr;
    for (const auto& blob : blobs) {
        if (blob.name == kSpecBlobName) {
            spec_entry = &blob;
            break;
        }
    }
    if (!spec_entry) throw std::runtime_error("checkpoint: missing spec echo");
    const ModelSpec spec = ModelSpec::deserialize(spec_text_from_blob(*spec_entry));
    Model model = Model::build(spec, 0);
    load_weights(model, blobs);
    return model;
}

// ---------------------------------------------------------------------------
// activation maps
// ---------------------------------------------------------------------------

Tensor<float> heatmap_from_features(const Tensor<float>& features, int out_h, int out_w) {
    if (!features.defined() || features.rank() != 4) {
        throw std::invalid_argument("heatmap: features must be [N,C,H,W]");
    }
    const int c = features.dim(1), h = features.dim(2), w = features.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<float> mean(plane, 0.0f);
    const auto data = features.data();
    for (int ch = 0; ch < c; ++ch) {
        const float* src = data.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) mean[p] += src[p];
    }
    for (auto& v : mean) v /= static_cast<float>(c);

    const auto [lo_it, hi_it] = std::minmax_element(mean.begin(), mean.end());
    const float lo = *lo_it, hi = *hi_it;
    if (hi - lo > 0) {
        for (auto& v : mean) v = (v - lo) / (hi - lo);
    } else {
        std::fill(mean.begin(), mean.end(), 0.0f);  // constant map: defined as all zeros
    }
    auto up = resize_plane(mean.data(), h, w, out_h, out_w);
    for (auto& v : up) v = std::clamp(v, 0.0f, 1.0f);
    return Tensor<float>::from_data({out_h, out_w}, std::move(up));
}

Tensor<float> activation_map(Model& model, const Tensor<float>& image) {
    Tensor<float> input;
    if (image.defined() && image.rank() == 3 && image.dim(0) == 3) {
        input = Tensor<float>::from_data({1, 3, image.dim(1), image.dim(2)},
                                         {image.data().begin(), image.data().end()});
    } else if (image.defined() && image.rank() == 4 && image.dim(1) == 3) {
        input = image;
    } else {
        throw std::invalid_argument("activation_map: image must be [3,H,W] or [1,3,H,W]");
    }
    NoGradGuard no_grad;
    auto features = model.trunk_forward(input, /*training=*/false);
    return heatmap_from_features(features, input.dim(2), input.dim(3));
}

}  // namespace ypose
