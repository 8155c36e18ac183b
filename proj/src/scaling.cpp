#include "ypose/scaling.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ypose {

int round_filters(int filters, const ScalingParams& p) {
    if (filters < 1) throw std::invalid_argument("round_filters: filters must be >= 1");
    const double scaled = p.width * filters;
    const int div = p.depth_divisor;
    int result = std::max(
        p.min_depth, static_cast<int>(std::floor((scaled + div / 2.0) / div)) * div);
    if (result < 0.9 * scaled) result += div;
    return result;
}

int round_repeats(int repeats, double depth) {
    if (repeats < 1) throw std::invalid_argument("round_repeats: repeats must be >= 1");
    return static_cast<int>(std::ceil(depth * repeats));
}

BackboneTable scaled_backbone(const BackboneTable& table, const ScalingParams& p) {
    BackboneTable out = table;
    out.stem_filters = round_filters(table.stem_filters, p);
    out.head_filters = round_filters(table.head_filters, p);
    for (auto& stage : out.stages) {
        stage.filters = round_filters(stage.filters, p);
        stage.repeats = round_repeats(stage.repeats, p.depth);
    }
    return out;
}

namespace {

BackboneTable make_efficientnet() {
    BackboneTable t;
    t.name = "efficientnet";
    t.stem_filters = 32;
    t.head_filters = 1280;
    const double se = 0.25;
    t.stages = {
        {BlockKind::kMBConv1, 1, 3, 1, 16, 1, se},
        {BlockKind::kMBConv6, 6, 3, 2, 24, 2, se},
        {BlockKind::kMBConv6, 6, 5, 2, 40, 2, se},
        {BlockKind::kMBConv6, 6, 3, 2, 80, 3, se},
        {BlockKind::kMBConv6, 6, 5, 1, 112, 3, se},
        {BlockKind::kMBConv6, 6, 5, 2, 192, 4, se},
        {BlockKind::kMBConv6, 6, 3, 1, 320, 1, se},
    };
    return t;
}

BackboneTable make_mobilenet_v2() {
    BackboneTable t;
    t.name = "mobilenet_v2";
    t.stem_filters = 32;
    t.head_filters = 1280;
    t.stages = {
        {BlockKind::kInvertedResidual, 1, 3, 1, 16, 1, std::nullopt},
        {BlockKind::kInvertedResidual, 6, 3, 2, 24, 2, std::nullopt},
        {BlockKind::kInvertedResidual, 6, 3, 2, 32, 3, std::nullopt},
        {BlockKind::kInvertedResidual, 6, 3, 2, 64, 4, std::nullopt},
        {BlockKind::kInvertedResidual, 6, 3, 1, 96, 3, std::nullopt},
        {BlockKind::kInvertedResidual, 6, 3, 2, 160, 3, std::nullopt},
        {BlockKind::kInvertedResidual, 6, 3, 1, 320, 1, std::nullopt},
    };
    return t;
}

const char* kind_name(BlockKind k) {
    switch (k) {
        case BlockKind::kMBConv1: return "mbconv1";
        case BlockKind::kMBConv6: return "mbconv6";
        case BlockKind::kInvertedResidual: return "inverted_residual";
    }
    return "?";
}

}  // namespace

const BackboneTable& efficientnet_table() {
    static const BackboneTable t = make_efficientnet();
    return t;
}

const BackboneTable& mobilenet_v2_table() {
    static const BackboneTable t = make_mobilenet_v2();
    return t;
}

const BackboneTable& backbone_table(const std::string& name) {
    if (name == "efficientnet") return efficientnet_table();
    if (name == "mobilenet_v2") return mobilenet_v2_table();
    throw std::invalid_argument("unknown backbone '" + name +
                                "' (expected efficientnet or mobilenet_v2)");
}

std::optional<ScalingParams> variant_coefficients(const std::string& variant) {
    if (variant == "b0") return ScalingParams{1.0, 1.0, 8, 8};
    if (variant == "b4") return ScalingParams{1.4, 1.8, 8, 8};
    if (variant == "b5") return ScalingParams{1.6, 2.2, 8, 8};
    return std::nullopt;
}

std::string format_table(const BackboneTable& table) {
    std::ostringstream os;
    os << "backbone " << table.name << "\n";
    os << "stem   conv3x3 s2           filters " << table.stem_filters << "\n";
    int stage_no = 1;
    for (const auto& s : table.stages) {
        os << "stage" << stage_no++ << " " << kind_name(s.block_kind) << " k" << s.kernel << " s"
           << s.stride << "  filters " << s.filters << "  repeats " << s.repeats;
        if (s.se_ratio) os << "  se " << *s.se_ratio;
        os << "\n";
    }
    os << "head   conv1x1              filters " << table.head_filters << "\n";
    return os.str();
}

}  // namespace ypose
