#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ypose {

enum class BlockKind { kMBConv1, kMBConv6, kInvertedResidual };

/// Compound scaling coefficients. width/depth default to the base network;
/// min_depth equals depth_divisor unless overridden.
struct ScalingParams {
    double width = 1.0;
    double depth = 1.0;
    int depth_divisor = 8;
    int min_depth = 8;
};

struct StageConfig {
    BlockKind block_kind = BlockKind::kMBConv6;
    int expansion = 6;
    int kernel = 3;
    int stride = 1;
    int filters = 0;
    int repeats = 1;
    std::optional<double> se_ratio;
};

struct BackboneTable {
    std::string name;  // "efficientnet" | "mobilenet_v2"
    int stem_filters = 0;
    std::vector<StageConfig> stages;
    int head_filters = 0;
};

/// Width scaling: scale by `width`, round to the nearest multiple of the depth
/// divisor (never below min_depth), and bump one divisor up if rounding lost
/// more than 10% of the scaled value.
int round_filters(int filters, const ScalingParams& p);

/// Depth scaling: ceil(depth * repeats).
int round_repeats(int repeats, double depth);

/// Applies round_filters/round_repeats to every stage plus the stem and head.
BackboneTable scaled_backbone(const BackboneTable& table, const ScalingParams& p);

const BackboneTable& efficientnet_table();
const BackboneTable& mobilenet_v2_table();
const BackboneTable& backbone_table(const std::string& name);

/// Registered width/depth coefficient pairs: b0 (1.0, 1.0) and b4 (1.4, 1.8),
/// plus b5 (1.6, 2.2) whose coefficients come from the reference
/// implementation rather than anything published for this model family.
std::optional<ScalingParams> variant_coefficients(const std::string& variant);

/// One stage per line, for audit output.
std::string format_table(const BackboneTable& table);

}  // namespace ypose
