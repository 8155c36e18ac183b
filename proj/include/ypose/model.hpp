#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ypose/blocks.hpp"
#include "ypose/scaling.hpp"
#include "ypose/tensor.hpp"

namespace ypose {

/// Declarative network description: backbone + compound-scaling coefficients,
/// refinement stage, classification heads. Everything needed to rebuild the
/// exact same architecture lives here; a serialized copy travels inside every
/// checkpoint.
struct ModelSpec {
    std::string backbone = "efficientnet";
    ScalingParams scaling;
    RefinementConfig refinement;
    std::vector<int> heads{6, 20, 82};
    int input_size = 224;
    double dropout_rate = 0.4;
    NormSettings norm;

    void validate() const;
    std::string serialize() const;
    static ModelSpec deserialize(const std::string& text);
};

struct FcHead {
    Tensor<float> weight, bias;
};

class Model {
public:
    /// Assembles stem, scaled backbone stages, 1x1 head conv, refinement
    /// units, and one fully-connected classifier per head. Parameters are
    /// seeded deterministically: same spec + seed, same bits.
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    /// Per-head probability rows, each [N, classes]. Training mode applies
    /// dropout (seeded) and updates batch-norm running statistics.
    std::vector<Tensor<float>> forward(const Tensor<float>& input, bool training,
                                       std::uint64_t dropout_seed = 0);

    /// Feature map entering global average pooling (the final refinement-stage
    /// output).
    Tensor<float> trunk_forward(const Tensor<float>& input, bool training);

    const ModelSpec& spec() const { return spec_; }
    ParamStore<float>& params() { return store_; }
    const ParamStore<float>& params() const { return store_; }
    int feature_channels() const { return feature_channels_; }
    const std::vector<MBConvConfig>& block_configs() const { return block_cfgs_; }
    int stem_filters() const { return stem_filters_; }
    int head_filters() const { return head_filters_; }

private:
    ModelSpec spec_;
    ParamStore<float> store_;
    ConvBnAct<float> stem_;
    std::vector<MBConvBlock<float>> blocks_;
    ConvBnAct<float> head_;
    std::vector<RefinementUnit<float>> refine_;
    std::vector<FcHead> heads_;
    std::vector<MBConvConfig> block_cfgs_;
    int stem_filters_ = 0;
    int head_filters_ = 0;
    int feature_channels_ = 0;
};

// ---------------------------------------------------------------------------
// accounting
// ---------------------------------------------------------------------------

struct LayerProfile {
    std::string name;
    std::size_t params = 0;
    std::size_t macs = 0;
};

/// Trainable parameters only (conv/fc weights, biases, norm scale/shift);
/// running statistics are state, not parameters.
std::size_t count_params(const Model& model);

/// Multiply-accumulates for one sample at the given input resolution. Convs
/// count Cout*Cin/g*kH*kW per output position, fully-connected layers in*out;
/// normalization, activations, and pooling count zero.
std::size_t count_macs(const Model& model, int input_size);

std::vector<LayerProfile> profile(const Model& model, int input_size);
std::string profile_csv(const std::vector<LayerProfile>& rows);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

struct NamedBlob {
    std::string name;
    std::vector<int> dims;
    std::vector<float> values;
};

/// Wire format: "YPSE", version u32le, tensor count u32le, then per tensor
/// name length u32le + name bytes + rank u32le + dims u32le each + values as
/// little-endian IEEE-754 single precision. Model tensors come first in
/// registry order, then a "__spec__" echo of the serialized ModelSpec, then
/// any extra state (optimizer moments etc).
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedBlob>& blobs);
std::vector<NamedBlob> parse_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> save_checkpoint(const Model& model,
                                          const std::vector<NamedBlob>& extras = {});

/// Rebuilds the model from the embedded spec echo and restores every tensor.
Model load_checkpoint(std::span<const std::uint8_t> bytes);

/// Restores weights into an existing model; every model tensor must be present
/// with matching dims (extra "__" entries are ignored).
void load_weights(Model& model, const std::vector<NamedBlob>& blobs);

// ---------------------------------------------------------------------------
// activation maps
// ---------------------------------------------------------------------------

/// Channel mean of the first sample's feature map, min-max normalized to
/// [0,1] (all zeros when the map is constant), bilinearly upsampled.
Tensor<float> heatmap_from_features(const Tensor<float>& features, int out_h, int out_w);

/// Heatmap of the final refinement-stage features for one image ([3,H,W] or
/// [1,3,H,W]), upsampled to the image's spatial size. Runs in eval mode.
Tensor<float> activation_map(Model& model, const Tensor<float>& image);

}  // namespace ypose
