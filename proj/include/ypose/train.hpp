#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ypose/data.hpp"
#include "ypose/metrics.hpp"
#include "ypose/model.hpp"
#include "ypose/ops.hpp"

namespace ypose {

struct OptimizerConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// Bias-corrected first/second moment state, one slot per parameter tensor.
struct AdamState {
    std::vector<std::vector<float>> m, v;
    long step = 0;

    static AdamState create(const std::vector<Tensor<float>>& params);
};

/// One optimizer step over params' accumulated gradients. Increments
/// state.step and applies the standard bias-corrected update in place.
void adam_step(std::vector<Tensor<float>>& params, AdamState& state,
               const OptimizerConfig& cfg);

/// Weighted multi-head categorical cross entropy over probability rows:
/// sum_h w_h * mean_batch(-log p_h[target]), log clamped at 1e-12.
template <typename T>
Tensor<T> cross_entropy_loss(const std::vector<Tensor<T>>& predictions,
                             const std::vector<std::vector<int>>& targets,
                             const std::vector<double>& head_weights);

extern template Tensor<float> cross_entropy_loss<float>(const std::vector<Tensor<float>>&,
                                                        const std::vector<std::vector<int>>&,
                                                        const std::vector<double>&);
extern template Tensor<double> cross_entropy_loss<double>(const std::vector<Tensor<double>>&,
                                                          const std::vector<std::vector<int>>&,
                                                          const std::vector<double>&);

/// Hierarchy levels fed to each model head: by default the heads map onto the
/// last len(heads) levels of (coarse, mid, fine), so a single head trains on
/// the fine level. Throws if the head width does not match the level's class
/// count.
std::vector<int> resolve_head_levels(const Model& model, const LabelHierarchy& hierarchy,
                                     const std::optional<std::vector<int>>& override_levels);

struct TrainOptions {
    int epochs = 50;
    int batch_size = 32;
    OptimizerConfig optimizer;
    std::vector<double> head_weights;  // empty = all ones
    std::optional<std::vector<int>> head_levels;
    std::uint64_t seed = 1;
    long max_steps = 0;  // 0 = unlimited
    bool stop_when_train_perfect = false;
    std::filesystem::path checkpoint_path;          // best checkpoint, empty = memory only
    std::vector<std::uint8_t> resume_checkpoint;    // empty = fresh run
};

struct EpochStats {
    int epoch = 0;
    long steps_done = 0;
    double train_loss = 0.0;
    double train_top1 = 0.0;
    double val_loss = 0.0;
    double val_top1 = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curves;
    std::vector<std::uint8_t> best_checkpoint;   // best validation top-1 (finest head)
    std::vector<std::uint8_t> final_checkpoint;  // state after the last epoch, for resuming
    double best_metric = -1.0;
    long total_steps = 0;
    long steps_to_perfect_train = -1;
    std::vector<std::string> warnings;
};

/// Deterministic training loop: epoch-seeded shuffles, seeded dropout,
/// per-epoch train/val curves, best checkpoint on validation top-1 of the
/// finest head (train top-1 when the validation split is empty). A non-finite
/// loss aborts with the offending batch index. Resuming from a saved
/// checkpoint continues the exact same trajectory.
TrainResult train(Model& model, const DatasetManifest& manifest,
                  const PipelineOptions& pipeline_options, const TrainOptions& options);

std::string curves_csv(const std::vector<EpochStats>& curves);

/// Runs the model over one split and scores every head level.
MetricsReport evaluate(Model& model, const DatasetManifest& manifest,
                       const PipelineOptions& pipeline_options, Split split,
                       const std::optional<std::vector<int>>& head_levels = std::nullopt,
                       int batch_size = 32);

struct SweepRow {
    int num_units = 0;
    std::size_t params = 0;
    double val_top1 = 0.0;
};

/// Trains one model per refinement-unit count and tabulates size vs accuracy.
std::vector<SweepRow> sweep_refinement_blocks(const ModelSpec& base_spec,
                                              const std::vector<int>& unit_counts,
                                              const DatasetManifest& manifest,
                                              const PipelineOptions& pipeline_options,
                                              const TrainOptions& options);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace ypose
