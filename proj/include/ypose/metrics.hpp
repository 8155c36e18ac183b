#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ypose {

/// Classification scores for one hierarchy level. Top-k uses k = min(5, C);
/// ranking ties break toward the lower class index. Macro averages divide by
/// the full class count, with zero-support (or never-predicted) classes
/// contributing zero.
struct LevelMetrics {
    int classes = 0;
    std::size_t samples = 0;
    double top1 = 0.0;
    double top5 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

struct MetricsReport {
    std::vector<LevelMetrics> levels;  // one per head, coarse to fine
};

LevelMetrics compute_metrics(const std::vector<std::vector<float>>& probs,
                             const std::vector<int>& targets, int num_classes);

/// Predicted class of one probability row (lowest index wins ties).
int argmax_class(const std::vector<float>& row);

std::string confusion_csv(const LevelMetrics& metrics);

}  // namespace ypose
