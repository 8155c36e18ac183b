#include "ypose/metrics.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace ypose {

int argmax_class(const std::vector<float>& row) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(row.size()); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

LevelMetrics compute_metrics(const std::vector<std::vector<float>>& probs,
                             const std::vector<int>& targets, int num_classes) {
    if (probs.size() != targets.size()) {
        throw std::invalid_argument("metrics: " + std::to_string(probs.size()) +
                                    " prediction rows for " + std::to_string(targets.size()) +
                                    " targets");
    }
    LevelMetrics m;
    m.classes = num_classes;
    m.samples = probs.size();
    m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    const int k = std::min(5, num_classes);

    std::size_t top1_hits = 0, topk_hits = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& row = probs[i];
        const int truth = targets[i];
        if (static_cast<int>(row.size()) != num_classes || truth < 0 || truth >= num_classes) {
            throw std::invalid_argument("metrics: row " + std::to_string(i) +
                                        " has bad width or target");
        }
        const int pred = argmax_class(row);
        ++m.confusion[truth][pred];
        top1_hits += pred == truth;
        // rank of the truth class: classes that strictly beat it, or tie with
        // a lower index
        int better = 0;
        for (int j = 0; j < num_classes; ++j) {
            if (j == truth) continue;
            if (row[j] > row[truth] || (row[j] == row[truth] && j < truth)) ++better;
        }
        topk_hits += better < k;
    }
    if (m.samples > 0) {
        m.top1 = static_cast<double>(top1_hits) / static_cast<double>(m.samples);
        m.top5 = static_cast<double>(topk_hits) / static_cast<double>(m.samples);
    }

    for (int c = 0; c < num_classes; ++c) {
        std::size_t tp = m.confusion[c][c];
        std::size_t support = 0, predicted = 0;
        for (int j = 0; j < num_classes; ++j) {
            support += m.confusion[c][j];
            predicted += m.confusion[j][c];
        }
        const double precision =
            predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        const double recall =
            support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        const double f1 =
            precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        m.macro_precision += precision;
        m.macro_recall += recall;
        m.macro_f1 += f1;
    }
    if (num_classes > 0) {
        m.macro_precision /= num_classes;
        m.macro_recall /= num_classes;
        m.macro_f1 /= num_classes;
    }
    return m;
}

std::string confusion_csv(const LevelMetrics& metrics) {
    std::ostringstream os;
    os << "true\\pred";
    for (int j = 0; j < metrics.classes; ++j) os << "," << j;
    os << "\n";
    for (int i = 0; i < metrics.classes; ++i) {
        os << i;
        for (int j = 0; j < metrics.classes; ++j) os << "," << metrics.confusion[i][j];
        os << "\n";
    }
    return os.str();
}

}  // namespace ypose
