#include "ypose/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ypose {

void OptimizerConfig::validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("optimizer: learning rate must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
        throw std::invalid_argument("optimizer: beta coefficients must be in [0,1)");
    }
    if (eps <= 0) throw std::invalid_argument("optimizer: eps must be > 0");
}

AdamState AdamState::create(const std::vector<Tensor<float>>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
        s.m.emplace_back(p.numel(), 0.0f);
        s.v.emplace_back(p.numel(), 0.0f);
    }
    return s;
}

void adam_step(std::vector<Tensor<float>>& params, AdamState& state, const OptimizerConfig& cfg) {
    cfg.validate();
    if (params.size() != state.m.size()) {
        throw std::invalid_argument("adam: state was created for a different parameter set");
    }
    ++state.step;
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    const float lr = static_cast<float>(cfg.learning_rate);
    const float eps = static_cast<float>(cfg.eps);
    const float corr1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
    const float corr2 = 1.0f - std::pow(b2, static_cast<float>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].data();
        const auto grads = params[k].grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const float g = grads[i];
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            const float mhat = m[i] / corr1;
            const float vhat = v[i] / corr2;
            values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
Tensor<T> cross_entropy_loss(const std::vector<Tensor<T>>& predictions,
                             const std::vector<std::vector<int>>& targets,
                             const std::vector<double>& head_weights) {
    if (predictions.empty()) throw std::invalid_argument("loss: no prediction heads");
    if (predictions.size() != targets.size()) {
        throw std::invalid_argument("loss: " + std::to_string(predictions.size()) +
                                    " heads but " + std::to_string(targets.size()) +
                                    " target sets");
    }
    if (!head_weights.empty() && head_weights.size() != predictions.size()) {
        throw std::invalid_argument("loss: head weight count mismatch");
    }
    Tensor<T> total;
    for (std::size_t h = 0; h < predictions.size(); ++h) {
        const double w = head_weights.empty() ? 1.0 : head_weights[h];
        auto term = scale(nll_from_probs(predictions[h], targets[h]), static_cast<T>(w));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template Tensor<float> cross_entropy_loss<float>(const std::vector<Tensor<float>>&,
                                                 const std::vector<std::vector<int>>&,
                                                 const std::vector<double>&);
template Tensor<double> cross_entropy_loss<double>(const std::vector<Tensor<double>>&,
                                                   const std::vector<std::vector<int>>&,
                                                   const std::vector<double>&);

std::vector<int> resolve_head_levels(const Model& model, const LabelHierarchy& hierarchy,
                                     const std::optional<std::vector<int>>& override_levels) {
    const auto& heads = model.spec().heads;
    std::vector<int> levels;
    if (override_levels) {
        levels = *override_levels;
        if (levels.size() != heads.size()) {
            throw std::invalid_argument("head levels: expected " + std::to_string(heads.size()) +
                                        " entries");
        }
    } else {
        if (heads.size() > 3) {
            throw std::invalid_argument("head levels: hierarchy has 3 levels but the model has " +
                                        std::to_string(heads.size()) + " heads");
        }
        for (std::size_t h = 0; h < heads.size(); ++h) {
            levels.push_back(static_cast<int>(3 - heads.size() + h));
        }
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const int classes = hierarchy.level_classes(levels[h]);
        if (heads[h] != classes) {
            throw std::invalid_argument(
                "head " + std::to_string(h) + " has " + std::to_string(heads[h]) +
                " classes but hierarchy level " + std::to_string(levels[h]) + " has " +
                std::to_string(classes));
        }
    }
    return levels;
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

struct EvalPass {
    double loss = 0.0;
    double finest_top1 = 0.0;
    std::vector<std::vector<std::vector<float>>> probs;  // [head][sample][class]
    std::vector<std::vector<int>> targets;               // [head][sample]
};

// Deterministic eval-mode sweep over a split (no dropout, running stats only).
EvalPass eval_pass(Model& model, const DataPipeline& pipeline, Split split,
                   const std::vector<int>& levels, const std::vector<double>& weights,
                   int batch_size) {
    EvalPass pass;
    const std::size_t num_heads = levels.size();
    pass.probs.resize(num_heads);
    pass.targets.resize(num_heads);

    std::size_t samples = 0;
    double loss_sum = 0.0;
    BatchStream stream(pipeline, split, batch_size, /*seed=*/0, /*epoch=*/0);
    NoGradGuard no_grad;
    while (auto batch = stream.next()) {
        auto probs = model.forward(batch->images, /*training=*/false);
        std::vector<std::vector<int>> targets(num_heads);
        for (std::size_t h = 0; h < num_heads; ++h) targets[h] = batch->labels[levels[h]];
        const double batch_loss =
            cross_entropy_loss<float>(probs, targets, weights).item();
        const std::size_t b = batch->record_indices.size();
        loss_sum += batch_loss * static_cast<double>(b);
        samples += b;
        for (std::size_t h = 0; h < num_heads; ++h) {
            const int c = probs[h].dim(1);
            for (std::size_t i = 0; i < b; ++i) {
                std::vector<float> row(c);
                for (int j = 0; j < c; ++j) row[j] = probs[h].at({static_cast<int>(i), j});
                pass.probs[h].push_back(std::move(row));
                pass.targets[h].push_back(targets[h][i]);
            }
        }
    }
    if (samples > 0) {
        pass.loss = loss_sum / static_cast<double>(samples);
        std::size_t hits = 0;
        const auto& fine_probs = pass.probs.back();
        const auto& fine_targets = pass.targets.back();
        for (std::size_t i = 0; i < fine_probs.size(); ++i) {
            hits += argmax_class(fine_probs[i]) == fine_targets[i];
        }
        pass.finest_top1 = static_cast<double>(hits) / static_cast<double>(fine_probs.size());
    }
    return pass;
}

constexpr const char* kOptStepBlob = "__opt.step";
constexpr const char* kTrainEpochBlob = "__train.epoch";
constexpr const char* kTrainBestBlob = "__train.best";

std::vector<NamedBlob> trainer_extras(const std::vector<ParamStore<float>::Entry>& trainables,
                                      const AdamState& state, int next_epoch, double best) {
    std::vector<NamedBlob> extras;
    std::size_t k = 0;
    for (const auto& e : trainables) {
        extras.push_back({"__opt.m." + e.name, e.tensor.shape(), state.m[k]});
        extras.push_back({"__opt.v." + e.name, e.tensor.shape(), state.v[k]});
        ++k;
    }
    extras.push_back({kOptStepBlob, {1}, {static_cast<float>(state.step)}});
    extras.push_back({kTrainEpochBlob, {1}, {static_cast<float>(next_epoch)}});
    extras.push_back({kTrainBestBlob, {1}, {static_cast<float>(best)}});
    return extras;
}

}  // namespace

TrainResult train(Model& model, const DatasetManifest& manifest,
                  const PipelineOptions& pipeline_options, const TrainOptions& options) {
    options.optimizer.validate();
    if (options.epochs < 0 || options.batch_size < 1) {
        throw std::invalid_argument("train: bad epochs or batch size");
    }
    const auto levels = resolve_head_levels(model, manifest.hierarchy, options.head_levels);
    const std::vector<double> weights =
        options.head_weights.empty() ? std::vector<double>(levels.size(), 1.0)
                                     : options.head_weights;
    if (weights.size() != levels.size()) {
        throw std::invalid_argument("train: head weight count mismatch");
    }
    if (manifest.split_indices(Split::kTrain).empty()) {
        throw std::invalid_argument("train: training split is empty");
    }
    const bool has_val = !manifest.split_indices(Split::kVal).empty();

    DataPipeline pipeline(manifest, pipeline_options);
    std::vector<ParamStore<float>::Entry> trainables;
    for (const auto& e : model.params().entries()) {
        if (e.trainable) trainables.push_back(e);
    }
    std::vector<Tensor<float>> params;
    for (const auto& e : trainables) params.push_back(e.tensor);

    AdamState state = AdamState::create(params);
    int start_epoch = 0;
    TrainResult result;

    if (!options.resume_checkpoint.empty()) {
        const auto blobs = parse_checkpoint(options.resume_checkpoint);
        load_weights(model, blobs);
        std::map<std::string, const NamedBlob*> by_name;
        for (const auto& b : blobs) by_name[b.name] = &b;
        for (std::size_t k = 0; k < trainables.size(); ++k) {
            const auto m_it = by_name.find("__opt.m." + trainables[k].name);
            const auto v_it = by_name.find("__opt.v." + trainables[k].name);
            if (m_it == by_name.end() || v_it == by_name.end()) {
                throw std::runtime_error("resume: checkpoint has no optimizer state for '" +
                                         trainables[k].name + "'");
            }
            state.m[k] = m_it->second->values;
            state.v[k] = v_it->second->values;
        }
        const auto step_it = by_name.find(kOptStepBlob);
        const auto epoch_it = by_name.find(kTrainEpochBlob);
        const auto best_it = by_name.find(kTrainBestBlob);
        if (step_it == by_name.end() || epoch_it == by_name.end() || best_it == by_name.end()) {
            throw std::runtime_error("resume: checkpoint is missing trainer state");
        }
        state.step = static_cast<long>(step_it->second->values[0]);
        start_epoch = static_cast<int>(epoch_it->second->values[0]);
        result.best_metric = best_it->second->values[0];
        result.total_steps = state.step;
    }

    auto snapshot = [&](int next_epoch) {
        auto bytes =
            save_checkpoint(model, trainer_extras(trainables, state, next_epoch,
                                                  result.best_metric));
        if (!options.checkpoint_path.empty()) {
            std::ofstream out(options.checkpoint_path, std::ios::binary);
            if (!out) {
                throw std::runtime_error("train: cannot write checkpoint " +
                                         options.checkpoint_path.string());
            }
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
        result.best_checkpoint = std::move(bytes);
    };

    if (options.epochs == 0) {
        // contract: zero epochs returns the initial weights and empty curves
        snapshot(0);
        result.final_checkpoint = result.best_checkpoint;
        return result;
    }

    bool stop = false;
    int epochs_done = start_epoch;
    for (int epoch = start_epoch; epoch < options.epochs && !stop; ++epoch) {
        BatchStream stream(pipeline, Split::kTrain, options.batch_size, options.seed, epoch);
        int batch_index = 0;
        while (auto batch = stream.next()) {
            if (options.max_steps > 0 && result.total_steps >= options.max_steps) {
                stop = true;
                break;
            }
            std::vector<std::vector<int>> targets(levels.size());
            for (std::size_t h = 0; h < levels.size(); ++h) {
                targets[h] = batch->labels[levels[h]];
            }
            const std::uint64_t dropout_seed =
                mix64(options.seed) ^ mix64((static_cast<std::uint64_t>(epoch) << 20) ^
                                            static_cast<std::uint64_t>(batch_index) ^ 0xd51e);
            auto probs = model.forward(batch->images, /*training=*/true, dropout_seed);
            auto loss = cross_entropy_loss<float>(probs, targets, weights);
            const float loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index));
            }
            model.params().zero_grads();
            backward(loss);
            adam_step(params, state, options.optimizer);
            ++result.total_steps;
            ++batch_index;
        }
        for (const auto& w : stream.warnings()) result.warnings.push_back(w);

        EpochStats stats;
        stats.epoch = epoch;
        stats.steps_done = result.total_steps;
        auto train_pass =
            eval_pass(model, pipeline, Split::kTrain, levels, weights, options.batch_size);
        stats.train_loss = train_pass.loss;
        stats.train_top1 = train_pass.finest_top1;
        if (has_val) {
            auto val_pass =
                eval_pass(model, pipeline, Split::kVal, levels, weights, options.batch_size);
            stats.val_loss = val_pass.loss;
            stats.val_top1 = val_pass.finest_top1;
        }
        result.curves.push_back(stats);

        if (result.steps_to_perfect_train < 0 && stats.train_top1 == 1.0) {
            result.steps_to_perfect_train = result.total_steps;
        }
        const double metric = has_val ? stats.val_top1 : stats.train_top1;
        if (metric > result.best_metric) {
            result.best_metric = metric;
            snapshot(epoch + 1);
        }
        if (options.stop_when_train_perfect && stats.train_top1 == 1.0) stop = true;
        epochs_done = epoch + 1;
    }
    result.final_checkpoint =
        save_checkpoint(model, trainer_extras(trainables, state, epochs_done,
                                              result.best_metric));
    if (result.best_checkpoint.empty()) {
        result.best_checkpoint = result.final_checkpoint;
        if (!options.checkpoint_path.empty()) {
            std::ofstream out(options.checkpoint_path, std::ios::binary);
            out.write(reinterpret_cast<const char*>(result.best_checkpoint.data()),
                      static_cast<std::streamsize>(result.best_checkpoint.size()));
        }
    }
    return result;
}

std::string curves_csv(const std::vector<EpochStats>& curves) {
    std::ostringstream os;
    os << "epoch,steps,train_loss,train_top1,val_loss,val_top1\n";
    for (const auto& s : curves) {
        os << s.epoch << "," << s.steps_done << "," << s.train_loss << "," << s.train_top1 << ","
           << s.val_loss << "," << s.val_top1 << "\n";
    }
    return os.str();
}

MetricsReport evaluate(Model& model, const DatasetManifest& manifest,
                       const PipelineOptions& pipeline_options, Split split,
                       const std::optional<std::vector<int>>& head_levels, int batch_size) {
    const auto levels = resolve_head_levels(model, manifest.hierarchy, head_levels);
    const std::vector<double> weights(levels.size(), 1.0);
    DataPipeline pipeline(manifest, pipeline_options);
    auto pass = eval_pass(model, pipeline, split, levels, weights, batch_size);
    MetricsReport report;
    for (std::size_t h = 0; h < levels.size(); ++h) {
        report.levels.push_back(compute_metrics(pass.probs[h], pass.targets[h],
                                                manifest.hierarchy.level_classes(levels[h])));
    }
    return report;
}

std::vector<SweepRow> sweep_refinement_blocks(const ModelSpec& base_spec,
                                              const std::vector<int>& unit_counts,
                                              const DatasetManifest& manifest,
                                              const PipelineOptions& pipeline_options,
                                              const TrainOptions& options) {
    if (unit_counts.empty()) throw std::invalid_argument("sweep: no unit counts given");
    std::vector<SweepRow> rows;
    for (int count : unit_counts) {
        ModelSpec spec = base_spec;
        spec.refinement.num_units = count;
        Model model = Model::build(spec, options.seed);
        auto result = train(model, manifest, pipeline_options, options);
        SweepRow row;
        row.num_units = count;
        row.params = count_params(model);
        if (!result.curves.empty()) {
            const bool has_val = !manifest.split_indices(Split::kVal).empty();
            double best = 0.0;
            for (const auto& s : result.curves) {
                best = std::max(best, has_val ? s.val_top1 : s.train_top1);
            }
            row.val_top1 = best;
        }
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "num_units,params,val_top1\n";
    for (const auto& r : rows) {
        os << r.num_units << "," << r.params << "," << r.val_top1 << "\n";
    }
    return os.str();
}

}  // namespace ypose
