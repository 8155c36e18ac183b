// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Runs from scratch in a temp directory; the only external piece is
// the CLI binary (YPOSE_BIN), used where a criterion is about the command
// surface itself.

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ypose/config.hpp"
#include "ypose/gradcheck.hpp"
#include "ypose/metrics.hpp"
#include "ypose/roi.hpp"
#include "ypose/toy.hpp"
#include "ypose/train.hpp"

using namespace ypose;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    if (!pass) ++g_failures;
}

bool within(double value, double target, double tolerance) {
    return std::abs(value / target - 1.0) <= tolerance;
}

std::string fmt(const char* format, ...) {
    char buffer[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buffer, sizeof buffer, format, args);
    va_end(args);
    return buffer;
}

Tensor<double> rand_tensor(std::vector<int> shape, std::uint64_t seed,
                           bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> data(detail::shape_numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor<double>::from_data(std::move(shape), std::move(data), requires_grad);
}

ModelSpec spec_of(const std::string& variant) {
    RunConfig cfg;
    apply_variant(cfg, variant);
    return cfg.effective_model();
}

ModelSpec bare(const std::string& variant) {
    auto spec = spec_of(variant);
    spec.heads = {82};
    return spec;
}

ToyCorpusOptions overfit_corpus_options() {
    ToyCorpusOptions opt;
    opt.fine_classes = 2;
    opt.mid_classes = 1;
    opt.coarse_classes = 1;
    opt.images_per_class = 8;
    return opt;
}

ModelSpec overfit_model_spec() {
    ModelSpec spec;
    spec.scaling = {0.25, 0.25, 8, 8};
    spec.refinement = {8, 4, 1};
    spec.heads = {2};
    spec.input_size = 32;
    spec.norm.momentum = 0.9;  // reduced-scale EMA, see README
    return spec;
}

TrainOptions overfit_train_options() {
    TrainOptions topts;
    topts.epochs = 200;
    topts.batch_size = 8;
    topts.optimizer.learning_rate = 1e-3;  // raised for toy scale, documented
    topts.seed = 9;
    topts.max_steps = 300;
    return topts;
}

// ---------------------------------------------------------------------------

void criterion1_params() {
    struct Row {
        const char* name;
        ModelSpec spec;
        double target;
    };
    const std::vector<Row> rows = {
        {"b0+82", bare("b0"), 4.11e6},        {"b4+82", bare("b4"), 17.69e6},
        {"ypose", spec_of("ypose"), 22.68e6}, {"ypose-lite", spec_of("ypose-lite"), 6.30e6},
        {"mv2+82", bare("mv2"), 2.33e6},
    };
    bool pass = true;
    std::string detail;
    for (const auto& row : rows) {
        const auto model = Model::build(row.spec, 1);
        const auto params = count_params(model);
        pass = pass && within(static_cast<double>(params), row.target, 0.02);
        detail += fmt("%s %.4g M (%+.2f%%)  ", row.name, params / 1e6,
                      (params / row.target - 1.0) * 100.0);
    }
    report(1, "parameter accounting within 2%", pass, detail);
}

void criterion2_macs() {
    const auto lite = Model::build(spec_of("ypose-lite"), 1);
    const auto mv2 = Model::build(bare("mv2"), 1);
    const auto ypose = Model::build(spec_of("ypose"), 1);
    const double lite_g = count_macs(lite, 224) / 1e9;
    const double mv2_g = count_macs(mv2, 224) / 1e9;
    const double ypose_g = count_macs(ypose, 224) / 1e9;
    const bool pass = within(lite_g, 0.50, 0.15) && within(mv2_g, 0.27, 0.15);
    report(2, "MAC accounting", pass,
           fmt("ypose-lite %.4f GMACs (target 0.50 +-15%%), mv2 %.4f (target 0.27 +-15%%); "
               "ypose measures %.4f GMACs (published 4.43 reported, not asserted)",
               lite_g, mv2_g, ypose_g));
}

void criterion3_scaling() {
    const auto scaled = scaled_backbone(efficientnet_table(), {1.4, 1.8, 8, 8});
    const std::vector<int> want_filters{24, 32, 56, 112, 160, 272, 448};
    const std::vector<int> want_repeats{2, 4, 4, 6, 6, 8, 2};
    bool pass = scaled.stem_filters == 48 && scaled.head_filters == 1792 &&
                scaled.stages.size() == 7;
    for (std::size_t i = 0; pass && i < 7; ++i) {
        pass = scaled.stages[i].filters == want_filters[i] &&
               scaled.stages[i].repeats == want_repeats[i];
    }
    std::string got = "filters {";
    for (const auto& s : scaled.stages) got += std::to_string(s.filters) + " ";
    got += "} repeats {";
    for (const auto& s : scaled.stages) got += std::to_string(s.repeats) + " ";
    got += fmt("} stem %d head %d", scaled.stem_filters, scaled.head_filters);
    report(3, "compound scaling reproduces the b4 configuration exactly", pass, got);
}

void criterion4_gradients() {
    const NormSettings norm{1e-3, 0.99};
    double worst = 0.0;
    std::string worst_name = "-";
    auto track = [&](const std::string& name, double err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
        return err < 1e-4;
    };
    bool pass = true;

    {  // primitives
        auto x = rand_tensor({2, 4, 6, 6}, 11, true);
        auto w = rand_tensor({6, 2, 3, 3}, 12, true);
        auto b = rand_tensor({6}, 13, true);
        auto probe = rand_tensor({2, 6, 3, 3}, 14);
        pass = pass &&
               track("conv2d",
                     grad_check<double>(
                         [&] {
                             return sum_all(mul(conv2d(x, w, b, 2, Padding::kSame, 2), probe));
                         },
                         {x, w, b}));
        auto dw = rand_tensor({4, 1, 3, 3}, 15, true);
        auto probe_dw = rand_tensor({2, 4, 6, 6}, 16);
        pass = pass &&
               track("depthwise conv2d",
                     grad_check<double>(
                         [&] {
                             return sum_all(mul(
                                 conv2d(x, dw, Tensor<double>{}, 1, Padding::kSame, 4), probe_dw));
                         },
                         {x, dw}));

        auto gamma = rand_tensor({4}, 17, true);
        auto beta = rand_tensor({4}, 18, true);
        auto rm = Tensor<double>::zeros({4});
        auto rv = Tensor<double>::filled({4}, 1.0);
        auto probe_bn = rand_tensor({2, 4, 6, 6}, 19);
        for (bool training : {true, false}) {
            pass = pass &&
                   track(training ? "batch_norm train" : "batch_norm eval",
                         grad_check<double>(
                             [&] {
                                 return sum_all(mul(
                                     batch_norm(x, gamma, beta, rm, rv, 1e-3, 0.99, training),
                                     probe_bn));
                             },
                             {x, gamma, beta}));
        }

        auto rows = rand_tensor({3, 7}, 21, true);
        auto probe_rows = rand_tensor({3, 7}, 22);
        pass = pass && track("swish",
                             grad_check<double>(
                                 [&] { return sum_all(mul(swish(rows), probe_rows)); }, {rows}));
        pass = pass && track("sigmoid",
                             grad_check<double>(
                                 [&] { return sum_all(mul(sigmoid(rows), probe_rows)); }, {rows}));
        pass = pass && track("softmax",
                             grad_check<double>(
                                 [&] { return sum_all(mul(softmax(rows), probe_rows)); }, {rows}));

        auto fw = rand_tensor({5, 7}, 23, true);
        auto fb = rand_tensor({5}, 24, true);
        auto probe_fc = rand_tensor({3, 5}, 25);
        pass = pass &&
               track("fully_connected",
                     grad_check<double>(
                         [&] { return sum_all(mul(fully_connected(rows, fw, fb), probe_fc)); },
                         {rows, fw, fb}));

        auto probe_gap = rand_tensor({2, 4}, 26);
        pass = pass && track("global_avg_pool",
                             grad_check<double>(
                                 [&] { return sum_all(mul(global_avg_pool(x), probe_gap)); },
                                 {x}));

        auto y2 = rand_tensor({2, 3, 6, 6}, 27, true);
        auto probe_cc = rand_tensor({2, 7, 6, 6}, 28);
        pass = pass &&
               track("concat_channels",
                     grad_check<double>(
                         [&] {
                             return sum_all(mul(concat_channels<double>({x, y2}), probe_cc));
                         },
                         {x, y2}));

        auto probe_do = rand_tensor({2, 4, 6, 6}, 29);
        pass = pass &&
               track("dropout",
                     grad_check<double>(
                         [&] { return sum_all(mul(dropout(x, 0.4, true, 77), probe_do)); }, {x}));
    }

    {  // composite: mbconv with squeeze-excite
        ParamStore<double> store;
        ParamInit<double> init(31);
        auto block = MBConvBlock<double>::create(store, init, "b", {4, 4, 6, 3, 1, 0.25});
        auto x = rand_tensor({2, 4, 5, 5}, 32);
        auto probe = rand_tensor({2, 4, 5, 5}, 33);
        pass = pass &&
               track("mbconv",
                     grad_check<double>(
                         [&] { return sum_all(mul(block.forward(x, norm, true), probe)); },
                         store.trainable()));
    }
    {  // composite: inverted residual (no squeeze-excite)
        ParamStore<double> store;
        ParamInit<double> init(34);
        auto block = MBConvBlock<double>::create(store, init, "b", {3, 5, 6, 3, 2, std::nullopt});
        auto x = rand_tensor({2, 3, 6, 6}, 35);
        auto probe = rand_tensor({2, 5, 3, 3}, 36);
        pass = pass &&
               track("inverted residual",
                     grad_check<double>(
                         [&] { return sum_all(mul(block.forward(x, norm, true), probe)); },
                         store.trainable()));
    }
    {  // composite: refinement unit (eval mode: every parameter live, see notes)
        ParamStore<double> store;
        ParamInit<double> init(37);
        auto unit = RefinementUnit<double>::create(store, init, "u", 6, {2, 4, 1});
        auto x = rand_tensor({2, 6, 4, 4}, 38);
        auto probe = rand_tensor({2, 8, 4, 4}, 39);
        pass = pass &&
               track("refinement unit",
                     grad_check<double>(
                         [&] { return sum_all(mul(unit.forward(x, norm, false), probe)); },
                         store.trainable()));
    }
    {  // composite: classification head (pool, dropout, fc, softmax, loss)
        auto x = rand_tensor({3, 5, 4, 4}, 41, true);
        auto w = rand_tensor({4, 5}, 42, true);
        auto b = rand_tensor({4}, 43, true);
        std::vector<int> targets{1, 3, 0};
        pass = pass &&
               track("head", grad_check<double>(
                                 [&] {
                                     auto pooled = dropout(global_avg_pool(x), 0.4, true,
                                                           std::uint64_t{5});
                                     auto probs = softmax(fully_connected(pooled, w, b));
                                     return nll_from_probs(probs, targets);
                                 },
                                 {x, w, b}));
    }

    // analytic identity: d(loss of softmax)/dlogits == (p - onehot)/batch
    double identity_err = 0.0;
    {
        auto logits = rand_tensor({4, 6}, 44, true);
        std::vector<int> targets{2, 0, 5, 1};
        auto f = [&] { return cross_entropy_loss<double>({softmax(logits)}, {targets}, {}); };
        identity_err = grad_check<double>(f, {logits});
        logits.zero_grad();
        auto probs = softmax(logits);
        backward(cross_entropy_loss<double>({probs}, {targets}, {}));
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 6; ++j) {
                const double expected = (probs.at({i, j}) - (j == targets[i] ? 1.0 : 0.0)) / 4.0;
                identity_err =
                    std::max(identity_err, std::abs(logits.grad()[i * 6 + j] - expected));
            }
        }
        pass = pass && identity_err < 1e-6;
    }

    report(4, "gradient suite (primitives + composites < 1e-4, loss-softmax < 1e-6)", pass,
           fmt("worst relative error %.3g (%s); loss-softmax identity %.3g", worst,
               worst_name.c_str(), identity_err));
}

void criterion5_forward_shapes() {
    auto model = Model::build(spec_of("ypose"), 3);
    std::mt19937_64 rng(5);
    std::vector<float> image(3 * 224 * 224);
    for (auto& v : image) v = static_cast<float>((rng() >> 40) % 1000) / 1000.0f;
    auto input = Tensor<float>::from_data({1, 3, 224, 224}, std::move(image));
    NoGradGuard no_grad;
    auto features = model.trunk_forward(input, false);
    auto probs = model.forward(input, false);

    bool pass = features.dim(1) == 2304 && model.head_filters() == 1792 && probs.size() == 3;
    std::string sums;
    const std::vector<int> want{6, 20, 82};
    for (std::size_t h = 0; h < probs.size() && pass; ++h) {
        pass = probs[h].shape() == std::vector<int>{1, want[h]};
        double sum = 0.0;
        for (int j = 0; j < want[h]; ++j) sum += probs[h].at({0, j});
        pass = pass && std::abs(sum - 1.0) < 1e-5;
        sums += fmt("%.7f ", sum);
    }
    report(5, "full forward: 6/20/82 probability rows, channels 1792 -> 2304", pass,
           fmt("feature channels %d, row sums %s", features.dim(1), sums.c_str()));
}

void criterion6_overfit(const fs::path& tmp) {
    auto corpus = generate_toy_corpus(tmp / "overfit", overfit_corpus_options());
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);
    split_dataset(manifest, {0.75, 0.125, 0.125}, 2);

    PipelineOptions popts;
    popts.input_size = 32;
    auto model = Model::build(overfit_model_spec(), 5);
    auto topts = overfit_train_options();
    topts.stop_when_train_perfect = true;
    const auto result = train(model, manifest, popts, topts);
    const bool pass = result.steps_to_perfect_train > 0 && result.steps_to_perfect_train <= 300;
    report(6, "toy overfit reaches 100% train top-1 within 300 steps", pass,
           fmt("perfect at step %ld (adam lr 1e-3, dropout 0.4, cross-entropy)",
               result.steps_to_perfect_train));
}

void criterion7_metrics() {
    std::mt19937 rng(77);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    const int n = 1000, c = 7;
    std::vector<std::vector<float>> probs(n, std::vector<float>(c));
    std::vector<std::vector<double>> drows(n, std::vector<double>(c));
    std::vector<int> targets(n), predicted(n);
    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            drows[i][j] = dist(rng) + 1e-3;
            sum += drows[i][j];
        }
        for (int j = 0; j < c; ++j) {
            probs[i][j] = static_cast<float>(drows[i][j] / sum);
            drows[i][j] = probs[i][j];
        }
        targets[i] = static_cast<int>(rng() % c);
        predicted[i] = argmax_class(probs[i]);
    }
    const auto m = compute_metrics(probs, targets, c);

    // brute-force oracle
    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    for (int cls = 0; cls < c; ++cls) {
        long tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            tp += predicted[i] == cls && targets[i] == cls;
            fp += predicted[i] == cls && targets[i] != cls;
            fn += predicted[i] != cls && targets[i] == cls;
        }
        const double p = tp + fp > 0 ? double(tp) / (tp + fp) : 0.0;
        const double r = tp + fn > 0 ? double(tp) / (tp + fn) : 0.0;
        macro_p += p;
        macro_r += r;
        macro_f += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    macro_p /= c;
    macro_r /= c;
    macro_f /= c;
    std::size_t top1 = 0, top5 = 0, trace = 0, total = 0;
    for (int i = 0; i < n; ++i) {
        top1 += predicted[i] == targets[i];
        int better = 0;
        for (int j = 0; j < c; ++j) {
            if (j == targets[i]) continue;
            if (drows[i][j] > drows[i][targets[i]] ||
                (drows[i][j] == drows[i][targets[i]] && j < targets[i])) {
                ++better;
            }
        }
        top5 += better < 5;
    }
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
            total += m.confusion[i][j];
            if (i == j) trace += m.confusion[i][j];
        }
    }

    const double err = std::max({std::abs(m.macro_precision - macro_p),
                                 std::abs(m.macro_recall - macro_r),
                                 std::abs(m.macro_f1 - macro_f),
                                 std::abs(m.top1 - double(top1) / n),
                                 std::abs(m.top5 - double(top5) / n)});
    const bool trace_exact = double(trace) / double(total) == m.top1;
    report(7, "metrics match brute-force oracles on 1000 random pairs",
           err < 1e-9 && trace_exact,
           fmt("max deviation %.3g, confusion trace/total %s top-1", err,
               trace_exact ? "==" : "!="));
}

void criterion8_roi(const fs::path& tmp) {
    ToyCorpusOptions opt;
    opt.fine_classes = 4;
    opt.mid_classes = 2;
    opt.coarse_classes = 2;
    opt.images_per_class = 16;  // 64 images
    opt.synthetic_fraction = 0.25;
    opt.seed = 13;
    auto corpus = generate_toy_corpus(tmp / "roi", opt);
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);
    auto truth = load_truth_boxes(corpus.truth_csv);
    std::map<std::string, TruthBox> by_path;
    for (const auto& t : truth) by_path[t.path] = t;

    PipelineOptions popts;  // roi on, 224
    DataPipeline pipeline(manifest, popts);

    double min_iou = 1.0;
    int crops = 0, bypasses = 0, expected_bypasses = 0;
    bool shapes_ok = true, bypass_ok = true;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        const auto refined = pipeline.refine_record(i);
        shapes_ok = shapes_ok && refined.pixels.shape() == std::vector<int>{3, 224, 224};
        if (rec.synthetic) {
            ++expected_bypasses;
            bypasses += refined.provenance == Provenance::kBypassSynthetic;
            bypass_ok = bypass_ok && refined.provenance == Provenance::kBypassSynthetic;
            continue;
        }
        const auto img = read_image(manifest.image_path(i));
        const auto ann = segment_person(img, manifest.image_path(i));
        ++crops;
        if (ann.source == RoiSource::kNone) {
            min_iou = 0.0;
            continue;
        }
        const auto& t = by_path.at(rec.path);
        min_iou = std::min(min_iou,
                           bbox_iou(ann.x0, ann.y0, ann.x1, ann.y1, t.x0, t.y0, t.x1, t.y1));
    }
    const bool pass = min_iou >= 0.9 && bypass_ok && shapes_ok && crops >= 48;
    report(8, "ROI suite: IoU >= 0.9, synthetic bypass 100%, outputs 224x224", pass,
           fmt("min IoU %.4f over %d blobs, %d/%d synthetic bypassed, shapes %s", min_iou, crops,
               bypasses, expected_bypasses, shapes_ok ? "ok" : "bad"));
}

void criterion9_determinism(const fs::path& tmp) {
    auto corpus = generate_toy_corpus(tmp / "det", overfit_corpus_options());
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);
    split_dataset(manifest, {0.75, 0.125, 0.125}, 2);
    PipelineOptions popts;
    popts.input_size = 32;
    auto topts = overfit_train_options();
    topts.epochs = 6;
    topts.max_steps = 0;

    auto run_once = [&] {
        auto model = Model::build(overfit_model_spec(), 5);
        return train(model, manifest, popts, topts);
    };
    const auto a = run_once();
    const auto b = run_once();
    const bool identical =
        a.final_checkpoint == b.final_checkpoint && a.best_checkpoint == b.best_checkpoint;

    // save -> load -> save is byte-identical
    auto reloaded = load_checkpoint(a.best_checkpoint);
    auto reparsed = parse_checkpoint(a.best_checkpoint);
    std::vector<NamedBlob> extras;
    for (const auto& blob : reparsed) {
        if (blob.name.rfind("__", 0) == 0 && blob.name != "__spec__") extras.push_back(blob);
    }
    const auto resaved = save_checkpoint(reloaded, extras);
    const bool roundtrip = resaved == a.best_checkpoint;

    report(9, "determinism: identical seeds and checkpoint round-trips are byte-identical",
           identical && roundtrip,
           fmt("two runs %s (%zu bytes); save/load/save %s", identical ? "match" : "differ",
               a.final_checkpoint.size(), roundtrip ? "matches" : "differs"));
}

void criterion10_sweep(const fs::path& tmp) {
    const fs::path toy = tmp / "sweep_toy";
    const fs::path out = tmp / "sweep_out";
    const std::string gen = std::string(YPOSE_BIN) + " gen-toy --out " + toy.string() +
                            " --seed 3 --fine-classes 2 --mid-classes 1 --coarse-classes 1 "
                            "--per-class 6 > /dev/null 2>&1";
    const std::string sweep = std::string(YPOSE_BIN) +
                              " sweep --variant toy --heads 2 --units 0,4,16 --epochs 2 "
                              "--seed 5 --manifest " +
                              (toy / "manifest.csv").string() + " --hierarchy " +
                              (toy / "hierarchy.csv").string() + " --out " + out.string() +
                              " > /dev/null 2>&1";
    bool pass = std::system(gen.c_str()) == 0 && std::system(sweep.c_str()) == 0;

    std::vector<long> units, params;
    if (pass) {
        std::ifstream csv(out / "sweep.csv");
        std::string line;
        std::getline(csv, line);
        pass = line == "num_units,params,val_top1";
        while (std::getline(csv, line)) {
            std::istringstream row(line);
            std::string field;
            std::getline(row, field, ',');
            units.push_back(std::stol(field));
            std::getline(row, field, ',');
            params.push_back(std::stol(field));
            if (!std::getline(row, field, ',') || field.empty()) pass = false;
        }
        pass = pass && units == std::vector<long>{0, 4, 16};
        for (std::size_t i = 1; i < params.size(); ++i) pass = pass && params[i] > params[i - 1];
    }
    std::string detail = "params ";
    for (long p : params) detail += std::to_string(p) + " ";
    report(10, "sweep over {0,4,16} units emits a complete table, params strictly increasing",
           pass, detail);
}

}  // namespace

int main() {
    const fs::path tmp = fs::temp_directory_path() /
                         ("ypose_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(tmp);

    criterion1_params();
    criterion2_macs();
    criterion3_scaling();
    criterion4_gradients();
    criterion5_forward_shapes();
    criterion6_overfit(tmp);
    criterion7_metrics();
    criterion8_roi(tmp);
    criterion9_determinism(tmp);
    criterion10_sweep(tmp);

    fs::remove_all(tmp);
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all 10 criteria passed\n");
    return 0;
}
