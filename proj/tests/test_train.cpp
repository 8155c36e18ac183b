#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "ypose/gradcheck.hpp"
#include "ypose/metrics.hpp"
#include "ypose/toy.hpp"
#include "ypose/train.hpp"

using namespace ypose;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ypose_train_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ModelSpec toy_model_spec(std::vector<int> heads) {
    ModelSpec spec;
    spec.scaling = {0.25, 0.25, 8, 8};
    spec.refinement = {8, 4, 1};
    spec.heads = std::move(heads);
    spec.input_size = 32;
    // faster running-stat EMA so eval-mode accuracy tracks a short toy run
    spec.norm.momentum = 0.9;
    return spec;
}

}  // namespace

TEST_CASE("cross entropy on perfect and uniform predictions") {
    // one-hot correct predictions: zero loss
    auto perfect = Tensor<float>::from_data({2, 3}, {1, 0, 0, 0, 0, 1});
    CHECK(cross_entropy_loss<float>({perfect}, {{0, 2}}, {}).item() == doctest::Approx(0.0));

    // uniform predictions: ln C per head, exactly (within 1e-9 in double)
    auto u4 = Tensor<double>::filled({3, 4}, 0.25);
    auto u7 = Tensor<double>::filled({3, 7}, 1.0 / 7);
    const double loss =
        cross_entropy_loss<double>({u4, u7}, {{0, 1, 2}, {3, 4, 5}}, {1.0, 2.0}).item();
    CHECK(std::abs(loss - (std::log(4.0) + 2.0 * std::log(7.0))) < 1e-9);
}

TEST_CASE("cross entropy matches a direct summation oracle") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> dist(0.01, 1.0);
    const int n = 5, c = 6;
    std::vector<double> rows(n * c);
    std::vector<int> targets(n);
    for (int i = 0; i < n; ++i) {
        double sum = 0;
        for (int j = 0; j < c; ++j) {
            rows[i * c + j] = dist(rng);
            sum += rows[i * c + j];
        }
        for (int j = 0; j < c; ++j) rows[i * c + j] /= sum;
        targets[i] = static_cast<int>(rng() % c);
    }
    double expected = 0;
    for (int i = 0; i < n; ++i) expected -= std::log(rows[i * c + targets[i]]);
    expected /= n;
    auto probs = Tensor<double>::from_data({n, c}, rows);
    CHECK(std::abs(cross_entropy_loss<double>({probs}, {targets}, {}).item() - expected) < 1e-6);
}

TEST_CASE("softmax-cross-entropy gradient equals (p - onehot)/batch") {
    auto logits_data = oracle::random_vec(4 * 5, 23, -2.0, 2.0);
    auto logits = Tensor<double>::from_data({4, 5}, logits_data, /*requires_grad=*/true);
    std::vector<int> targets{1, 4, 0, 2};

    auto f = [&] { return cross_entropy_loss<double>({softmax(logits)}, {targets}, {}); };
    CHECK(grad_check<double>(f, {logits}) < 1e-6);

    logits.zero_grad();
    auto probs = softmax(logits);
    backward(cross_entropy_loss<double>({probs}, {targets}, {}));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 5; ++j) {
            const double expected =
                (probs.at({i, j}) - (j == targets[i] ? 1.0 : 0.0)) / 4.0;
            CHECK(std::abs(logits.grad()[i * 5 + j] - expected) < 1e-12);
        }
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, step one moves by about lr") {
    auto p = Tensor<float>::from_data({2, 2}, {1.0f, -2.0f, 3.0f, 0.5f}, true);
    std::vector<Tensor<float>> params{p};
    auto state = AdamState::create(params);
    OptimizerConfig cfg;
    cfg.learning_rate = 1e-3;

    p.zero_grad();
    adam_step(params, state, cfg);
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[3] == 0.5f);

    // constant gradient: bias-corrected ratio makes the first step about lr
    p.zero_grad();
    for (auto& g : p.grad()) g = 0.37f;
    const float before = p.data()[0];
    adam_step(params, state, cfg);
    CHECK(std::abs(before - p.data()[0]) == doctest::Approx(1e-3).epsilon(0.01));

    // identical runs produce identical states
    auto q = Tensor<float>::from_data({2, 2}, {1.0f, -2.0f, 3.0f, 0.5f}, true);
    std::vector<Tensor<float>> params2{q};
    auto state2 = AdamState::create(params2);
    q.zero_grad();
    adam_step(params2, state2, cfg);
    q.zero_grad();
    for (auto& g : q.grad()) g = 0.37f;
    adam_step(params2, state2, cfg);
    for (int i = 0; i < 4; ++i) CHECK(q.data()[i] == p.data()[i]);
    CHECK(state2.m[0] == state.m[0]);
    CHECK(state2.v[0] == state.v[0]);

    CHECK_THROWS_AS([&] {
        OptimizerConfig bad;
        bad.learning_rate = 0;
        adam_step(params, state, bad);
    }(), std::invalid_argument);
}

TEST_CASE("metrics: trivial cases and definitions") {
    // perfect predictions: everything 1.0, diagonal confusion
    std::vector<std::vector<float>> probs;
    std::vector<int> targets;
    for (int i = 0; i < 12; ++i) {
        std::vector<float> row(4, 0.05f);
        row[i % 4] = 0.85f;
        probs.push_back(row);
        targets.push_back(i % 4);
    }
    auto m = compute_metrics(probs, targets, 4);
    CHECK(m.top1 == 1.0);
    CHECK(m.top5 == 1.0);
    CHECK(m.macro_precision == 1.0);
    CHECK(m.macro_recall == 1.0);
    CHECK(m.macro_f1 == 1.0);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(m.confusion[i][j] == (i == j ? 3u : 0u));
    }

    // true class ranked exactly 5th: in top5, not top1
    std::vector<float> row{0.30f, 0.25f, 0.20f, 0.10f, 0.08f, 0.05f, 0.02f};
    auto one = compute_metrics({row}, {4}, 7);
    CHECK(one.top1 == 0.0);
    CHECK(one.top5 == 1.0);
    auto sixth = compute_metrics({row}, {5}, 7);
    CHECK(sixth.top5 == 0.0);
}

TEST_CASE("metrics match the brute-force oracle on 1000 random pairs") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    const int n = 1000, c = 7;
    std::vector<std::vector<float>> probs(n, std::vector<float>(c));
    std::vector<int> targets(n), predicted(n);
    std::vector<std::vector<double>> drows(n, std::vector<double>(c));
    for (int i = 0; i < n; ++i) {
        double sum = 0;
        for (int j = 0; j < c; ++j) {
            drows[i][j] = dist(rng) + 1e-3;
            sum += drows[i][j];
        }
        for (int j = 0; j < c; ++j) {
            drows[i][j] /= sum;
            probs[i][j] = static_cast<float>(drows[i][j]);
            drows[i][j] = probs[i][j];  // compare both sides in float-rounded space
        }
        targets[i] = static_cast<int>(rng() % c);
        predicted[i] = argmax_class(probs[i]);
    }
    auto m = compute_metrics(probs, targets, c);
    auto macro = oracle::macro_prf(predicted, targets, c);
    CHECK(std::abs(m.macro_precision - macro.precision) < 1e-9);
    CHECK(std::abs(m.macro_recall - macro.recall) < 1e-9);
    CHECK(std::abs(m.macro_f1 - macro.f1) < 1e-9);

    std::size_t top1 = 0, top5 = 0, trace = 0;
    for (int i = 0; i < n; ++i) {
        top1 += predicted[i] == targets[i];
        top5 += oracle::topk_hit(drows[i], targets[i], 5);
    }
    for (int j = 0; j < c; ++j) trace += m.confusion[j][j];
    CHECK(m.top1 == static_cast<double>(top1) / n);
    CHECK(m.top5 == static_cast<double>(top5) / n);
    CHECK(m.top5 >= m.top1);
    CHECK(static_cast<double>(trace) / n == m.top1);  // trace/total == top-1, exactly
}

TEST_CASE("head level resolution") {
    TempDir tmp;
    ToyCorpusOptions opt;
    opt.images_per_class = 1;
    auto corpus = generate_toy_corpus(tmp.path, opt);
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);

    auto three = Model::build(toy_model_spec({2, 4, 8}), 1);
    CHECK(resolve_head_levels(three, manifest.hierarchy, std::nullopt) ==
          std::vector<int>{0, 1, 2});
    auto fine_only = Model::build(toy_model_spec({8}), 1);
    CHECK(resolve_head_levels(fine_only, manifest.hierarchy, std::nullopt) ==
          std::vector<int>{2});
    auto coarse_only = Model::build(toy_model_spec({2}), 1);
    CHECK_THROWS_AS(resolve_head_levels(coarse_only, manifest.hierarchy, std::nullopt),
                    std::invalid_argument);
    CHECK(resolve_head_levels(coarse_only, manifest.hierarchy, std::vector<int>{0}) ==
          std::vector<int>{0});
}

TEST_CASE("zero-epoch training returns initial weights and empty curves") {
    TempDir tmp;
    ToyCorpusOptions opt;
    opt.fine_classes = 2;
    opt.mid_classes = 2;
    opt.coarse_classes = 2;
    opt.images_per_class = 8;
    auto corpus = generate_toy_corpus(tmp.path, opt);
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);
    split_dataset(manifest, {0.75, 0.125, 0.125}, 1);

    auto model = Model::build(toy_model_spec({2}), 5);
    const auto initial = save_checkpoint(model);
    PipelineOptions popts;
    popts.input_size = 32;
    TrainOptions topts;
    topts.epochs = 0;
    auto result = train(model, manifest, popts, topts);
    CHECK(result.curves.empty());
    CHECK(save_checkpoint(model) == initial);
}

TEST_CASE("toy training overfits, is deterministic, and resumes exactly") {
    TempDir tmp;
    ToyCorpusOptions opt;
    opt.fine_classes = 2;
    opt.mid_classes = 1;
    opt.coarse_classes = 1;
    opt.images_per_class = 8;
    auto corpus = generate_toy_corpus(tmp.path, opt);
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);
    split_dataset(manifest, {0.75, 0.125, 0.125}, 2);

    PipelineOptions popts;
    popts.input_size = 32;
    TrainOptions topts;
    topts.epochs = 60;
    topts.batch_size = 8;
    topts.optimizer.learning_rate = 1e-3;  // raised for toy scale
    topts.seed = 9;
    topts.max_steps = 300;
    topts.stop_when_train_perfect = true;

    auto model = Model::build(toy_model_spec({2}), 5);
    auto result = train(model, manifest, popts, topts);
    REQUIRE(!result.curves.empty());
    CHECK(result.steps_to_perfect_train > 0);
    CHECK(result.steps_to_perfect_train <= 300);

    SUBCASE("same seed reproduces the checkpoint bit for bit") {
        auto model2 = Model::build(toy_model_spec({2}), 5);
        auto result2 = train(model2, manifest, popts, topts);
        CHECK(result.final_checkpoint == result2.final_checkpoint);
        CHECK(result.best_checkpoint == result2.best_checkpoint);
    }

    SUBCASE("resume from an interrupted run matches the uninterrupted one") {
        TrainOptions short_opts = topts;
        short_opts.stop_when_train_perfect = false;
        short_opts.max_steps = 0;
        short_opts.epochs = 2;
        auto m_short = Model::build(toy_model_spec({2}), 5);
        auto r_short = train(m_short, manifest, popts, short_opts);

        TrainOptions full_opts = short_opts;
        full_opts.epochs = 4;
        auto m_full = Model::build(toy_model_spec({2}), 5);
        auto r_full = train(m_full, manifest, popts, full_opts);

        TrainOptions resume_opts = full_opts;
        resume_opts.resume_checkpoint = r_short.final_checkpoint;
        auto m_resumed = Model::build(toy_model_spec({2}), 5);
        auto r_resumed = train(m_resumed, manifest, popts, resume_opts);

        REQUIRE(r_resumed.curves.size() == 2);
        REQUIRE(r_full.curves.size() == 4);
        for (int i = 0; i < 2; ++i) {
            CHECK(r_resumed.curves[i].epoch == r_full.curves[2 + i].epoch);
            CHECK(r_resumed.curves[i].train_loss == r_full.curves[2 + i].train_loss);
            CHECK(r_resumed.curves[i].val_top1 == r_full.curves[2 + i].val_top1);
        }
        CHECK(r_resumed.final_checkpoint == r_full.final_checkpoint);
    }

    SUBCASE("evaluate on the memorized corpus reports perfect training metrics") {
        auto trained = load_checkpoint(result.final_checkpoint);
        auto report = evaluate(trained, manifest, popts, Split::kTrain);
        REQUIRE(report.levels.size() == 1);
        CHECK(report.levels[0].top1 == 1.0);
        CHECK(report.levels[0].top5 >= report.levels[0].top1);
        std::size_t trace = 0, total = 0;
        for (int i = 0; i < report.levels[0].classes; ++i) {
            for (int j = 0; j < report.levels[0].classes; ++j) {
                total += report.levels[0].confusion[i][j];
                if (i == j) trace += report.levels[0].confusion[i][j];
            }
        }
        CHECK(static_cast<double>(trace) / static_cast<double>(total) ==
              report.levels[0].top1);
    }
}

TEST_CASE("sweep emits one complete row per unit count with growing parameter counts") {
    TempDir tmp;
    ToyCorpusOptions opt;
    opt.fine_classes = 2;
    opt.mid_classes = 1;
    opt.coarse_classes = 1;
    opt.images_per_class = 4;
    auto corpus = generate_toy_corpus(tmp.path, opt);
    auto manifest = load_manifest(corpus.manifest_csv, corpus.hierarchy_csv);
    split_dataset(manifest, {0.5, 0.25, 0.25}, 2);

    PipelineOptions popts;
    popts.input_size = 32;
    TrainOptions topts;
    topts.epochs = 1;
    topts.batch_size = 4;
    topts.optimizer.learning_rate = 1e-3;

    auto rows = sweep_refinement_blocks(toy_model_spec({2}), {0, 4}, manifest, popts, topts);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].num_units == 0);
    CHECK(rows[1].num_units == 4);
    CHECK(rows[1].params > rows[0].params);
    auto csv = sweep_csv(rows);
    CHECK(csv.find("num_units,params,val_top1") == 0);
}
