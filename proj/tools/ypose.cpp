// Command-line front end: build/inspect models, preprocess corpora, train,
// evaluate, predict, sweep refinement depth, and export activation maps.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ypose/config.hpp"
#include "ypose/data.hpp"
#include "ypose/image.hpp"
#include "ypose/metrics.hpp"
#include "ypose/model.hpp"
#include "ypose/roi.hpp"
#include "ypose/toy.hpp"
#include "ypose/train.hpp"

namespace fs = std::filesystem;
using namespace ypose;

namespace {

// Shared flags registered on every subcommand; values funnel through
// apply_config_key so flags always beat the config file, which beats the
// variant preset.
struct CommonFlags {
    std::string config_file, variant;
    std::vector<std::pair<std::string, std::string>> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key=value config file");
        cmd->add_option("--variant", variant,
                        "preset: ypose | ypose-lite | b0 | b4 | b5 | mv2 | toy");
        auto add = [this, cmd](const std::string& flag, const std::string& key,
                               const std::string& help) {
            cmd->add_option_function<std::string>(
                   flag,
                   [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help)
                ->expected(1);
        };
        add("--seed", "seed", "global RNG seed");
        add("--heads", "heads", "comma-separated head class counts");
        add("--refinement-units", "refinement_units", "number of refinement units");
        add("--epochs", "epochs", "training epochs");
        add("--batch-size", "batch_size", "mini-batch size");
        add("--lr", "lr", "learning rate");
        add("--out", "out", "output directory");
        add("--manifest", "manifest", "dataset manifest CSV");
        add("--hierarchy", "hierarchy", "label hierarchy CSV");
        add("--checkpoint", "checkpoint", "checkpoint file");
        add("--head-level", "head_level", "single-head hierarchy level: coarse | mid | fine");
        cmd->add_flag_callback(
            "--no-roi", [this] { overrides.emplace_back("roi_enabled", "0"); },
            "disable ROI segmentation (whole-frame resize)");
        cmd->add_flag_callback(
            "--no-refinement", [this] { overrides.emplace_back("refinement_enabled", "0"); },
            "drop the refinement stage");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!variant.empty()) apply_variant(cfg, variant);
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        for (const auto& [key, value] : overrides) apply_config_key(cfg, key, value);
        cfg.validate();
        return cfg;
    }
};

PipelineOptions pipeline_options(const RunConfig& cfg) {
    PipelineOptions popts;
    popts.input_size = cfg.model.input_size;
    popts.roi_enabled = cfg.roi_enabled;
    return popts;
}

// For commands that load a checkpoint: the restored spec decides the input
// size, the config only controls ROI behavior.
PipelineOptions pipeline_options_for_model(const RunConfig& cfg, const Model& model) {
    PipelineOptions popts;
    popts.input_size = model.spec().input_size;
    popts.roi_enabled = cfg.roi_enabled;
    return popts;
}

DatasetManifest load_split_manifest(const RunConfig& cfg) {
    if (cfg.manifest_path.empty() || cfg.hierarchy_path.empty()) {
        throw ConfigError("this command needs --manifest and --hierarchy");
    }
    auto manifest = load_manifest(cfg.manifest_path, cfg.hierarchy_path);
    for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
    split_dataset(manifest, cfg.ratios, cfg.seed);
    return manifest;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void write_text(const fs::path& path, const std::string& text) {
    write_file(path, text.data(), text.size());
}

Model load_model_checkpoint(const RunConfig& cfg) {
    fs::path path = cfg.checkpoint_path;
    if (path.empty()) path = cfg.out_dir / "best.ckpt";
    const auto bytes = read_file(path);
    return load_checkpoint(bytes);
}

Tensor<float> prepare_single_image(const RunConfig& cfg, const PipelineOptions& popts,
                                   const fs::path& image_path, bool synthetic) {
    const Image img = read_image(image_path);
    RoiAnnotation ann;
    if (cfg.roi_enabled && !synthetic) ann = segment_person(img, image_path);
    const auto refined = refine_image(img, ann, synthetic);
    auto chw = to_model_input(refined, popts);
    std::vector<float> data(chw.data().begin(), chw.data().end());
    return Tensor<float>::from_data({1, 3, popts.input_size, popts.input_size},
                                    std::move(data));
}

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::kCropped: return "cropped";
        case Provenance::kBypassSynthetic: return "bypass_synthetic";
        case Provenance::kFallbackFull: return "fallback_full";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

void cmd_build(const RunConfig& cfg) {
    const ModelSpec spec = cfg.effective_model();
    const auto model = Model::build(spec, cfg.seed);
    const auto table = scaled_backbone(backbone_table(spec.backbone), spec.scaling);
    std::cout << format_table(table);
    std::cout << "refinement_units " << spec.refinement.num_units << " (growth "
              << spec.refinement.growth_rate << ", bottleneck "
              << spec.refinement.bottleneck_factor << ")\n";
    std::cout << "feature_channels " << model.feature_channels() << "\n";

    const auto rows = profile(model, spec.input_size);
    const std::size_t params = count_params(model);
    const std::size_t macs = count_macs(model, spec.input_size);
    std::cout << std::fixed;
    std::cout << "total_params " << params << " (" << std::setprecision(2) << params / 1e6
              << " M)\n";
    std::cout << "total_macs_at_" << spec.input_size << " " << macs << " ("
              << std::setprecision(4) << macs / 1e9 << " GMACs)\n";
    std::cout.unsetf(std::ios_base::floatfield);
    const auto csv = profile_csv(rows);
    std::cout << csv;
    if (cfg.out_dir_set) {
        fs::create_directories(cfg.out_dir);
        write_text(cfg.out_dir / "layers.csv", csv);
        std::cout << "wrote " << (cfg.out_dir / "layers.csv").string() << "\n";
    }
}

void cmd_preprocess(const RunConfig& cfg) {
    if (cfg.manifest_path.empty() || cfg.hierarchy_path.empty()) {
        throw ConfigError("preprocess needs --manifest and --hierarchy");
    }
    auto manifest = load_manifest(cfg.manifest_path, cfg.hierarchy_path);
    for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
    fs::create_directories(cfg.out_dir / "images");

    std::ostringstream report;
    report << "path,provenance,x0,y0,x1,y1,confidence\n";
    std::size_t failures = 0;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        try {
            const Image img = read_image(manifest.image_path(i));
            RoiAnnotation ann;
            if (cfg.roi_enabled && !rec.synthetic) {
                ann = segment_person(img, manifest.image_path(i));
            }
            const auto refined = refine_image(img, ann, rec.synthetic);

            int x0 = 0, y0 = 0, x1 = img.width, y1 = img.height;
            if (refined.provenance == Provenance::kCropped) {
                x0 = ann.x0;
                y0 = ann.y0;
                x1 = ann.x1;
                y1 = ann.y1;
            }
            Image out_img;
            out_img.width = kRefinedSize;
            out_img.height = kRefinedSize;
            out_img.pixels.resize(3ull * kRefinedSize * kRefinedSize);
            const auto px = refined.pixels.data();
            for (int y = 0; y < kRefinedSize; ++y) {
                for (int x = 0; x < kRefinedSize; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        const float v =
                            px[(static_cast<std::size_t>(c) * kRefinedSize + y) * kRefinedSize +
                               x];
                        out_img.at(y, x, c) =
                            static_cast<std::uint8_t>(std::clamp(v + 0.5f, 0.0f, 255.0f));
                    }
                }
            }
            const fs::path out_name = fs::path(rec.path).filename();
            write_ppm(cfg.out_dir / "images" / out_name, out_img);
            report << rec.path << "," << provenance_name(refined.provenance) << "," << x0 << ","
                   << y0 << "," << x1 << "," << y1 << "," << ann.confidence << "\n";
        } catch (const std::exception& e) {
            ++failures;
            std::cerr << "preprocess: skipping '" << rec.path << "': " << e.what() << "\n";
        }
    }
    write_text(cfg.out_dir / "report.csv", report.str());
    std::cout << "preprocessed " << (manifest.records.size() - failures) << "/"
              << manifest.records.size() << " images into "
              << (cfg.out_dir / "images").string() << "\n";
    std::cout << "wrote " << (cfg.out_dir / "report.csv").string() << "\n";
}

void cmd_train(const RunConfig& cfg, const std::string& resume_path) {
    auto manifest = load_split_manifest(cfg);
    fs::create_directories(cfg.out_dir);

    auto model = Model::build(cfg.effective_model(), cfg.seed);
    TrainOptions topts;
    topts.epochs = cfg.epochs;
    topts.batch_size = cfg.batch_size;
    topts.optimizer = cfg.optimizer;
    topts.seed = cfg.seed;
    topts.head_levels = cfg.head_levels();
    topts.checkpoint_path = cfg.out_dir / "best.ckpt";
    if (!resume_path.empty()) topts.resume_checkpoint = read_file(resume_path);

    const auto result = train(model, manifest, pipeline_options(cfg), topts);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    write_text(cfg.out_dir / "curves.csv", curves_csv(result.curves));
    write_file(cfg.out_dir / "last.ckpt", result.final_checkpoint.data(),
               result.final_checkpoint.size());
    for (const auto& s : result.curves) {
        std::cout << "epoch " << s.epoch << " steps " << s.steps_done << " train_top1 "
                  << s.train_top1 << " val_top1 " << s.val_top1 << "\n";
    }
    std::cout << "steps " << result.total_steps << " best_val_top1 " << result.best_metric
              << "\n";
    if (result.steps_to_perfect_train >= 0) {
        std::cout << "train_top1 reached 1.0 at step " << result.steps_to_perfect_train << "\n";
    }
    std::cout << "wrote " << (cfg.out_dir / "best.ckpt").string() << ", "
              << (cfg.out_dir / "last.ckpt").string() << ", "
              << (cfg.out_dir / "curves.csv").string() << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& split_name) {
    auto manifest = load_split_manifest(cfg);
    auto model = load_model_checkpoint(cfg);
    Split split;
    if (split_name == "train") split = Split::kTrain;
    else if (split_name == "val") split = Split::kVal;
    else if (split_name == "test") split = Split::kTest;
    else throw ConfigError("--split must be train, val, or test");

    const auto report = evaluate(model, manifest, pipeline_options_for_model(cfg, model), split,
                                 cfg.head_levels(), cfg.batch_size);
    fs::create_directories(cfg.out_dir);
    std::ostringstream metrics;
    metrics << "level,classes,top1,top5,macro_precision,macro_recall,macro_f1\n";
    for (std::size_t h = 0; h < report.levels.size(); ++h) {
        const auto& m = report.levels[h];
        std::cout << "level " << h << " (" << m.classes << " classes): top1 " << m.top1
                  << " top5 " << m.top5 << " macroP " << m.macro_precision << " macroR "
                  << m.macro_recall << " macroF1 " << m.macro_f1 << "\n";
        metrics << h << "," << m.classes << "," << m.top1 << "," << m.top5 << ","
                << m.macro_precision << "," << m.macro_recall << "," << m.macro_f1 << "\n";
        write_text(cfg.out_dir / ("confusion_level" + std::to_string(h) + ".csv"),
                   confusion_csv(m));
    }
    write_text(cfg.out_dir / "metrics.csv", metrics.str());
    std::cout << "wrote " << (cfg.out_dir / "metrics.csv").string() << "\n";
}

void cmd_predict(const RunConfig& cfg, const std::string& image_path, bool synthetic) {
    if (cfg.hierarchy_path.empty()) throw ConfigError("predict needs --hierarchy");
    if (image_path.empty()) throw ConfigError("predict needs --image");
    auto hierarchy = LabelHierarchy::load(cfg.hierarchy_path);
    auto model = load_model_checkpoint(cfg);
    const auto popts = pipeline_options_for_model(cfg, model);
    auto input = prepare_single_image(cfg, popts, image_path, synthetic);

    NoGradGuard no_grad;
    const auto probs = model.forward(input, /*training=*/false);
    const auto levels = resolve_head_levels(model, hierarchy, cfg.head_levels());
    const char* level_names[3] = {"coarse", "mid", "fine"};
    for (std::size_t h = 0; h < probs.size(); ++h) {
        const int c = probs[h].dim(1);
        std::vector<float> row(c);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            row[j] = probs[h].at({0, j});
            sum += row[j];
        }
        const int best = argmax_class(row);
        const auto& names = levels[h] == 0   ? hierarchy.coarse_names
                            : levels[h] == 1 ? hierarchy.mid_names
                                             : hierarchy.fine_names;
        std::cout << level_names[levels[h]] << ": " << names[best] << " p=" << row[best]
                  << " (sum " << sum << ")\n";
    }
}

void cmd_sweep(const RunConfig& cfg, const std::string& units_csv) {
    auto manifest = load_split_manifest(cfg);
    std::vector<int> counts;
    std::istringstream in(units_csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            counts.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("--units expects a comma-separated list of integers");
        }
    }
    if (counts.empty()) throw ConfigError("--units expects at least one count");

    TrainOptions topts;
    topts.epochs = cfg.epochs;
    topts.batch_size = cfg.batch_size;
    topts.optimizer = cfg.optimizer;
    topts.seed = cfg.seed;
    topts.head_levels = cfg.head_levels();
    const auto rows = sweep_refinement_blocks(cfg.effective_model(), counts, manifest,
                                              pipeline_options(cfg), topts);
    const auto csv = sweep_csv(rows);
    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "sweep.csv", csv);
    std::cout << csv;
    std::cout << "wrote " << (cfg.out_dir / "sweep.csv").string() << "\n";
}

void cmd_heatmap(const RunConfig& cfg, const std::string& image_path, bool synthetic) {
    if (image_path.empty()) throw ConfigError("heatmap needs --image");
    auto model = load_model_checkpoint(cfg);
    const auto popts = pipeline_options_for_model(cfg, model);
    auto input = prepare_single_image(cfg, popts, image_path, synthetic);
    const auto heat = activation_map(model, input);

    GrayImage img;
    img.width = heat.dim(1);
    img.height = heat.dim(0);
    img.pixels.resize(heat.numel());
    for (std::size_t i = 0; i < heat.numel(); ++i) {
        img.pixels[i] =
            static_cast<std::uint8_t>(std::clamp(heat.data()[i] * 255.0f + 0.5f, 0.0f, 255.0f));
    }
    fs::create_directories(cfg.out_dir);
    const auto out = cfg.out_dir / "heatmap.pgm";
    write_pgm(out, img);
    std::cout << "wrote " << out.string() << "\n";
}

void cmd_gen_toy(const RunConfig& cfg, const ToyCorpusOptions& opt) {
    ToyCorpusOptions o = opt;
    o.seed = cfg.seed;
    const auto corpus = generate_toy_corpus(cfg.out_dir, o);
    std::cout << "generated " << corpus.num_images << " images\n";
    std::cout << "manifest " << corpus.manifest_csv.string() << "\n";
    std::cout << "hierarchy " << corpus.hierarchy_csv.string() << "\n";
    std::cout << "truth " << corpus.truth_csv.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"yoga-pose recognition models: compound-scaled backbones with dense "
                 "refinement blocks and hierarchical heads"};
    app.require_subcommand(1);

    CommonFlags build_flags, preprocess_flags, train_flags, eval_flags, predict_flags,
        sweep_flags, heatmap_flags, toy_flags;

    auto* build = app.add_subcommand("build", "build a model and print its accounting tables");
    build_flags.attach(build);

    auto* preprocess =
        app.add_subcommand("preprocess", "ROI-refine a corpus into 224x224 images");
    preprocess_flags.attach(preprocess);

    auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
    train_flags.attach(train_cmd);
    std::string resume_path;
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on one split");
    eval_flags.attach(eval_cmd);
    std::string split_name = "test";
    eval_cmd->add_option("--split", split_name, "train | val | test (default test)");

    auto* predict = app.add_subcommand("predict", "hierarchical prediction for one image");
    predict_flags.attach(predict);
    std::string predict_image;
    bool predict_synthetic = false;
    predict->add_option("--image", predict_image, "input image (PPM/PGM)");
    predict->add_flag("--synthetic", predict_synthetic, "bypass ROI cropping for this image");

    auto* sweep = app.add_subcommand("sweep", "train across refinement-unit counts");
    sweep_flags.attach(sweep);
    std::string units_csv = "0,4,16";
    sweep->add_option("--units", units_csv, "comma-separated unit counts (default 0,4,16)");

    auto* heatmap = app.add_subcommand("heatmap", "final-feature activation map as PGM");
    heatmap_flags.attach(heatmap);
    std::string heatmap_image;
    bool heatmap_synthetic = false;
    heatmap->add_option("--image", heatmap_image, "input image (PPM/PGM)");
    heatmap->add_flag("--synthetic", heatmap_synthetic, "bypass ROI cropping for this image");

    auto* gen_toy = app.add_subcommand("gen-toy", "generate the synthetic blob corpus");
    toy_flags.attach(gen_toy);
    ToyCorpusOptions toy_opt;
    gen_toy->add_option("--fine-classes", toy_opt.fine_classes);
    gen_toy->add_option("--mid-classes", toy_opt.mid_classes);
    gen_toy->add_option("--coarse-classes", toy_opt.coarse_classes);
    gen_toy->add_option("--per-class", toy_opt.images_per_class);
    gen_toy->add_option("--width", toy_opt.width);
    gen_toy->add_option("--height", toy_opt.height);
    gen_toy->add_option("--synthetic-fraction", toy_opt.synthetic_fraction);

    try {
        app.parse(argc, argv);
        if (build->parsed()) cmd_build(build_flags.resolve());
        else if (preprocess->parsed()) cmd_preprocess(preprocess_flags.resolve());
        else if (train_cmd->parsed()) cmd_train(train_flags.resolve(), resume_path);
        else if (eval_cmd->parsed()) cmd_eval(eval_flags.resolve(), split_name);
        else if (predict->parsed())
            cmd_predict(predict_flags.resolve(), predict_image, predict_synthetic);
        else if (sweep->parsed()) cmd_sweep(sweep_flags.resolve(), units_csv);
        else if (heatmap->parsed())
            cmd_heatmap(heatmap_flags.resolve(), heatmap_image, heatmap_synthetic);
        else if (gen_toy->parsed()) cmd_gen_toy(toy_flags.resolve(), toy_opt);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the usage message
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
