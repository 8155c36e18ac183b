#include "ypose/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace ypose {

ModelSpec RunConfig::effective_model() const {
    ModelSpec spec = model;
    if (!refinement_enabled) spec.refinement.num_units = 0;
    return spec;
}

std::optional<std::vector<int>> RunConfig::head_levels() const {
    if (head_level == "auto") return std::nullopt;
    int level;
    if (head_level == "coarse") level = 0;
    else if (head_level == "mid") level = 1;
    else if (head_level == "fine") level = 2;
    else throw ConfigError("head_level must be auto, coarse, mid, or fine");
    if (model.heads.size() != 1) {
        throw ConfigError("head_level is only meaningful for single-head models");
    }
    return std::vector<int>{level};
}

void RunConfig::validate() const {
    try {
        effective_model().validate();
        optimizer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (epochs < 0) throw ConfigError("epochs cannot be negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    head_levels();  // validates the head_level string
}

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "yes") return true;
    if (value == "0" || value == "false" || value == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::istringstream in(value);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        out.push_back(static_cast<int>(parse_int(key, tok)));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

}  // namespace

void apply_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "backbone") c.model.backbone = value;
    else if (key == "width") c.model.scaling.width = parse_double(key, value);
    else if (key == "depth") c.model.scaling.depth = parse_double(key, value);
    else if (key == "depth_divisor") c.model.scaling.depth_divisor = static_cast<int>(parse_int(key, value));
    else if (key == "min_depth") c.model.scaling.min_depth = static_cast<int>(parse_int(key, value));
    else if (key == "refinement_units") c.model.refinement.num_units = static_cast<int>(parse_int(key, value));
    else if (key == "growth_rate") c.model.refinement.growth_rate = static_cast<int>(parse_int(key, value));
    else if (key == "bottleneck_factor") c.model.refinement.bottleneck_factor = static_cast<int>(parse_int(key, value));
    else if (key == "heads") c.model.heads = parse_int_list(key, value);
    else if (key == "input_size") c.model.input_size = static_cast<int>(parse_int(key, value));
    else if (key == "dropout") c.model.dropout_rate = parse_double(key, value);
    else if (key == "bn_eps") c.model.norm.eps = parse_double(key, value);
    else if (key == "bn_momentum") c.model.norm.momentum = parse_double(key, value);
    else if (key == "lr") c.optimizer.learning_rate = parse_double(key, value);
    else if (key == "beta1") c.optimizer.beta1 = parse_double(key, value);
    else if (key == "beta2") c.optimizer.beta2 = parse_double(key, value);
    else if (key == "adam_eps") c.optimizer.eps = parse_double(key, value);
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "train_ratio") c.ratios.train = parse_double(key, value);
    else if (key == "val_ratio") c.ratios.val = parse_double(key, value);
    else if (key == "test_ratio") c.ratios.test = parse_double(key, value);
    else if (key == "roi_enabled") c.roi_enabled = parse_bool(key, value);
    else if (key == "refinement_enabled") c.refinement_enabled = parse_bool(key, value);
    else if (key == "head_level") c.head_level = value;
    else if (key == "manifest") c.manifest_path = value;
    else if (key == "hierarchy") c.hierarchy_path = value;
    else if (key == "out") {
        c.out_dir = value;
        c.out_dir_set = true;
    }
    else if (key == "checkpoint") c.checkpoint_path = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const auto end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": expected key=value");
        }
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t");
            return s.substr(b, e - b + 1);
        };
        apply_config_key(config, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

void apply_variant(RunConfig& c, const std::string& variant) {
    auto backbone_scale = [&](const std::string& name, double w, double d) {
        c.model.backbone = name;
        c.model.scaling = {w, d, 8, 8};
    };
    if (variant == "ypose") {
        backbone_scale("efficientnet", 1.4, 1.8);
        c.model.refinement = {32, 4, 16};
        c.model.heads = {6, 20, 82};
    } else if (variant == "ypose-lite") {
        backbone_scale("mobilenet_v2", 1.0, 1.0);
        c.model.refinement = {32, 4, 16};
        c.model.heads = {6, 20, 82};
    } else if (variant == "b0" || variant == "b4" || variant == "b5") {
        // b5 coefficients come from the reference implementation registry
        const auto coeffs = variant_coefficients(variant);
        backbone_scale("efficientnet", coeffs->width, coeffs->depth);
        c.model.refinement.num_units = 0;
        c.model.heads = {82};
    } else if (variant == "mv2") {
        backbone_scale("mobilenet_v2", 1.0, 1.0);
        c.model.refinement.num_units = 0;
        c.model.heads = {82};
    } else if (variant == "toy") {
        backbone_scale("efficientnet", 0.25, 0.25);
        c.model.refinement = {8, 4, 2};
        c.model.heads = {2, 4, 8};
        c.model.input_size = 32;
        c.model.norm.momentum = 0.9;
        c.optimizer.learning_rate = 1e-3;
        c.epochs = 80;
        c.batch_size = 8;
    } else {
        throw ConfigError("unknown variant '" + variant +
                          "' (expected ypose, ypose-lite, b0, b4, b5, mv2, or toy)");
    }
}

}  // namespace ypose
