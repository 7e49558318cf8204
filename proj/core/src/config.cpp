#include "sparsemask/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sparsemask {

using ordered_json = nlohmann::ordered_json;

void Config::validate() const {
    task.validate();
    encoder.validate();
    if (task.image_size % encoder.max_stride() != 0) {
        throw std::runtime_error("config: image_size " + std::to_string(task.image_size) +
                                 " not divisible by encoder stride " +
                                 std::to_string(encoder.max_stride()));
    }
    if (decoder_channels < 1) throw std::runtime_error("config: decoder_channels < 1");
    if (search.epochs < 1 || search.batch < 1) throw std::runtime_error("config: bad search params");
    if (search.batch > task.num_train) throw std::runtime_error("config: batch > num_train");
    if (!(search.sigma > 0.0 && search.sigma < 1.0)) {
        throw std::runtime_error("config: sigma must be in (0,1)");
    }
    if (search.lambda < 0.0) throw std::runtime_error("config: lambda must be >= 0");
    if (search.lr_encoder <= 0.0 || search.lr_decoder <= 0.0 || search.lr_gates <= 0.0) {
        throw std::runtime_error("config: learning rates must be positive");
    }
    if (!alpha_override.empty() &&
        alpha_override.size() != static_cast<std::size_t>(encoder.num_stages())) {
        throw std::runtime_error("config: alpha_override must list one value per stage");
    }
}

FdnOptions Config::fdn_options() const {
    FdnOptions opt;
    opt.num_classes = task.num_classes;
    opt.activation = decoder_activation;
    opt.pointwise = pointwise_decoder;
    return opt;
}

Config default_config() {
    Config cfg;
    cfg.task.kind = TaskKind::multi_class_shapes;
    cfg.task.image_size = 64;
    cfg.task.num_classes = 5;
    cfg.task.num_train = 500;
    cfg.task.num_val = 100;
    cfg.task.seed = 7;
    cfg.task.scale_min = 0.10;
    cfg.task.scale_max = 0.55;
    cfg.encoder.name = "toy4";
    cfg.encoder.stages = {{16, 2}, {32, 4}, {64, 8}, {96, 16}};
    cfg.decoder_channels = 32;
    cfg.search = SearchParams{};
    cfg.regularizer = Regularizer::sparse;
    return cfg;
}

namespace {

void reject_unknown(const ordered_json& obj, const std::vector<std::string>& known,
                    const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw std::runtime_error("config: unknown field '" + path + "." + it.key() + "'");
        }
    }
}

template <typename T>
void maybe(const ordered_json& obj, const std::string& key, T& target, const std::string& path) {
    if (!obj.contains(key)) return;
    try {
        target = obj.at(key).get<T>();
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad value at '" + path + "." + key + "'");
    }
}

}  // namespace

Config config_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("config: parse error: ") + e.what());
    }
    Config cfg = default_config();
    reject_unknown(j,
                   {"task", "encoder", "decoder_channels", "search", "regularizer",
                    "decoder_activation", "pointwise_decoder", "alpha_override", "cache_dir"},
                   "$");

    if (j.contains("task")) {
        const auto& t = j.at("task");
        reject_unknown(t,
                       {"kind", "image_size", "num_classes", "num_train", "num_val", "seed",
                        "shape_scale_range"},
                       "$.task");
        std::string kind = task_kind_name(cfg.task.kind);
        maybe(t, "kind", kind, "$.task");
        cfg.task.kind = task_kind_from_name(kind);
        if (cfg.task.kind != TaskKind::multi_class_shapes) cfg.task.num_classes = 2;
        maybe(t, "image_size", cfg.task.image_size, "$.task");
        maybe(t, "num_classes", cfg.task.num_classes, "$.task");
        maybe(t, "num_train", cfg.task.num_train, "$.task");
        maybe(t, "num_val", cfg.task.num_val, "$.task");
        long seed = static_cast<long>(cfg.task.seed);
        maybe(t, "seed", seed, "$.task");
        cfg.task.seed = static_cast<std::uint64_t>(seed);
        if (t.contains("shape_scale_range")) {
            std::vector<double> r = t.at("shape_scale_range").get<std::vector<double>>();
            if (r.size() != 2) {
                throw std::runtime_error("config: shape_scale_range must be [min,max]");
            }
            cfg.task.scale_min = r[0];
            cfg.task.scale_max = r[1];
        }
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        reject_unknown(e, {"name", "stages"}, "$.encoder");
        cfg.encoder.stages.clear();
        maybe(e, "name", cfg.encoder.name, "$.encoder");
        if (!e.contains("stages") || !e.at("stages").is_array()) {
            throw std::runtime_error("config: '$.encoder.stages' must be an array");
        }
        int idx = 0;
        for (const auto& st : e.at("stages")) {
            const std::string p = "$.encoder.stages[" + std::to_string(idx++) + "]";
            reject_unknown(st, {"channels", "stride"}, p);
            EncoderStageSpec s;
            maybe(st, "channels", s.channels, p);
            maybe(st, "stride", s.stride, p);
            cfg.encoder.stages.push_back(s);
        }
    }
    maybe(j, "decoder_channels", cfg.decoder_channels, "$");
    if (j.contains("search")) {
        const auto& s = j.at("search");
        reject_unknown(s,
                       {"epochs", "batch", "lr_encoder", "lr_decoder", "lr_gates", "lambda",
                        "sigma", "seed", "retrain_epochs"},
                       "$.search");
        maybe(s, "epochs", cfg.search.epochs, "$.search");
        maybe(s, "batch", cfg.search.batch, "$.search");
        maybe(s, "lr_encoder", cfg.search.lr_encoder, "$.search");
        maybe(s, "lr_decoder", cfg.search.lr_decoder, "$.search");
        maybe(s, "lambda", cfg.search.lambda, "$.search");
        maybe(s, "sigma", cfg.search.sigma, "$.search");
        maybe(s, "seed", cfg.search.seed, "$.search");
        maybe(s, "retrain_epochs", cfg.search.retrain_epochs, "$.search");
        if (s.contains("lr_gates")) {
            maybe(s, "lr_gates", cfg.search.lr_gates, "$.search");
        } else {
            cfg.search.lr_gates = 500.0 * cfg.search.lr_decoder;
        }
    }
    if (j.contains("regularizer")) {
        const std::string r = j.at("regularizer").get<std::string>();
        if (r == "sparse") cfg.regularizer = Regularizer::sparse;
        else if (r == "l1") cfg.regularizer = Regularizer::l1;
        else throw std::runtime_error("config: regularizer must be 'sparse' or 'l1'");
    }
    if (j.contains("decoder_activation")) {
        const std::string a = j.at("decoder_activation").get<std::string>();
        if (a == "relu") cfg.decoder_activation = DecoderActivation::relu;
        else if (a == "none") cfg.decoder_activation = DecoderActivation::none;
        else throw std::runtime_error("config: decoder_activation must be 'relu' or 'none'");
    }
    maybe(j, "pointwise_decoder", cfg.pointwise_decoder, "$");
    if (j.contains("alpha_override")) {
        cfg.alpha_override = j.at("alpha_override").get<std::vector<double>>();
    }
    maybe(j, "cache_dir", cfg.cache_dir, "$");
    cfg.validate();
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::string config_to_json(const Config& cfg) {
    ordered_json j;
    j["task"] = ordered_json::object();
    j["task"]["kind"] = task_kind_name(cfg.task.kind);
    j["task"]["image_size"] = cfg.task.image_size;
    j["task"]["num_classes"] = cfg.task.num_classes;
    j["task"]["num_train"] = cfg.task.num_train;
    j["task"]["num_val"] = cfg.task.num_val;
    j["task"]["seed"] = static_cast<long>(cfg.task.seed);
    j["task"]["shape_scale_range"] = {cfg.task.scale_min, cfg.task.scale_max};
    j["encoder"] = ordered_json::object();
    j["encoder"]["name"] = cfg.encoder.name;
    j["encoder"]["stages"] = ordered_json::array();
    for (const auto& s : cfg.encoder.stages) {
        ordered_json st;
        st["channels"] = s.channels;
        st["stride"] = s.stride;
        j["encoder"]["stages"].push_back(st);
    }
    j["decoder_channels"] = cfg.decoder_channels;
    j["search"] = ordered_json::object();
    j["search"]["epochs"] = cfg.search.epochs;
    j["search"]["batch"] = cfg.search.batch;
    j["search"]["lr_encoder"] = cfg.search.lr_encoder;
    j["search"]["lr_decoder"] = cfg.search.lr_decoder;
    j["search"]["lr_gates"] = cfg.search.lr_gates;
    j["search"]["lambda"] = cfg.search.lambda;
    j["search"]["sigma"] = cfg.search.sigma;
    j["search"]["seed"] = cfg.search.seed;
    j["search"]["retrain_epochs"] = cfg.search.retrain_epochs;
    j["regularizer"] = cfg.regularizer == Regularizer::sparse ? "sparse" : "l1";
    j["decoder_activation"] = cfg.decoder_activation == DecoderActivation::relu ? "relu" : "none";
    j["pointwise_decoder"] = cfg.pointwise_decoder;
    if (!cfg.alpha_override.empty()) j["alpha_override"] = cfg.alpha_override;
    if (!cfg.cache_dir.empty()) j["cache_dir"] = cfg.cache_dir;
    return j.dump(2) + "\n";
}

std::string config_digest(const Config& cfg) {
    const std::string text = config_to_json(cfg);
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace sparsemask
