#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vllfl/errors.hpp"
#include "vllfl/federation.hpp"
#include "vllfl/trainer.hpp"
#include "vllfl/world.hpp"

namespace vllfl {

// ---------------------------------------------------------------------------
// Experiment configuration: a strict key tree. Every key must exist in the
// default tree with a matching type; unknown keys anywhere are hard errors,
// so a typo can never silently fall back to a default.
// ---------------------------------------------------------------------------

inline nlohmann::json default_config_json() {
    return nlohmann::json{
        {"seed", 42},
        {"method", "vllfl"},
        {"out_dir", "runs/exp"},
        {"world",
         {{"dim", 64},
          {"num_classes", 6},
          {"beta", 3.5},
          {"sigma_tok", 0.1},
          {"sigma_img", 0.1},
          {"sigma_box", 0.05},
          {"tau", 10.0},
          {"score_center", 0.75},
          {"box_step", 0.2},
          {"box_threshold", 0.3},
          {"text_threshold", 0.25},
          {"class_names", nlohmann::json::array()}}},
        {"tasks",
         {{"num_clients", 3}, {"classes_per_client", 2}, {"scenes_per_client", 100}}},
        {"model", {{"prompt_width", 4}, {"hidden_dim", 64}}},
        {"federation",
         {{"rounds", 500},
          {"local_epochs", 1},
          {"participation_rate", 0.7},
          {"batch_size", 4},
          {"learning_rate", 0.002},
          {"weight_decay", 1e-4}}},
        {"network", {{"bandwidth_mbps", 100.0}, {"latency_s", 0.0}}},
        {"eval", {{"cadence", 10}}},
        {"base_adaptation_steps", 0},
        // Per-stream seeds; null means "derive from the master seed".
        {"seeds",
         {{"init", nullptr},
          {"selection", nullptr},
          {"world", nullptr},
          {"scenes", nullptr},
          {"batching", nullptr}}},
    };
}

namespace detail {

inline bool type_compatible(const nlohmann::json& def, const nlohmann::json& value) {
    if (def.is_null()) return value.is_null() || value.is_number();
    if (def.is_number() && value.is_number()) return true;
    if (def.is_string() && value.is_string()) return true;
    if (def.is_boolean() && value.is_boolean()) return true;
    if (def.is_array() && value.is_array()) return true;
    if (def.is_object() && value.is_object()) return true;
    return false;
}

inline void merge_strict(nlohmann::json& dst, const nlohmann::json& src,
                         const std::string& prefix) {
    for (const auto& [key, value] : src.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!dst.contains(key)) throw config_error("unknown config key '" + path + "'");
        nlohmann::json& slot = dst[key];
        if (slot.is_object() && !slot.empty()) {
            if (!value.is_object()) {
                throw config_error("config key '" + path + "' must be an object");
            }
            merge_strict(slot, value, path);
        } else {
            if (!type_compatible(slot, value)) {
                throw config_error("config key '" + path + "' has the wrong type");
            }
            slot = value;
        }
    }
}

}  // namespace detail

// Apply one "--set key=value" override. The dotted path must name an
// existing leaf; the value is parsed as JSON when possible, else kept as a
// string.
inline void apply_override(nlohmann::json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw config_error("override '" + assignment + "' is not of the form key=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(value_text);
    } catch (const nlohmann::json::exception&) {
        value = value_text;  // bare string
    }

    nlohmann::json* node = &config;
    std::size_t start = 0;
    std::string walked;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos
                                                       ? std::string::npos
                                                       : dot - start);
        walked = walked.empty() ? key : walked + "." + key;
        if (!node->contains(key)) throw config_error("unknown config key '" + walked + "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
        if (!node->is_object()) throw config_error("config key '" + walked + "' is not an object");
    }
    if (node->is_object()) throw config_error("config key '" + path + "' is not a leaf");
    if (!detail::type_compatible(*node, value)) {
        throw config_error("config key '" + path + "' has the wrong type");
    }
    *node = value;
}

struct ExperimentConfig {
    std::uint64_t seed = 42;
    Method method = Method::vllfl;
    std::string out_dir;
    WorldConfig world;
    std::size_t num_clients = 3;
    std::size_t classes_per_client = 2;
    std::size_t scenes_per_client = 100;
    std::size_t prompt_width = 4;
    std::size_t hidden_dim = 64;
    FederationConfig federation;
    NetworkModel network;
    std::size_t eval_cadence = 10;
    std::size_t base_adaptation_steps = 0;
    nlohmann::json resolved;  // the full tree, embedded in every output

    std::vector<std::string> eval_class_list() const { return world.class_names; }
};

namespace detail {

template <typename T>
inline T get_count(const nlohmann::json& j, const char* path) {
    if (!j.is_number_integer() && !j.is_number_unsigned()) {
        throw config_error(std::string("config key '") + path + "' must be an integer");
    }
    const auto v = j.get<long long>();
    if (v < 0) throw config_error(std::string("config key '") + path + "' must be >= 0");
    return static_cast<T>(v);
}

}  // namespace detail

// Resolve a merged JSON tree into the typed config, filling derived stream
// seeds and validating values.
inline ExperimentConfig resolve_config(nlohmann::json tree) {
    ExperimentConfig cfg;
    cfg.seed = detail::get_count<std::uint64_t>(tree["seed"], "seed");
    cfg.method = method_from_name(tree["method"].get<std::string>());
    cfg.out_dir = tree["out_dir"].get<std::string>();

    const auto& w = tree["world"];
    cfg.world.dim = detail::get_count<std::size_t>(w["dim"], "world.dim");
    cfg.world.num_classes = detail::get_count<std::size_t>(w["num_classes"], "world.num_classes");
    cfg.world.beta = w["beta"].get<double>();
    cfg.world.sigma_tok = w["sigma_tok"].get<double>();
    cfg.world.sigma_img = w["sigma_img"].get<double>();
    cfg.world.sigma_box = w["sigma_box"].get<double>();
    cfg.world.tau = w["tau"].get<double>();
    cfg.world.score_center = w["score_center"].get<double>();
    cfg.world.box_step = w["box_step"].get<double>();
    cfg.world.box_threshold = w["box_threshold"].get<double>();
    cfg.world.text_threshold = w["text_threshold"].get<double>();
    for (const auto& name : w["class_names"]) {
        if (!name.is_string()) throw config_error("world.class_names entries must be strings");
        cfg.world.class_names.push_back(name.get<std::string>());
    }
    if (cfg.world.class_names.empty()) {
        cfg.world.class_names = default_class_names(cfg.world.num_classes);
        tree["world"]["class_names"] = cfg.world.class_names;
    } else if (cfg.world.class_names.size() != cfg.world.num_classes) {
        throw config_error("world.class_names must list exactly world.num_classes names");
    }

    const auto& t = tree["tasks"];
    cfg.num_clients = detail::get_count<std::size_t>(t["num_clients"], "tasks.num_clients");
    cfg.classes_per_client =
        detail::get_count<std::size_t>(t["classes_per_client"], "tasks.classes_per_client");
    cfg.scenes_per_client =
        detail::get_count<std::size_t>(t["scenes_per_client"], "tasks.scenes_per_client");
    if (cfg.num_clients < 1) throw config_error("tasks.num_clients must be >= 1");
    if (cfg.scenes_per_client < 1) throw config_error("tasks.scenes_per_client must be >= 1");
    if (cfg.num_clients * cfg.classes_per_client > cfg.world.num_classes) {
        throw config_error("tasks: num_clients * classes_per_client exceeds world.num_classes");
    }

    cfg.prompt_width = detail::get_count<std::size_t>(tree["model"]["prompt_width"],
                                                      "model.prompt_width");
    cfg.hidden_dim =
        detail::get_count<std::size_t>(tree["model"]["hidden_dim"], "model.hidden_dim");

    const auto& f = tree["federation"];
    cfg.federation.n_clients = cfg.num_clients;
    cfg.federation.rounds = detail::get_count<std::size_t>(f["rounds"], "federation.rounds");
    cfg.federation.local_epochs =
        detail::get_count<std::size_t>(f["local_epochs"], "federation.local_epochs");
    cfg.federation.participation_rate = f["participation_rate"].get<double>();
    cfg.federation.batch_size =
        detail::get_count<std::size_t>(f["batch_size"], "federation.batch_size");
    cfg.federation.lr = f["learning_rate"].get<double>();
    cfg.federation.weight_decay = f["weight_decay"].get<double>();
    cfg.federation.validate();

    cfg.network.bandwidth_bps = tree["network"]["bandwidth_mbps"].get<double>() * 1e6;
    cfg.network.latency_s = tree["network"]["latency_s"].get<double>();
    if (!(cfg.network.bandwidth_bps > 0.0)) {
        throw config_error("network.bandwidth_mbps must be positive");
    }

    cfg.eval_cadence = detail::get_count<std::size_t>(tree["eval"]["cadence"], "eval.cadence");
    cfg.base_adaptation_steps = detail::get_count<std::size_t>(tree["base_adaptation_steps"],
                                                               "base_adaptation_steps");

    StreamSeeds derived = StreamSeeds::from_master(cfg.seed);
    auto& seeds = tree["seeds"];
    auto pick = [&](const char* key, std::uint64_t fallback) {
        if (seeds[key].is_null()) {
            seeds[key] = fallback;
            return fallback;
        }
        return detail::get_count<std::uint64_t>(seeds[key], key);
    };
    cfg.federation.seeds.init = pick("init", derived.init);
    cfg.federation.seeds.selection = pick("selection", derived.selection);
    cfg.federation.seeds.world = pick("world", derived.world);
    cfg.federation.seeds.scenes = pick("scenes", derived.scenes);
    cfg.federation.seeds.batching = pick("batching", derived.batching);

    cfg.resolved = std::move(tree);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
    nlohmann::json tree = default_config_json();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw config_error("cannot open config file '" + config_path + "'");
        nlohmann::json user;
        try {
            user = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw config_error("config file '" + config_path + "': " + e.what());
        }
        if (!user.is_object()) throw config_error("config file must hold a JSON object");
        detail::merge_strict(tree, user, "");
    }
    for (const auto& assignment : overrides) apply_override(tree, assignment);
    return resolve_config(std::move(tree));
}

}  // namespace vllfl
