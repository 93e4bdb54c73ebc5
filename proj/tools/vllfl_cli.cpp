// Command-line driver for the federated prompt-learning lab.
//
//   vllfl train               run one experiment (train or evaluate a method)
//   vllfl compare             run several methods on the identical benchmark
//   vllfl sweep-participation vary the per-round participation count
//   vllfl overhead            communication cost calculator
//   vllfl eval                evaluate a checkpoint on a scene file
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vllfl/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    long long seed = -1;
    std::string out_dir;
    std::string method;
    long long rounds = -1;
    double participation = -1.0;
    long long base_adaptation_steps = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--set", opts.overrides, "Override a config key, e.g. --set federation.rounds=100")
        ->take_all();
    cmd->add_option("--seed", opts.seed, "Master seed");
    cmd->add_option("--out", opts.out_dir, "Output directory");
    cmd->add_option("--method", opts.method, "vllfl | fedcoop | zero-prompt | oracle");
    cmd->add_option("--rounds", opts.rounds, "Communication rounds");
    cmd->add_option("--participation", opts.participation,
                    "Participation per round: fraction in (0,1) or client count >= 1");
    cmd->add_option("--base-adaptation-steps", opts.base_adaptation_steps,
                    "Centrally adapt the frozen backbone for this many steps first");
}

vllfl::ExperimentConfig load(const CommonOpts& opts) {
    std::vector<std::string> overrides = opts.overrides;
    if (opts.seed >= 0) overrides.push_back("seed=" + std::to_string(opts.seed));
    if (!opts.out_dir.empty()) overrides.push_back("out_dir=" + opts.out_dir);
    if (!opts.method.empty()) overrides.push_back("method=" + opts.method);
    if (opts.rounds >= 0) overrides.push_back("federation.rounds=" + std::to_string(opts.rounds));
    if (opts.base_adaptation_steps >= 0) {
        overrides.push_back("base_adaptation_steps=" + std::to_string(opts.base_adaptation_steps));
    }
    vllfl::ExperimentConfig cfg = vllfl::load_config(opts.config_path, overrides);
    if (opts.participation > 0.0) {
        double rate = opts.participation;
        if (rate >= 1.0) rate = rate / static_cast<double>(cfg.num_clients);
        if (!(rate > 0.0) || rate > 1.0) {
            throw vllfl::config_error("--participation out of range for " +
                                      std::to_string(cfg.num_clients) + " clients");
        }
        cfg.federation.participation_rate = rate;
        cfg.resolved["federation"]["participation_rate"] = rate;
        cfg.federation.validate();
    }
    return cfg;
}

std::vector<std::size_t> parse_count_list(const std::string& text) {
    std::vector<std::size_t> counts;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item =
            text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) counts.push_back(static_cast<std::size_t>(std::stoull(item)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return counts;
}

int cmd_train(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto outcome = vllfl::run_train(cfg);
    std::printf("method          %s\n", vllfl::method_name(cfg.method).c_str());
    std::printf("global mAP      %.4f\n", outcome.global_map);
    for (const auto& [cid, mval] : outcome.client_maps) {
        std::printf("client %zu mAP    %.4f\n", cid, mval);
    }
    std::printf("payload bytes   %zu\n", outcome.payload_bytes);
    std::printf("bytes up/down   %zu / %zu\n", outcome.total_bytes_up, outcome.total_bytes_down);
    std::printf("sim time        %.3f s\n", outcome.total_sim_time_s);
    std::printf("wrote %s\n", outcome.metrics_path.c_str());
    std::printf("wrote %s\n", outcome.report_path.c_str());
    std::printf("wrote %s\n", outcome.checkpoint_path.c_str());
    return 0;
}

int cmd_compare(const CommonOpts& opts, const std::string& methods_csv) {
    const auto cfg = load(opts);
    std::vector<vllfl::Method> methods;
    std::size_t start = 0;
    while (start <= methods_csv.size()) {
        const auto comma = methods_csv.find(',', start);
        const std::string item = methods_csv.substr(
            start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) methods.push_back(vllfl::method_from_name(item));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    const auto outcome = vllfl::run_compare(cfg, methods);
    std::printf("%-12s %-10s", "method", "global");
    for (std::size_t c = 0; c < cfg.num_clients; ++c) std::printf(" client%zu ", c);
    std::printf("\n");
    for (const auto& row : outcome.report["table"]) {
        std::printf("%-12s %-10.4f", row["method"].get<std::string>().c_str(),
                    row["global_map"].get<double>());
        for (const auto& pc : row["per_client"]) {
            std::printf(" %-8.4f", pc["map"].get<double>());
        }
        std::printf("\n");
    }
    std::printf("wrote %s\n", outcome.report_path.c_str());
    return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& counts_csv, std::size_t num_seeds) {
    CommonOpts adjusted = opts;
    if (adjusted.rounds < 0) adjusted.rounds = 100;
    const auto cfg = load(adjusted);
    const auto counts = parse_count_list(counts_csv);
    const auto outcome = vllfl::run_sweep_participation(cfg, counts, num_seeds);
    std::printf("%-8s %-22s\n", "count", "mean final global mAP");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        std::printf("%-8zu %-22.4f\n", counts[i], outcome.mean_final_map[i]);
    }
    std::printf("wrote %s\n", outcome.report_path.c_str());
    return 0;
}

int cmd_overhead(std::size_t prompt_params, std::size_t full_params, double bandwidth_mbps,
                 double latency_s, const std::string& preset, const std::string& out_dir) {
    std::size_t full = full_params;
    if (preset == "yolov3") full = 62000000;
    else if (!preset.empty()) throw vllfl::config_error("unknown preset '" + preset + "'");

    vllfl::NetworkModel net;
    net.bandwidth_bps = bandwidth_mbps * 1e6;
    net.latency_s = latency_s;
    const auto rep = vllfl::overhead_report(prompt_params, full, 4, net);
    std::printf("prompt payload    %.2f MB (%zu params)\n", rep.mb_prompt, prompt_params);
    std::printf("full model        %.2f MB (%zu params)\n", rep.mb_full, full);
    std::printf("reduction         %.2f%% (reference figure: 99.3%%)\n", rep.reduction_percent);
    std::printf("upload (prompt)   %.2f s at %.0f Mbps\n", rep.seconds_per_upload_prompt,
                bandwidth_mbps);
    std::printf("upload (full)     %.2f s at %.0f Mbps\n", rep.seconds_per_upload_full,
                bandwidth_mbps);
    if (!out_dir.empty()) {
        nlohmann::json j;
        j["prompt_params"] = prompt_params;
        j["full_params"] = full;
        j["bytes_per_param"] = 4;
        j["bandwidth_mbps"] = bandwidth_mbps;
        j["latency_s"] = latency_s;
        j["mb_prompt"] = rep.mb_prompt;
        j["mb_full"] = rep.mb_full;
        j["reduction_percent"] = rep.reduction_percent;
        j["reference_reduction_percent"] = 99.3;
        j["seconds_per_upload_prompt"] = rep.seconds_per_upload_prompt;
        j["seconds_per_upload_full"] = rep.seconds_per_upload_full;
        const auto path = std::filesystem::path(out_dir) / "overhead_report.json";
        vllfl::detail::atomic_write(path, j.dump(2) + "\n");
        std::printf("wrote %s\n", path.string().c_str());
    }
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, const std::string& scenes) {
    const auto cfg = load(opts);
    const auto outcome = vllfl::run_eval_checkpoint(cfg, checkpoint, scenes);
    std::printf("scenes          %s\n", scenes.c_str());
    std::printf("mAP             %.4f\n", outcome.report.map);
    for (const auto& cls : outcome.json["per_class"]) {
        std::printf("class %-18s AP %.4f  (%zu gt)\n",
                    cls["class_name"].get<std::string>().c_str(), cls["ap"].get<double>(),
                    cls["n_gt"].get<std::size_t>());
    }
    if (!opts.out_dir.empty()) {
        const auto path = std::filesystem::path(opts.out_dir) / "eval_report.json";
        vllfl::detail::atomic_write(path, outcome.json.dump(2) + "\n");
        std::printf("wrote %s\n", path.string().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated prompt-generator training lab"};
    app.require_subcommand(1);

    CommonOpts train_opts;
    auto* train = app.add_subcommand("train", "Run one experiment");
    add_common(train, train_opts);

    CommonOpts compare_opts;
    std::string methods_csv = "vllfl,fedcoop,zero-prompt,oracle";
    auto* compare = app.add_subcommand("compare", "Run several methods on one benchmark");
    add_common(compare, compare_opts);
    compare->add_option("--methods", methods_csv, "Comma-separated method list");

    CommonOpts sweep_opts;
    std::string counts_csv = "1,2,3";
    std::size_t num_seeds = 5;
    auto* sweep = app.add_subcommand("sweep-participation", "Vary participation count");
    add_common(sweep, sweep_opts);
    sweep->add_option("--counts", counts_csv, "Comma-separated participation counts");
    sweep->add_option("--num-seeds", num_seeds, "Seeds per count");

    std::size_t prompt_params = 1000000;
    std::size_t full_params = 172000000;
    double bandwidth_mbps = 100.0;
    double latency_s = 0.0;
    std::string preset;
    std::string overhead_out;
    auto* overhead = app.add_subcommand("overhead", "Communication cost calculator");
    overhead->add_option("--prompt-params", prompt_params, "Prompt generator parameter count");
    overhead->add_option("--full-params", full_params, "Full model parameter count");
    overhead->add_option("--bandwidth-mbps", bandwidth_mbps, "Link speed in Mbps");
    overhead->add_option("--latency-s", latency_s, "Per-message latency in seconds");
    overhead->add_option("--preset", preset, "Named scenario (yolov3)");
    overhead->add_option("--out", overhead_out, "Directory for overhead_report.json");

    CommonOpts eval_opts;
    std::string checkpoint_path;
    std::string scene_path;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a scene file");
    add_common(eval, eval_opts);
    eval->add_option("checkpoint", checkpoint_path, "Checkpoint (.vlpg)")->required();
    eval->add_option("scenes", scene_path, "Line-delimited scene file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_opts);
        if (compare->parsed()) return cmd_compare(compare_opts, methods_csv);
        if (sweep->parsed()) return cmd_sweep(sweep_opts, counts_csv, num_seeds);
        if (overhead->parsed()) {
            return cmd_overhead(prompt_params, full_params, bandwidth_mbps, latency_s, preset,
                                overhead_out);
        }
        if (eval->parsed()) return cmd_eval(eval_opts, checkpoint_path, scene_path);
    } catch (const vllfl::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
