#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vllfl/checkpoint.hpp"
#include "vllfl/config.hpp"
#include "vllfl/errors.hpp"
#include "vllfl/federation.hpp"
#include "vllfl/scene_io.hpp"
#include "vllfl/trainer.hpp"
#include "vllfl/world.hpp"

namespace vllfl {

// ---------------------------------------------------------------------------
// Experiment orchestration: build a world and tasks from a config, run one
// of the four methods, and write self-describing artifacts (metrics.csv,
// final_report.json, checkpoint.vlpg). Also the engines behind the compare
// and participation-sweep commands. All file writes go through a temp file
// plus rename so an interrupted run never leaves a half-written artifact.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw format_error("cannot write '" + tmp.string() + "'");
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

inline void atomic_write_bytes(const std::filesystem::path& path,
                               const std::vector<std::uint8_t>& bytes) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw format_error("cannot write '" + tmp.string() + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace detail

constexpr const char* kMetricsHeader =
    "round,client_id,loss_total,loss_l1,loss_giou,loss_cons,map,bytes_up,bytes_down,sim_time_s";

// Build the metrics.csv body: per round one row per participating client
// followed by one global row. The map column is filled only at evaluation
// rounds. The first line embeds the resolved configuration.
inline std::string metrics_csv(const nlohmann::json& resolved_config,
                               const std::vector<RoundRecord>& rounds,
                               std::size_t payload_bytes) {
    std::string out = "# config " + resolved_config.dump() + "\n";
    out += kMetricsHeader;
    out += "\n";
    using detail::fmt_double;
    for (const auto& rec : rounds) {
        const double per_client_time = rec.sim_time_s;
        for (const auto& [cid, loss] : rec.client_losses) {
            std::string map_field;
            for (const auto& [mc, mval] : rec.client_maps) {
                if (mc == cid) map_field = fmt_double(mval);
            }
            out += std::to_string(rec.round) + "," + std::to_string(cid) + "," +
                   fmt_double(loss.total) + "," + fmt_double(loss.l1) + "," +
                   fmt_double(loss.giou) + "," + fmt_double(loss.cons) + "," + map_field + "," +
                   std::to_string(payload_bytes) + "," + std::to_string(payload_bytes) + "," +
                   fmt_double(per_client_time) + "\n";
        }
        LossBreakdown mean;
        if (!rec.client_losses.empty()) {
            for (const auto& [cid, loss] : rec.client_losses) {
                (void)cid;
                mean.l1 += loss.l1;
                mean.giou += loss.giou;
                mean.cons += loss.cons;
            }
            const double inv = 1.0 / static_cast<double>(rec.client_losses.size());
            mean.l1 *= inv;
            mean.giou *= inv;
            mean.cons *= inv;
            mean.total = mean.l1 + mean.giou + mean.cons;
        }
        out += std::to_string(rec.round) + ",global," + detail::fmt_double(mean.total) + "," +
               fmt_double(mean.l1) + "," + fmt_double(mean.giou) + "," + fmt_double(mean.cons) +
               "," + (rec.global_map ? fmt_double(*rec.global_map) : std::string()) + "," +
               std::to_string(rec.bytes_up) + "," + std::to_string(rec.bytes_down) + "," +
               fmt_double(rec.sim_time_s) + "\n";
    }
    return out;
}

struct TrainOutcome {
    double global_map = 0.0;
    std::vector<std::pair<std::size_t, double>> client_maps;
    std::size_t payload_bytes = 0;
    std::size_t total_bytes_up = 0;
    std::size_t total_bytes_down = 0;
    double total_sim_time_s = 0.0;
    std::string metrics_path;
    std::string report_path;
    std::string checkpoint_path;
    nlohmann::json report;
};

// Shared world/task construction so every method (and every compared run)
// sees bit-identical data for the same seeds.
struct Bench {
    SyntheticWorld world;
    std::vector<TaskSpec> tasks;
};

inline Bench build_bench(const ExperimentConfig& cfg) {
    Bench bench;
    bench.world = generate_world(cfg.world, RngStream(cfg.federation.seeds.world, "world"));
    if (cfg.base_adaptation_steps > 0) {
        // The correction vector is a well-conditioned convex-ish problem;
        // it trains at the stock AdamW defaults independent of the
        // generator's calibrated rate.
        BaseAdaptationConfig bac;
        bac.steps = cfg.base_adaptation_steps;
        bac.batch_size = cfg.federation.batch_size;
        base_adaptation(bench.world, bac, cfg.federation.seeds.scenes);
    }
    bench.tasks = make_tasks(bench.world, cfg.federation.seeds.scenes, cfg.num_clients,
                             cfg.classes_per_client, cfg.scenes_per_client);
    return bench;
}

// The whole-world task used for reference checkpoints (oracle prompts are
// task dependent; the artifact stores the all-classes variant).
inline TaskSpec union_task(const SyntheticWorld& world) {
    TaskSpec task;
    for (std::size_t c = 0; c < world.config.num_classes; ++c) {
        task.class_ids.push_back(c);
        task.class_names.push_back(world.class_names[c]);
    }
    return task;
}

inline PromptModel initial_model(const ExperimentConfig& cfg) {
    return init_model(cfg.method, cfg.prompt_width, cfg.world.dim, cfg.hidden_dim,
                      RngStream(cfg.federation.seeds.init, "init"));
}

inline TrainOutcome run_train(const ExperimentConfig& cfg, bool write_files = true) {
    Bench bench = build_bench(cfg);
    TrainOutcome outcome;
    std::vector<RoundRecord> rounds;
    PromptModel model = initial_model(cfg);

    if (model.trainable()) {
        outcome.payload_bytes = model.serialize().size();
        FederationResult fed = run_federation(model, bench.world, bench.tasks, cfg.federation,
                                              cfg.network, cfg.eval_cadence);
        rounds = std::move(fed.rounds);
        model = std::move(fed.final_model);
    }

    // Final evaluation (covers rounds == 0 and the training-free methods).
    bool have_final = false;
    if (!rounds.empty() && rounds.back().global_map) {
        outcome.global_map = *rounds.back().global_map;
        outcome.client_maps = rounds.back().client_maps;
        have_final = true;
    }
    if (!have_final) {
        outcome.global_map =
            evaluate_model_global(model, bench.world, bench.tasks, Split::test).map;
        for (const auto& task : bench.tasks) {
            outcome.client_maps.emplace_back(
                task.client_id,
                evaluate_model_client(model, bench.world, task, Split::test).map);
        }
        if (rounds.empty()) {
            RoundRecord rec;
            rec.round = 0;
            rec.global_map = outcome.global_map;
            rec.client_maps = outcome.client_maps;
            rounds.push_back(std::move(rec));
        }
    }
    for (const auto& rec : rounds) {
        outcome.total_bytes_up += rec.bytes_up;
        outcome.total_bytes_down += rec.bytes_down;
        outcome.total_sim_time_s += rec.sim_time_s;
    }

    nlohmann::json report;
    report["config"] = cfg.resolved;
    report["method"] = method_name(cfg.method);
    report["rounds_completed"] = model.trainable() ? cfg.federation.rounds : 0;
    report["payload_bytes"] = outcome.payload_bytes;
    report["total_bytes_up"] = outcome.total_bytes_up;
    report["total_bytes_down"] = outcome.total_bytes_down;
    report["total_sim_time_s"] = outcome.total_sim_time_s;
    report["global_map"] = outcome.global_map;
    report["per_client"] = nlohmann::json::array();
    for (const auto& [cid, mval] : outcome.client_maps) {
        report["per_client"].push_back({{"client_id", cid}, {"map", mval}});
    }
    outcome.report = report;

    if (write_files) {
        const std::filesystem::path out_dir(cfg.out_dir);
        std::filesystem::create_directories(out_dir);
        outcome.metrics_path = (out_dir / "metrics.csv").string();
        detail::atomic_write(outcome.metrics_path,
                             metrics_csv(cfg.resolved, rounds, outcome.payload_bytes));
        outcome.report_path = (out_dir / "final_report.json").string();
        detail::atomic_write(outcome.report_path, report.dump(2) + "\n");

        std::vector<std::uint8_t> ckpt;
        if (model.trainable()) {
            PromptModel wire = model;
            if (wire.method == Method::vllfl) {
                quantize_to_wire(wire.gen);
                ckpt = serialize_params(wire.gen);
            } else {
                ckpt = wire.serialize();
            }
        } else if (cfg.method == Method::oracle) {
            ckpt = serialize_prompt_matrix(
                oracle_prompts(bench.world, union_task(bench.world), cfg.prompt_width).vectors);
        } else {
            ckpt = serialize_prompt_matrix(Matrix(0, cfg.world.dim));
        }
        outcome.checkpoint_path = (out_dir / "checkpoint.vlpg").string();
        detail::atomic_write_bytes(outcome.checkpoint_path, ckpt);
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// compare: one run per method on the identical world/seeds, one table.
// ---------------------------------------------------------------------------

struct CompareOutcome {
    std::vector<std::string> methods;
    std::vector<TrainOutcome> runs;
    nlohmann::json report;
    std::string report_path;
};

inline CompareOutcome run_compare(const ExperimentConfig& base,
                                  const std::vector<Method>& methods,
                                  bool write_files = true) {
    if (methods.size() < 2) throw config_error("compare: need at least 2 methods");
    CompareOutcome outcome;
    nlohmann::json table = nlohmann::json::array();
    for (Method m : methods) {
        ExperimentConfig cfg = base;
        cfg.method = m;
        cfg.resolved["method"] = method_name(m);
        cfg.out_dir = (std::filesystem::path(base.out_dir) / method_name(m)).string();
        cfg.resolved["out_dir"] = cfg.out_dir;
        TrainOutcome run = run_train(cfg, write_files);
        nlohmann::json row;
        row["method"] = method_name(m);
        row["global_map"] = run.global_map;
        row["per_client"] = nlohmann::json::array();
        for (const auto& [cid, mval] : run.client_maps) {
            row["per_client"].push_back({{"client_id", cid}, {"map", mval}});
        }
        table.push_back(std::move(row));
        outcome.methods.push_back(method_name(m));
        outcome.runs.push_back(std::move(run));
    }
    outcome.report["config"] = base.resolved;
    outcome.report["table"] = std::move(table);
    if (write_files) {
        outcome.report_path =
            (std::filesystem::path(base.out_dir) / "compare_report.json").string();
        detail::atomic_write(outcome.report_path, outcome.report.dump(2) + "\n");
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// sweep-participation: for each participation count, one run per seed;
// reports the mAP-vs-round series and the final mean per count.
// ---------------------------------------------------------------------------

struct SweepOutcome {
    nlohmann::json report;
    std::string report_path;
    std::vector<double> mean_final_map;  // aligned with counts
};

inline SweepOutcome run_sweep_participation(const ExperimentConfig& base,
                                            const std::vector<std::size_t>& counts,
                                            std::size_t num_seeds, bool write_files = true) {
    for (std::size_t c : counts) {
        if (c < 1 || c > base.num_clients) {
            throw config_error("sweep: participation count " + std::to_string(c) +
                               " outside 1.." + std::to_string(base.num_clients));
        }
    }
    if (counts.empty()) throw config_error("sweep: empty count list");
    if (num_seeds < 1) throw config_error("sweep: need at least one seed");

    SweepOutcome outcome;
    nlohmann::json per_count = nlohmann::json::array();
    for (std::size_t count : counts) {
        nlohmann::json count_entry;
        count_entry["participation_count"] = count;
        count_entry["runs"] = nlohmann::json::array();
        double mean_final = 0.0;
        for (std::size_t s = 0; s < num_seeds; ++s) {
            ExperimentConfig cfg = base;
            cfg.seed = base.seed + s;
            cfg.federation.seeds = StreamSeeds::from_master(cfg.seed);
            cfg.resolved["seed"] = cfg.seed;
            cfg.resolved["seeds"] = {{"init", cfg.federation.seeds.init},
                                     {"selection", cfg.federation.seeds.selection},
                                     {"world", cfg.federation.seeds.world},
                                     {"scenes", cfg.federation.seeds.scenes},
                                     {"batching", cfg.federation.seeds.batching}};
            cfg.federation.participation_rate =
                static_cast<double>(count) / static_cast<double>(cfg.num_clients);
            cfg.resolved["federation"]["participation_rate"] = cfg.federation.participation_rate;
            cfg.out_dir = (std::filesystem::path(base.out_dir) /
                           ("count" + std::to_string(count) + "_seed" + std::to_string(cfg.seed)))
                              .string();
            cfg.resolved["out_dir"] = cfg.out_dir;
            TrainOutcome run = run_train(cfg, write_files);
            nlohmann::json run_row;
            run_row["seed"] = cfg.seed;
            run_row["final_global_map"] = run.global_map;
            count_entry["runs"].push_back(std::move(run_row));
            mean_final += run.global_map;
        }
        mean_final /= static_cast<double>(num_seeds);
        count_entry["mean_final_global_map"] = mean_final;
        outcome.mean_final_map.push_back(mean_final);
        per_count.push_back(std::move(count_entry));
    }
    outcome.report["config"] = base.resolved;
    outcome.report["num_seeds"] = num_seeds;
    outcome.report["per_count"] = std::move(per_count);
    if (write_files) {
        outcome.report_path =
            (std::filesystem::path(base.out_dir) / "sweep_report.json").string();
        detail::atomic_write(outcome.report_path, outcome.report.dump(2) + "\n");
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// eval: run a stored checkpoint over an ingested scene file. Detection uses
// the full world class list; ground-truth labels in the file index into it.
// ---------------------------------------------------------------------------

struct EvalOutcome {
    EvalReport report;
    nlohmann::json json;
};

inline EvalOutcome run_eval_checkpoint(const ExperimentConfig& cfg,
                                       const std::string& checkpoint_path,
                                       const std::string& scene_path) {
    SyntheticWorld world =
        generate_world(cfg.world, RngStream(cfg.federation.seeds.world, "world"));
    if (cfg.base_adaptation_steps > 0) {
        BaseAdaptationConfig bac;
        bac.steps = cfg.base_adaptation_steps;
        bac.batch_size = cfg.federation.batch_size;
        base_adaptation(world, bac, cfg.federation.seeds.scenes);
    }
    const auto bytes = detail::read_file_bytes(checkpoint_path);
    PromptModel model;
    if (checkpoint_holds_generator(bytes)) {
        model.method = Method::vllfl;
        model.deserialize_payload(bytes);
    } else {
        model.static_prompts = deserialize_prompt_matrix(bytes);
        model.prompt_width = model.static_prompts.rows;
        model.method = model.static_prompts.rows == 0 ? Method::zero_prompt : Method::fedcoop;
    }

    TaskSpec task = union_task(world);
    task.test = read_scene_file(scene_path, cfg.world.dim);
    for (const auto& scene : task.test) {
        for (const auto& gt : scene.ground_truth) {
            if (gt.label >= world.config.num_classes) {
                throw domain_error("scene file label " + std::to_string(gt.label) +
                                   " out of range for " +
                                   std::to_string(world.config.num_classes) + " classes");
            }
        }
    }

    EvalOutcome outcome;
    outcome.report = evaluate_model_client(model, world, task, Split::test);
    outcome.json["config"] = cfg.resolved;
    outcome.json["checkpoint"] = checkpoint_path;
    outcome.json["scenes"] = scene_path;
    outcome.json["num_scenes"] = task.test.size();
    outcome.json["map"] = outcome.report.map;
    outcome.json["per_class"] = nlohmann::json::array();
    for (const auto& cls : outcome.report.per_class) {
        outcome.json["per_class"].push_back({{"label", cls.label},
                                             {"class_name", world.class_names[cls.label]},
                                             {"ap", cls.ap},
                                             {"n_gt", cls.n_gt}});
    }
    return outcome;
}

}  // namespace vllfl
