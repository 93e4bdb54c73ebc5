#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "vllfl/adamw.hpp"
#include "vllfl/errors.hpp"
#include "vllfl/rng.hpp"
#include "vllfl/trainer.hpp"
#include "vllfl/world.hpp"

namespace vllfl {

// ---------------------------------------------------------------------------
// The federation round loop: pick a client subset, broadcast the global
// parameters, train locally, collect the updates, average them. All byte
// counts come from the actual serialized payloads; all randomness comes from
// per-round substreams, so a round's selection and batching never depend on
// execution history.
// ---------------------------------------------------------------------------

struct StreamSeeds {
    std::uint64_t init = 0;
    std::uint64_t selection = 0;
    std::uint64_t world = 0;
    std::uint64_t scenes = 0;
    std::uint64_t batching = 0;

    static StreamSeeds from_master(std::uint64_t master) {
        // Distinct per-stream seeds; the stream name is mixed in again by
        // RngStream, this just keeps the seeds themselves distinct.
        return {master, master + 1, master + 2, master + 3, master + 4};
    }
};

struct FederationConfig {
    std::size_t n_clients = 3;
    std::size_t rounds = 500;
    std::size_t local_epochs = 1;
    double participation_rate = 0.7;
    std::size_t batch_size = 4;
    // Calibrated for the synthetic surrogate: AdamW at 0.05 saturates the
    // generator's tanh layer within one round and never recovers.
    double lr = 0.002;
    double weight_decay = 1e-4;
    StreamSeeds seeds;

    void validate() const {
        if (n_clients < 1) throw config_error("federation: n_clients must be >= 1");
        if (!(participation_rate > 0.0) || participation_rate > 1.0) {
            throw config_error("federation: participation_rate must be in (0, 1]");
        }
        if (batch_size < 1) throw config_error("federation: batch_size must be >= 1");
    }
};

struct NetworkModel {
    double bandwidth_bps = 100e6;  // 100 Mbps
    double latency_s = 0.0;

    double transfer_seconds(std::size_t bytes) const {
        if (!(bandwidth_bps > 0.0)) throw domain_error("network: bandwidth must be positive");
        return static_cast<double>(bytes) * 8.0 / bandwidth_bps + latency_s;
    }
};

struct ClientUpdate {
    std::size_t client_id = 0;
    std::size_t round = 0;
    std::vector<std::uint8_t> payload;
    LossBreakdown local_loss;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> selected;
    std::vector<std::pair<std::size_t, LossBreakdown>> client_losses;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    double sim_time_s = 0.0;
    std::optional<double> global_map;
    std::vector<std::pair<std::size_t, double>> client_maps;
};

// Uniform sample without replacement of size max(1, round(rate * n)),
// deterministic given (selection seed, round). Returned ascending.
inline std::vector<std::size_t> select_clients(const FederationConfig& config,
                                               std::size_t round) {
    config.validate();
    const std::size_t n = config.n_clients;
    std::size_t k = static_cast<std::size_t>(
        std::lround(config.participation_rate * static_cast<double>(n)));
    k = std::max<std::size_t>(1, std::min(k, n));
    RngStream stream(config.seeds.selection, "selection", round);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(stream.next_index(n - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

// Unweighted coordinatewise mean of the updates, summed in ascending
// client-id order. Inputs arrive as wire payloads; the result is the f64
// mean of the decoded f32 values (it is re-quantized on the next broadcast).
inline PromptModel aggregate(const std::vector<ClientUpdate>& updates, Method method) {
    if (updates.empty()) throw protocol_error("aggregate: no updates");
    std::vector<const ClientUpdate*> ordered;
    for (const auto& u : updates) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const ClientUpdate* a, const ClientUpdate* b) {
                  return a->client_id < b->client_id;
              });

    PromptModel first;
    first.method = method;
    first.deserialize_payload(ordered.front()->payload);
    std::vector<double> sum = first.flat();
    for (std::size_t i = 1; i < ordered.size(); ++i) {
        PromptModel next;
        next.method = method;
        next.deserialize_payload(ordered[i]->payload);
        const auto flat = next.flat();
        if (flat.size() != sum.size()) {
            throw protocol_error("aggregate: update parameter shapes differ");
        }
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += flat[j];
    }
    const double inv = 1.0 / static_cast<double>(ordered.size());
    for (double& v : sum) v *= inv;
    first.set_flat(sum);
    return first;
}

// One client's share of a round: decode the broadcast parameters, train K
// epochs locally, encode the result.
inline ClientUpdate client_local_train(const std::vector<std::uint8_t>& broadcast,
                                       Method method, std::size_t client_id, std::size_t round,
                                       const SyntheticWorld& world, const TaskSpec& task,
                                       const ClassEmbeddingBatch& embeddings, AdamWState& opt,
                                       const FederationConfig& config) {
    if (task.train.empty()) throw config_error("client_local_train: dataset is empty");
    PromptModel model;
    model.method = method;
    model.deserialize_payload(broadcast);

    ClientUpdate update;
    update.client_id = client_id;
    update.round = round;
    if (config.local_epochs > 0) {
        LocalTrainConfig ltc;
        ltc.epochs = config.local_epochs;
        ltc.batch_size = config.batch_size;
        RngStream batching(config.seeds.batching, "batching", client_id, round);
        const LocalTrainResult r = local_train(model, opt, world, task, embeddings, ltc, batching);
        update.local_loss = r.mean_loss;
    }
    update.payload = model.serialize();
    return update;
}

struct FederationResult {
    std::vector<RoundRecord> rounds;
    PromptModel final_model;
};

// Runs the full protocol for config.rounds rounds. eval_cadence > 0 runs the
// global per-task evaluation (test split) every that many rounds and after
// the last round, recording global and per-client mAP in the round record.
inline FederationResult run_federation(const PromptModel& initial,
                                       const SyntheticWorld& world,
                                       const std::vector<TaskSpec>& tasks,
                                       const FederationConfig& config,
                                       const NetworkModel& network,
                                       std::size_t eval_cadence = 0) {
    config.validate();
    if (tasks.size() != config.n_clients) {
        throw config_error("run_federation: task count != n_clients");
    }
    if (!initial.trainable()) {
        throw config_error("run_federation: method has no trainable parameters");
    }

    std::vector<ClassEmbeddingBatch> embeddings;
    for (const auto& task : tasks)
        embeddings.push_back(encode_classnames(world.backbone, task.class_names));

    std::vector<AdamWState> opts(config.n_clients);
    for (auto& opt : opts) {
        opt.lr = config.lr;
        opt.weight_decay = config.weight_decay;
    }

    FederationResult result;
    result.final_model = initial;
    for (std::size_t r = 0; r < config.rounds; ++r) {
        RoundRecord record;
        record.round = r;
        record.selected = select_clients(config, r);

        const std::vector<std::uint8_t> broadcast = result.final_model.serialize();
        record.bytes_down = record.selected.size() * broadcast.size();

        std::vector<ClientUpdate> updates;
        for (std::size_t cid : record.selected) {
            ClientUpdate u = client_local_train(broadcast, initial.method, cid, r, world,
                                                tasks[cid], embeddings[cid], opts[cid], config);
            record.bytes_up += u.payload.size();
            record.client_losses.emplace_back(cid, u.local_loss);
            updates.push_back(std::move(u));
        }
        result.final_model = aggregate(updates, initial.method);
        record.sim_time_s = network.transfer_seconds(broadcast.size()) +
                            network.transfer_seconds(broadcast.size());

        if (eval_cadence > 0 && ((r + 1) % eval_cadence == 0 || r + 1 == config.rounds)) {
            record.global_map =
                evaluate_model_global(result.final_model, world, tasks, Split::test).map;
            for (const auto& task : tasks) {
                record.client_maps.emplace_back(
                    task.client_id,
                    evaluate_model_client(result.final_model, world, task, Split::test).map);
            }
        }
        result.rounds.push_back(std::move(record));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Communication accounting.
// ---------------------------------------------------------------------------

struct OverheadReport {
    double mb_prompt = 0.0;  // MiB at 4 bytes/parameter
    double mb_full = 0.0;
    double reduction_percent = 0.0;
    double seconds_per_upload_prompt = 0.0;
    double seconds_per_upload_full = 0.0;
};

inline OverheadReport overhead_report(std::size_t param_count_prompt,
                                      std::size_t param_count_full,
                                      std::size_t bytes_per_param,
                                      const NetworkModel& network) {
    if (param_count_prompt < 1 || param_count_full < 1 || bytes_per_param < 1) {
        throw domain_error("overhead_report: counts must be >= 1");
    }
    const double prompt_bytes = static_cast<double>(param_count_prompt * bytes_per_param);
    const double full_bytes = static_cast<double>(param_count_full * bytes_per_param);
    OverheadReport rep;
    rep.mb_prompt = prompt_bytes / (1024.0 * 1024.0);
    rep.mb_full = full_bytes / (1024.0 * 1024.0);
    rep.reduction_percent = 100.0 * (1.0 - prompt_bytes / full_bytes);
    rep.seconds_per_upload_prompt =
        network.transfer_seconds(param_count_prompt * bytes_per_param);
    rep.seconds_per_upload_full = network.transfer_seconds(param_count_full * bytes_per_param);
    return rep;
}

}  // namespace vllfl
