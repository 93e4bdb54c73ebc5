#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/matrix.hpp"
#include "vllfl/prompt_generator.hpp"
#include "vllfl/rng.hpp"
#include "vllfl/surrogate.hpp"

namespace vllfl {

// ---------------------------------------------------------------------------
// Synthetic benchmark world.
//
// Each class has a unit prototype g_c. The text side of the frozen backbone
// embeds every class-name token as g_c + b + noise, where b is a shared bias
// of norm beta: the backbone "knows" the classes but sees them through a
// common distortion. Region features are clean noisy prototypes. A prompt
// whose rows average to -(n_tok_per_class / m) * b cancels the bias out of
// the pooled class features, which gives the benchmark an analytic optimum
// to compare training against.
//
// Noise scales are overall magnitudes: a noise parameter sigma draws each
// coordinate from Normal(0, sigma^2 / d), so the noise vector norm
// concentrates at sigma regardless of d.
// ---------------------------------------------------------------------------

struct WorldConfig {
    std::size_t dim = 64;
    std::size_t num_classes = 6;
    double beta = 3.5;        // bias magnitude; gate-validated, tunable in [1, 4]
    double sigma_tok = 0.1;   // token embedding noise magnitude
    double sigma_img = 0.1;   // region feature noise magnitude
    double sigma_box = 0.05;  // proposal jitter per box coordinate
    double tau = 10.0;
    double score_center = 0.75;  // cosine mapped to score 0.5 (gate-calibrated)
    double box_step = 0.2;
    double box_threshold = 0.3;
    double text_threshold = 0.25;
    std::vector<std::string> class_names;  // defaults filled when empty
};

// Default class-name pool. Token counts deliberately vary (1, 2 and 3-token
// names) so that tasks built from different classes need different prompt
// scales; this is what makes the benchmark heterogeneous.
inline std::vector<std::string> default_class_names(std::size_t count) {
    static const std::vector<std::string> pool = {
        "apple", "lemon", "blood orange", "green pear", "big wild mango", "ripe sour plum",
    };
    std::vector<std::string> names;
    for (std::size_t c = 0; c < count; ++c) {
        if (c < pool.size()) {
            names.push_back(pool[c]);
        } else {
            names.push_back("class" + std::to_string(c));
        }
    }
    return names;
}

struct SyntheticWorld {
    WorldConfig config;
    Matrix prototypes;         // C x d, unit rows
    std::vector<double> bias;  // d, norm == beta
    FrozenBackbone backbone;
    std::vector<std::string> class_names;
    std::vector<std::size_t> tokens_per_class;
};

inline SyntheticWorld generate_world(const WorldConfig& config, RngStream stream) {
    if (config.num_classes < 2 || config.dim < 8) {
        throw config_error("generate_world: need num_classes >= 2 and dim >= 8");
    }
    SyntheticWorld world;
    world.config = config;
    world.class_names = config.class_names.empty()
                            ? default_class_names(config.num_classes)
                            : config.class_names;
    if (world.class_names.size() != config.num_classes) {
        throw config_error("generate_world: class_names count != num_classes");
    }

    const std::size_t d = config.dim;
    const std::size_t C = config.num_classes;

    // Draw order is fixed: prototypes, box head, token seed, token noise.
    world.prototypes = Matrix(C, d);
    for (std::size_t c = 0; c < C; ++c) {
        double nrm2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            world.prototypes(c, j) = stream.next_normal();
            nrm2 += world.prototypes(c, j) * world.prototypes(c, j);
        }
        const double nrm = std::sqrt(nrm2);
        for (std::size_t j = 0; j < d; ++j) world.prototypes(c, j) /= nrm;
    }

    world.bias.assign(d, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < d; ++j) world.bias[j] += world.prototypes(c, j);
    const double sum_norm = norm(world.bias);
    if (!(sum_norm > 0.0)) throw config_error("generate_world: degenerate prototype sum");
    for (std::size_t j = 0; j < d; ++j) world.bias[j] *= config.beta / sum_norm;

    FrozenBackbone& bb = world.backbone;
    bb.d = d;
    bb.tau = config.tau;
    bb.center = config.score_center;
    bb.box_step = config.box_step;
    bb.box_head = Matrix(4, d);
    const double head_std = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : bb.box_head.data) v = stream.next_normal(0.0, head_std);
    bb.token_seed = stream.next_u64();

    // Class-name tokens embed as prototype + bias + per-token noise. Tokens
    // must be unique across classes or the table would be ambiguous.
    const double tok_std = config.sigma_tok / std::sqrt(static_cast<double>(d));
    std::set<std::string> seen;
    for (std::size_t c = 0; c < C; ++c) {
        const auto toks = whitespace_tokens(world.class_names[c]);
        if (toks.empty()) {
            throw config_error("generate_world: class name '" + world.class_names[c] +
                               "' has no tokens");
        }
        world.tokens_per_class.push_back(toks.size());
        for (const auto& tok : toks) {
            if (!seen.insert(tok).second) {
                throw config_error("generate_world: token '" + tok +
                                   "' appears in more than one class name");
            }
            std::vector<double> e(d);
            for (std::size_t j = 0; j < d; ++j) {
                e[j] = world.prototypes(c, j) + world.bias[j] + stream.next_normal(0.0, tok_std);
            }
            bb.token_table[tok] = std::move(e);
        }
    }
    return world;
}

// ---------------------------------------------------------------------------
// Scene generation.
// ---------------------------------------------------------------------------

namespace detail {

// Object extents sized so the sigma_box proposal jitter usually keeps the
// proposal above the 0.5 IoU matching threshold (ceiling ~0.94 at 0.05).
inline BoxCxCyWH random_valid_box(RngStream& stream) {
    BoxCxCyWH b;
    b.w = stream.next_uniform(0.3, 0.6);
    b.h = stream.next_uniform(0.3, 0.6);
    b.cx = stream.next_uniform(0.5 * b.w, 1.0 - 0.5 * b.w);
    b.cy = stream.next_uniform(0.5 * b.h, 1.0 - 0.5 * b.h);
    return b;
}

inline std::vector<double> unit_noise_vector(std::size_t d, RngStream& stream) {
    std::vector<double> v(d);
    for (double& x : v) x = stream.next_normal();
    const double nrm = norm(v);
    for (double& x : v) x /= nrm;
    return v;
}

}  // namespace detail

// One scene: 1-4 object instances (one region each, feature = noisy
// prototype, proposal = jittered ground-truth box) plus 2-6 background
// regions with random unit features.
inline Scene generate_scene(const SyntheticWorld& world,
                            const std::vector<std::size_t>& class_ids, RngStream& stream) {
    if (class_ids.empty()) throw config_error("generate_scene: empty class id list");
    const std::size_t d = world.config.dim;
    const double img_std = world.config.sigma_img / std::sqrt(static_cast<double>(d));
    Scene scene;
    const std::size_t n_obj = 1 + static_cast<std::size_t>(stream.next_index(4));
    for (std::size_t i = 0; i < n_obj; ++i) {
        GroundTruthInstance gt;
        gt.label = class_ids[stream.next_index(class_ids.size())];
        gt.box = detail::random_valid_box(stream);
        Region region;
        region.feature.resize(d);
        double nrm2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            region.feature[j] =
                world.prototypes(gt.label, j) + stream.next_normal(0.0, img_std);
            nrm2 += region.feature[j] * region.feature[j];
        }
        const double nrm = std::sqrt(nrm2);
        for (double& v : region.feature) v /= nrm;
        const double sb = world.config.sigma_box;
        region.proposal = detail::clamp_box_valid(
            gt.box.cx + stream.next_normal(0.0, sb), gt.box.cy + stream.next_normal(0.0, sb),
            gt.box.w + stream.next_normal(0.0, sb), gt.box.h + stream.next_normal(0.0, sb));
        scene.ground_truth.push_back(gt);
        scene.regions.push_back(std::move(region));
    }
    const std::size_t n_bg = 2 + static_cast<std::size_t>(stream.next_index(5));
    for (std::size_t i = 0; i < n_bg; ++i) {
        Region region;
        region.feature = detail::unit_noise_vector(d, stream);
        region.proposal = detail::random_valid_box(stream);
        scene.regions.push_back(std::move(region));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Tasks: each client owns a subset of classes and three scene splits.
// ---------------------------------------------------------------------------

struct TaskSpec {
    std::size_t client_id = 0;
    std::vector<std::size_t> class_ids;     // world class ids
    std::vector<std::string> class_names;   // aligned with class_ids
    std::vector<Scene> train;
    std::vector<Scene> val;
    std::vector<Scene> test;
};

// 8:1:1 split by count: floor(0.8 n) / floor(0.1 n) / remainder.
inline std::array<std::size_t, 3> split_counts(std::size_t n) {
    const std::size_t n_train = (n * 8) / 10;
    const std::size_t n_val = n / 10;
    return {n_train, n_val, n - n_train - n_val};
}

inline std::vector<TaskSpec> make_tasks(const SyntheticWorld& world, std::uint64_t seed,
                                        std::size_t n_clients, std::size_t classes_per_client,
                                        std::size_t scenes_per_client) {
    if (n_clients * classes_per_client > world.config.num_classes) {
        throw config_error("make_tasks: not enough classes for the requested partition");
    }
    if (scenes_per_client < 1) throw config_error("make_tasks: need at least one scene");
    std::vector<TaskSpec> tasks;
    for (std::size_t i = 0; i < n_clients; ++i) {
        TaskSpec task;
        task.client_id = i;
        for (std::size_t k = 0; k < classes_per_client; ++k) {
            const std::size_t cid = i * classes_per_client + k;
            task.class_ids.push_back(cid);
            task.class_names.push_back(world.class_names[cid]);
        }
        RngStream stream(seed, "scenes", i);
        const auto counts = split_counts(scenes_per_client);
        for (std::size_t s = 0; s < counts[0]; ++s)
            task.train.push_back(generate_scene(world, task.class_ids, stream));
        for (std::size_t s = 0; s < counts[1]; ++s)
            task.val.push_back(generate_scene(world, task.class_ids, stream));
        for (std::size_t s = 0; s < counts[2]; ++s)
            task.test.push_back(generate_scene(world, task.class_ids, stream));
        tasks.push_back(std::move(task));
    }
    return tasks;
}

// Mean class-span length of a task (tokens per class name).
inline double mean_span_length(const SyntheticWorld& world, const TaskSpec& task) {
    double total = 0.0;
    for (std::size_t cid : task.class_ids)
        total += static_cast<double>(world.tokens_per_class[cid]);
    return total / static_cast<double>(task.class_ids.size());
}

// Analytic bias-cancelling prompts for a task: every row is
// -(mean span length / m) * bias, so the pooled class feature
// m * row + n_c * (g_c + b) loses its bias component when n_c matches the
// task mean. The training-free upper-bound reference.
inline PromptSet oracle_prompts(const SyntheticWorld& world, const TaskSpec& task,
                                std::size_t m) {
    if (m < 1) throw config_error("oracle_prompts: m must be >= 1");
    const double scale = -mean_span_length(world, task) / static_cast<double>(m);
    PromptSet out;
    out.vectors = Matrix(m, world.config.dim);
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < world.config.dim; ++j)
            out.vectors(k, j) = scale * world.bias[j];
    return out;
}

inline PromptSet zero_prompts() {
    PromptSet out;
    out.vectors = Matrix(0, 0);
    return out;
}

}  // namespace vllfl
