#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vllfl/adamw.hpp"
#include "vllfl/checkpoint.hpp"
#include "vllfl/errors.hpp"
#include "vllfl/evaluation.hpp"
#include "vllfl/losses.hpp"
#include "vllfl/prompt_generator.hpp"
#include "vllfl/surrogate.hpp"
#include "vllfl/world.hpp"

namespace vllfl {

// ---------------------------------------------------------------------------
// Methods. "vllfl" trains the prompt generator; "fedcoop" trains a static
// prompt matrix that ignores the class embeddings; "zero-prompt" and
// "oracle" are training-free references (no prompts at all / the analytic
// bias-cancelling prompts).
// ---------------------------------------------------------------------------

enum class Method { vllfl, fedcoop, zero_prompt, oracle };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::vllfl: return "vllfl";
        case Method::fedcoop: return "fedcoop";
        case Method::zero_prompt: return "zero-prompt";
        case Method::oracle: return "oracle";
    }
    return "?";
}

inline Method method_from_name(const std::string& name) {
    if (name == "vllfl") return Method::vllfl;
    if (name == "fedcoop") return Method::fedcoop;
    if (name == "zero-prompt") return Method::zero_prompt;
    if (name == "oracle") return Method::oracle;
    throw config_error("unknown method '" + name +
                       "' (expected vllfl, fedcoop, zero-prompt or oracle)");
}

// The state a method carries between rounds. Only trainable methods have
// parameters; the references are recomputed from the world on demand.
struct PromptModel {
    Method method = Method::vllfl;
    std::size_t prompt_width = 4;
    PromptGeneratorParams gen;  // method == vllfl
    Matrix static_prompts;      // method == fedcoop, prompt_width x d

    bool trainable() const { return method == Method::vllfl || method == Method::fedcoop; }

    std::size_t flat_count() const {
        if (method == Method::vllfl) return gen.flat_count();
        if (method == Method::fedcoop) return static_prompts.data.size();
        return 0;
    }

    std::vector<double> flat() const {
        if (method == Method::vllfl) return flatten_params(gen);
        if (method == Method::fedcoop) return static_prompts.data;
        return {};
    }

    void set_flat(const std::vector<double>& values) {
        if (method == Method::vllfl) {
            unflatten_params(values, gen);
        } else if (method == Method::fedcoop) {
            if (values.size() != static_prompts.data.size()) {
                throw shape_error("PromptModel::set_flat: length mismatch");
            }
            static_prompts.data = values;
        }
    }

    std::vector<std::uint8_t> serialize() const {
        if (method == Method::vllfl) return serialize_params(gen);
        if (method == Method::fedcoop) return serialize_prompt_matrix(static_prompts);
        throw config_error("PromptModel::serialize: method has no parameters");
    }

    void deserialize_payload(const std::vector<std::uint8_t>& bytes) {
        if (method == Method::vllfl) {
            gen = deserialize_params(bytes);
            prompt_width = gen.m;
        } else if (method == Method::fedcoop) {
            static_prompts = deserialize_prompt_matrix(bytes);
            prompt_width = static_prompts.rows;
        } else {
            throw config_error("PromptModel::deserialize_payload: method has no parameters");
        }
    }
};

inline PromptModel init_model(Method method, std::size_t m, std::size_t d, std::size_t d_h,
                              RngStream stream) {
    PromptModel model;
    model.method = method;
    model.prompt_width = m;
    if (method == Method::vllfl) {
        model.gen = init_params(m, d, d_h, stream);
    } else if (method == Method::fedcoop) {
        model.static_prompts = Matrix::randn(m, d, stream, 0.0, 0.02);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Task-level forward: prompts -> prompted sequence -> pooled class features.
// ---------------------------------------------------------------------------

struct TaskForward {
    PromptSet prompts;
    ForwardTrace gen_trace;  // valid only for Method::vllfl
    PromptedSequence seq;
    ClassFeatures cf;
};

inline TaskForward task_forward(const PromptModel& model, const SyntheticWorld& world,
                                const TaskSpec& task, const ClassEmbeddingBatch& embeddings) {
    TaskForward out;
    switch (model.method) {
        case Method::vllfl: {
            auto [prompts, trace] = generate_prompts(model.gen, embeddings);
            out.prompts = std::move(prompts);
            out.gen_trace = std::move(trace);
            break;
        }
        case Method::fedcoop:
            out.prompts.vectors = model.static_prompts;
            break;
        case Method::oracle:
            out.prompts = oracle_prompts(world, task, model.prompt_width);
            break;
        case Method::zero_prompt:
            out.prompts = zero_prompts();
            break;
    }
    out.seq = assemble_prompted_embeddings(embeddings, out.prompts);
    out.cf = class_features(out.seq);
    return out;
}

// Column index in the task's class list for every ground-truth instance.
inline std::vector<std::size_t> gt_columns_for(const Scene& scene, const TaskSpec& task) {
    std::vector<std::size_t> cols;
    cols.reserve(scene.ground_truth.size());
    for (const auto& gt : scene.ground_truth) {
        std::size_t col = task.class_ids.size();
        for (std::size_t c = 0; c < task.class_ids.size(); ++c) {
            if (task.class_ids[c] == gt.label) {
                col = c;
                break;
            }
        }
        if (col == task.class_ids.size()) {
            throw domain_error("scene ground-truth label " + std::to_string(gt.label) +
                               " not in task class set");
        }
        cols.push_back(col);
    }
    return cols;
}

// ---------------------------------------------------------------------------
// One optimizer step over a batch of scenes. Loss is the mean over the
// batch, accumulated in ascending batch order. Returns the batch loss and
// the gradient in the model's flat parameter order.
// ---------------------------------------------------------------------------

struct BatchResult {
    LossBreakdown loss;
    std::vector<double> grad;
};

inline BatchResult train_batch(const PromptModel& model, const SyntheticWorld& world,
                               const TaskSpec& task, const ClassEmbeddingBatch& embeddings,
                               const std::vector<const Scene*>& scenes) {
    if (scenes.empty()) throw config_error("train_batch: empty batch");
    if (!model.trainable()) throw config_error("train_batch: method has no trainable state");

    TaskForward tf = task_forward(model, world, task, embeddings);
    const double inv_b = 1.0 / static_cast<double>(scenes.size());

    BatchResult out;
    Matrix d_feats_total(tf.cf.feats.rows, tf.cf.feats.cols);
    for (const Scene* scene : scenes) {
        const auto gt_cols = gt_columns_for(*scene, task);
        const DenseForward fwd = detect_forward_for_training(world.backbone, *scene, tf.cf);
        SceneLoss sl = total_loss(*scene, fwd, gt_cols);
        out.loss.l1 += sl.breakdown.l1 * inv_b;
        out.loss.giou += sl.breakdown.giou * inv_b;
        out.loss.cons += sl.breakdown.cons * inv_b;
        sl.d_logits *= inv_b;
        for (auto& gb : sl.d_boxes)
            for (double& v : gb) v *= inv_b;
        d_feats_total +=
            detect_backward_to_features(world.backbone, *scene, tf.cf, fwd, sl.d_logits, sl.d_boxes);
    }
    out.loss.total = out.loss.l1 + out.loss.giou + out.loss.cons;

    const Matrix d_rows = class_features_backward(tf.seq, tf.cf, d_feats_total);
    const Matrix d_prompts = collect_prompt_grad(tf.seq, d_rows);
    if (model.method == Method::vllfl) {
        out.grad = flatten_params(backprop(model.gen, tf.gen_trace, embeddings, d_prompts));
    } else {
        out.grad = d_prompts.data;
    }
    return out;
}

// Seeded in-place shuffle (Fisher-Yates).
inline void shuffle_indices(std::vector<std::size_t>& idx, RngStream& stream) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.next_index(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

struct LocalTrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 4;
};

struct LocalTrainResult {
    LossBreakdown mean_loss;  // mean over optimizer steps
    std::size_t steps = 0;
};

// K epochs of seeded-shuffle minibatch training on the task's train split.
// The model is updated in place; optimizer moments live in `opt` and persist
// across calls (client-local state).
inline LocalTrainResult local_train(PromptModel& model, AdamWState& opt,
                                    const SyntheticWorld& world, const TaskSpec& task,
                                    const ClassEmbeddingBatch& embeddings,
                                    const LocalTrainConfig& cfg, RngStream& batching) {
    if (task.train.empty()) throw config_error("local_train: client dataset is empty");
    LocalTrainResult result;
    std::vector<std::size_t> idx(task.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<double> flat = model.flat();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(idx, batching);
        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            std::vector<const Scene*> batch;
            for (std::size_t k = start; k < std::min(start + cfg.batch_size, idx.size()); ++k)
                batch.push_back(&task.train[idx[k]]);
            const BatchResult br = train_batch(model, world, task, embeddings, batch);
            adamw_step(opt, flat, br.grad);
            model.set_flat(flat);
            result.mean_loss.l1 += br.loss.l1;
            result.mean_loss.giou += br.loss.giou;
            result.mean_loss.cons += br.loss.cons;
            result.steps += 1;
        }
    }
    if (result.steps > 0) {
        const double inv = 1.0 / static_cast<double>(result.steps);
        result.mean_loss.l1 *= inv;
        result.mean_loss.giou *= inv;
        result.mean_loss.cons *= inv;
        result.mean_loss.total =
            result.mean_loss.l1 + result.mean_loss.giou + result.mean_loss.cons;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation: run the model over each task with that task's class context
// and pool per-class AP across all tasks. A detection's label is the world
// class id behind its column, so pooled scoring is consistent across tasks.
// ---------------------------------------------------------------------------

enum class Split { train, val, test };

inline const std::vector<Scene>& split_of(const TaskSpec& task, Split split) {
    switch (split) {
        case Split::train: return task.train;
        case Split::val: return task.val;
        default: return task.test;
    }
}

inline EvalReport evaluate_model(const PromptModel& model, const SyntheticWorld& world,
                                 const std::vector<const TaskSpec*>& tasks, Split split) {
    std::vector<std::vector<EvalDetection>> dets;
    std::vector<std::vector<GroundTruthInstance>> gts;
    for (const TaskSpec* task : tasks) {
        const auto embeddings = encode_classnames(world.backbone, task->class_names);
        const TaskForward tf = task_forward(model, world, *task, embeddings);
        for (const Scene& scene : split_of(*task, split)) {
            const std::size_t scene_idx = dets.size();
            std::vector<EvalDetection> scene_dets;
            for (const Detection& det :
                 detect(world.backbone, scene, tf.cf, task->class_names,
                        world.config.box_threshold, world.config.text_threshold)) {
                EvalDetection ed;
                ed.scene = scene_idx;
                ed.label = task->class_ids[det.class_index];
                ed.score = det.score;
                ed.box = det.box;
                scene_dets.push_back(ed);
            }
            dets.push_back(std::move(scene_dets));
            gts.push_back(scene.ground_truth);
        }
    }
    return evaluate_map(dets, gts);
}

inline EvalReport evaluate_model_global(const PromptModel& model, const SyntheticWorld& world,
                                        const std::vector<TaskSpec>& tasks, Split split) {
    std::vector<const TaskSpec*> ptrs;
    for (const auto& t : tasks) ptrs.push_back(&t);
    return evaluate_model(model, world, ptrs, split);
}

inline EvalReport evaluate_model_client(const PromptModel& model, const SyntheticWorld& world,
                                        const TaskSpec& task, Split split) {
    return evaluate_model(model, world, {&task}, split);
}

// ---------------------------------------------------------------------------
// Base adaptation: centrally train a single correction vector added to every
// token embedding (the only way the frozen backbone can be nudged), using 4
// scenes per class and the regular loss with no prompts, then re-freeze.
// With enough steps the correction converges toward the negated bias and the
// benefit of prompts collapses.
// ---------------------------------------------------------------------------

struct BaseAdaptationConfig {
    std::size_t steps = 0;
    std::size_t batch_size = 4;
    double lr = 0.05;
    double weight_decay = 1e-4;
    std::size_t scenes_per_class = 4;
};

inline void base_adaptation(SyntheticWorld& world, const BaseAdaptationConfig& cfg,
                            std::uint64_t seed) {
    if (cfg.steps == 0) return;

    // Global task over every class; substream indices offset so adaptation
    // scenes never collide with client scene streams.
    constexpr std::uint64_t kAdaptStreamTag = 0xAD000000ULL;
    TaskSpec task;
    for (std::size_t c = 0; c < world.config.num_classes; ++c) {
        task.class_ids.push_back(c);
        task.class_names.push_back(world.class_names[c]);
    }
    std::vector<Scene> scenes;
    for (std::size_t c = 0; c < world.config.num_classes; ++c) {
        RngStream stream(seed, "scenes", kAdaptStreamTag + c);
        for (std::size_t k = 0; k < cfg.scenes_per_class; ++k) {
            scenes.push_back(generate_scene(world, {c}, stream));
        }
    }

    FrozenBackbone& bb = world.backbone;
    if (bb.token_correction.empty()) bb.token_correction.assign(bb.d, 0.0);
    AdamWState opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    RngStream batching(seed, "batching", kAdaptStreamTag);
    std::vector<std::size_t> idx(scenes.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::size_t cursor = idx.size();  // force shuffle on first step

    const PromptSet no_prompts = zero_prompts();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<const Scene*> batch;
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
            if (cursor >= idx.size()) {
                shuffle_indices(idx, batching);
                cursor = 0;
            }
            batch.push_back(&scenes[idx[cursor++]]);
        }
        // The correction shifts the token table, so embeddings are rebuilt
        // every step.
        const auto embeddings = encode_classnames(bb, task.class_names);
        const PromptedSequence seq = assemble_prompted_embeddings(embeddings, no_prompts);
        const ClassFeatures cf = class_features(seq);

        Matrix d_feats_total(cf.feats.rows, cf.feats.cols);
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        for (const Scene* scene : batch) {
            const auto gt_cols = gt_columns_for(*scene, task);
            const DenseForward fwd = detect_forward_for_training(bb, *scene, cf);
            SceneLoss sl = total_loss(*scene, fwd, gt_cols);
            sl.d_logits *= inv_b;
            for (auto& gb : sl.d_boxes)
                for (double& v : gb) v *= inv_b;
            d_feats_total += detect_backward_to_features(bb, *scene, cf, fwd, sl.d_logits, sl.d_boxes);
        }
        const Matrix d_rows = class_features_backward(seq, cf, d_feats_total);
        const std::vector<double> d_corr = collect_token_grad(seq, d_rows);
        adamw_step(opt, bb.token_correction, d_corr);
    }
}

}  // namespace vllfl
