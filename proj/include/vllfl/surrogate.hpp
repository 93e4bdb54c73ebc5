#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/geometry.hpp"
#include "vllfl/matrix.hpp"
#include "vllfl/prompt_generator.hpp"
#include "vllfl/rng.hpp"

namespace vllfl {

// ---------------------------------------------------------------------------
// Frozen backbone: the deterministic stand-in for the pre-trained detector.
// Text side: a token embedding table. Detection side: cosine scoring of
// region features against pooled class features plus a fixed random box
// head. Nothing in here is ever trained except the optional global token
// correction installed by base adaptation (and that is trained centrally,
// then re-frozen).
// ---------------------------------------------------------------------------

struct FrozenBackbone {
    std::size_t d = 0;
    std::uint64_t token_seed = 0;  // seeds hashed embeddings for unknown tokens
    std::map<std::string, std::vector<double>> token_table;  // fixed at creation
    Matrix box_head;               // 4 x d
    double tau = 10.0;             // logit temperature
    double center = 0.5;           // cosine value mapped to score 0.5
    double box_step = 0.2;         // max per-coordinate box adjustment
    std::vector<double> token_correction;  // d, zero unless base-adapted

    // Embedding of a single token: the creation-time table entry when
    // present, otherwise a hash-seeded Normal(0, 1/d) vector. Both paths are
    // pure functions of (token_seed, token).
    std::vector<double> token_embedding(const std::string& token) const {
        std::vector<double> e;
        auto it = token_table.find(token);
        if (it != token_table.end()) {
            e = it->second;
        } else {
            RngStream stream(token_seed, token);
            e.resize(d);
            const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
            for (double& v : e) v = stream.next_normal(0.0, stddev);
        }
        if (!token_correction.empty()) {
            for (std::size_t i = 0; i < d; ++i) e[i] += token_correction[i];
        }
        return e;
    }
};

inline std::vector<std::string> whitespace_tokens(const std::string& name) {
    std::istringstream in(name);
    std::vector<std::string> toks;
    std::string tok;
    while (in >> tok) toks.push_back(tok);
    return toks;
}

// Embed the concatenated class names of one task. Spans record which token
// rows belong to which class name, in input order.
inline ClassEmbeddingBatch encode_classnames(const FrozenBackbone& backbone,
                                             const std::vector<std::string>& class_names) {
    if (class_names.empty()) throw config_error("encode_classnames: empty class list");
    std::vector<std::vector<std::string>> token_lists;
    std::size_t n_tok = 0;
    for (const auto& name : class_names) {
        auto toks = whitespace_tokens(name);
        if (toks.empty()) {
            throw config_error("encode_classnames: class name '" + name + "' has no tokens");
        }
        n_tok += toks.size();
        token_lists.push_back(std::move(toks));
    }
    ClassEmbeddingBatch batch;
    batch.tokens = Matrix(n_tok, backbone.d);
    std::size_t row = 0;
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        ClassSpan span;
        span.class_name = class_names[c];
        span.start = row;
        span.len = token_lists[c].size();
        for (const auto& tok : token_lists[c]) {
            const auto e = backbone.token_embedding(tok);
            for (std::size_t j = 0; j < backbone.d; ++j) batch.tokens(row, j) = e[j];
            ++row;
        }
        batch.spans.push_back(std::move(span));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Prompted sequence: "X ... X classname" for every class, with the
// placeholder rows replaced by the generated prompt vectors. The m prompt
// rows sit immediately before each class's token rows.
// ---------------------------------------------------------------------------

struct PromptedSequence {
    Matrix rows;  // (n_tok + m * n_classes) x d
    std::vector<ClassSpan> spans;                 // token spans, re-indexed
    std::vector<std::size_t> prompt_block_start;  // per class, first prompt row
    std::size_t prompt_width = 0;
};

inline PromptedSequence assemble_prompted_embeddings(const ClassEmbeddingBatch& batch,
                                                     const PromptSet& prompts) {
    const std::size_t m = prompts.vectors.rows;
    const std::size_t d = batch.tokens.cols;
    if (m > 0 && prompts.vectors.cols != d) {
        throw shape_error("assemble_prompted_embeddings: prompt width mismatch");
    }
    PromptedSequence out;
    out.prompt_width = m;
    out.rows = Matrix(batch.tokens.rows + m * batch.spans.size(), d);
    std::size_t row = 0;
    for (const auto& span : batch.spans) {
        out.prompt_block_start.push_back(row);
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t j = 0; j < d; ++j) out.rows(row, j) = prompts.vectors(k, j);
            ++row;
        }
        ClassSpan new_span = span;
        new_span.start = row;
        for (std::size_t t = 0; t < span.len; ++t) {
            for (std::size_t j = 0; j < d; ++j) out.rows(row, j) = batch.tokens(span.start + t, j);
            ++row;
        }
        out.spans.push_back(std::move(new_span));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooled per-class features: L2-normalized mean over each class's prompt
// rows and token rows.
// ---------------------------------------------------------------------------

struct ClassFeatures {
    Matrix feats;                   // n_classes x d, unit-norm rows
    Matrix means;                   // pre-normalization means
    std::vector<double> mean_norms; // ||mean_c||
};

inline ClassFeatures class_features(const PromptedSequence& seq) {
    const std::size_t n_classes = seq.spans.size();
    const std::size_t d = seq.rows.cols;
    const std::size_t m = seq.prompt_width;
    ClassFeatures out;
    out.feats = Matrix(n_classes, d);
    out.means = Matrix(n_classes, d);
    out.mean_norms.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t group = m + seq.spans[c].len;
        auto add_row = [&](std::size_t r) {
            for (std::size_t j = 0; j < d; ++j) out.means(c, j) += seq.rows(r, j);
        };
        for (std::size_t k = 0; k < m; ++k) add_row(seq.prompt_block_start[c] + k);
        for (std::size_t t = 0; t < seq.spans[c].len; ++t) add_row(seq.spans[c].start + t);
        double nrm2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            out.means(c, j) /= static_cast<double>(group);
            nrm2 += out.means(c, j) * out.means(c, j);
        }
        const double nrm = std::sqrt(nrm2);
        if (!(nrm > 0.0)) {
            throw domain_error("class_features: zero-vector mean for class '" +
                               seq.spans[c].class_name + "'");
        }
        out.mean_norms[c] = nrm;
        for (std::size_t j = 0; j < d; ++j) out.feats(c, j) = out.means(c, j) / nrm;
    }
    return out;
}

// Backward through pooling + normalization: cotangent on the unit features
// becomes a cotangent on every row of the prompted sequence.
inline Matrix class_features_backward(const PromptedSequence& seq, const ClassFeatures& cf,
                                      const Matrix& d_feats) {
    if (d_feats.rows != cf.feats.rows || d_feats.cols != cf.feats.cols) {
        throw shape_error("class_features_backward: cotangent shape mismatch");
    }
    const std::size_t d = seq.rows.cols;
    const std::size_t m = seq.prompt_width;
    Matrix d_rows(seq.rows.rows, d);
    for (std::size_t c = 0; c < seq.spans.size(); ++c) {
        const std::size_t group = m + seq.spans[c].len;
        // d(v/||v||) applied to g: (g - t <t, g>) / ||v||
        double inner = 0.0;
        for (std::size_t j = 0; j < d; ++j) inner += cf.feats(c, j) * d_feats(c, j);
        std::vector<double> d_mean(d);
        for (std::size_t j = 0; j < d; ++j) {
            d_mean[j] = (d_feats(c, j) - cf.feats(c, j) * inner) / cf.mean_norms[c] /
                        static_cast<double>(group);
        }
        auto add_to_row = [&](std::size_t r) {
            for (std::size_t j = 0; j < d; ++j) d_rows(r, j) += d_mean[j];
        };
        for (std::size_t k = 0; k < m; ++k) add_to_row(seq.prompt_block_start[c] + k);
        for (std::size_t t = 0; t < seq.spans[c].len; ++t) add_to_row(seq.spans[c].start + t);
    }
    return d_rows;
}

// Collect the prompted-sequence row cotangents that land on prompt rows.
// Every class span holds a copy of the same m prompt vectors, so copies sum.
inline Matrix collect_prompt_grad(const PromptedSequence& seq, const Matrix& d_rows) {
    const std::size_t d = seq.rows.cols;
    Matrix d_prompts(seq.prompt_width, d);
    for (std::size_t c = 0; c < seq.spans.size(); ++c) {
        for (std::size_t k = 0; k < seq.prompt_width; ++k) {
            const std::size_t r = seq.prompt_block_start[c] + k;
            for (std::size_t j = 0; j < d; ++j) d_prompts(k, j) += d_rows(r, j);
        }
    }
    return d_prompts;
}

// Sum of cotangents over all token rows; the gradient of a global
// per-token correction vector.
inline std::vector<double> collect_token_grad(const PromptedSequence& seq, const Matrix& d_rows) {
    const std::size_t d = seq.rows.cols;
    std::vector<double> g(d, 0.0);
    for (const auto& span : seq.spans) {
        for (std::size_t t = 0; t < span.len; ++t) {
            const std::size_t r = span.start + t;
            for (std::size_t j = 0; j < d; ++j) g[j] += d_rows(r, j);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Scenes and detection.
// ---------------------------------------------------------------------------

struct Region {
    std::vector<double> feature;  // d, unit-norm
    BoxCxCyWH proposal;
};

struct GroundTruthInstance {
    std::size_t label = 0;  // world class id
    BoxCxCyWH box;
};

struct Scene {
    std::vector<Region> regions;
    std::vector<GroundTruthInstance> ground_truth;
};

struct Detection {
    BoxCxCyWH box;
    std::size_t class_index = 0;  // column in the class_feats matrix
    std::string class_name;
    double score = 0.0;       // sigmoid(tau * (similarity - center))
    double similarity = 0.0;  // cosine in [-1, 1]
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

inline BoxCxCyWH clamp_box_valid(double cx, double cy, double w, double h) {
    BoxCxCyWH b;
    b.w = std::clamp(w, 1e-3, 1.0);
    b.h = std::clamp(h, 1e-3, 1.0);
    b.cx = std::clamp(cx, 0.5 * b.w, 1.0 - 0.5 * b.w);
    b.cy = std::clamp(cy, 0.5 * b.h, 1.0 - 0.5 * b.h);
    return b;
}

}  // namespace detail

// Dense forward pass over every (region, class) pair, no thresholding.
// Keeps enough trace to push loss gradients back onto the class features.
// clamp_state per coordinate (cx, cy, w, h): -1 held at the low bound,
// +1 at the high bound, 0 free.
struct DenseForward {
    Matrix logits;        // n_regions x n_classes
    Matrix similarities;  // n_regions x n_classes
    std::vector<BoxCxCyWH> boxes;       // n_regions * n_classes, row-major
    std::vector<std::array<double, 4>> box_tanh;      // tanh(B (u o t)) per pair
    std::vector<std::array<signed char, 4>> box_clamped;
};

inline DenseForward detect_forward_for_training(const FrozenBackbone& backbone,
                                                const Scene& scene,
                                                const ClassFeatures& cf) {
    const std::size_t n_r = scene.regions.size();
    const std::size_t n_c = cf.feats.rows;
    if (cf.feats.cols != backbone.d) {
        throw shape_error("detect_forward_for_training: feature dim mismatch");
    }
    DenseForward out;
    out.logits = Matrix(n_r, n_c);
    out.similarities = Matrix(n_r, n_c);
    out.boxes.resize(n_r * n_c);
    out.box_tanh.resize(n_r * n_c);
    out.box_clamped.resize(n_r * n_c);
    const std::size_t d = backbone.d;
    for (std::size_t r = 0; r < n_r; ++r) {
        const auto& u = scene.regions[r].feature;
        if (u.size() != d) throw shape_error("detect_forward_for_training: region dim mismatch");
        for (std::size_t c = 0; c < n_c; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += u[j] * cf.feats(c, j);
            out.similarities(r, c) = s;
            out.logits(r, c) = backbone.tau * (s - backbone.center);

            // Box adjustment: proposal + box_step * tanh(B (u o t)).
            std::array<double, 4> z{0.0, 0.0, 0.0, 0.0};
            for (std::size_t k = 0; k < 4; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    acc += backbone.box_head(k, j) * u[j] * cf.feats(c, j);
                z[k] = std::tanh(acc);
            }
            const auto& pb = scene.regions[r].proposal;
            const double cx = pb.cx + backbone.box_step * z[0];
            const double cy = pb.cy + backbone.box_step * z[1];
            const double w = pb.w + backbone.box_step * z[2];
            const double h = pb.h + backbone.box_step * z[3];
            const BoxCxCyWH clamped = detail::clamp_box_valid(cx, cy, w, h);
            const std::size_t idx = r * n_c + c;
            out.boxes[idx] = clamped;
            out.box_tanh[idx] = z;
            auto state = [](double raw, double lo, double hi) -> signed char {
                if (raw < lo) return -1;
                if (raw > hi) return 1;
                return 0;
            };
            out.box_clamped[idx] = {
                state(cx, 0.5 * clamped.w, 1.0 - 0.5 * clamped.w),
                state(cy, 0.5 * clamped.h, 1.0 - 0.5 * clamped.h),
                state(w, 1e-3, 1.0), state(h, 1e-3, 1.0)};
        }
    }
    return out;
}

// Backward of the dense forward: cotangents on logits and predicted boxes
// become a cotangent on the class features. The clamp Jacobian is exact:
// a free coordinate passes through, a held coordinate passes nothing on its
// own axis, and a held center rides its extent's bound (d(cx)/d(w) = +-1/2
// while the extent itself is free).
inline Matrix detect_backward_to_features(const FrozenBackbone& backbone, const Scene& scene,
                                          const ClassFeatures& cf, const DenseForward& fwd,
                                          const Matrix& d_logits,
                                          const std::vector<std::array<double, 4>>& d_boxes) {
    const std::size_t n_r = scene.regions.size();
    const std::size_t n_c = cf.feats.rows;
    if (d_logits.rows != n_r || d_logits.cols != n_c || d_boxes.size() != n_r * n_c) {
        throw shape_error("detect_backward_to_features: cotangent shape mismatch");
    }
    const std::size_t d = backbone.d;
    Matrix d_feats(n_c, d);
    for (std::size_t r = 0; r < n_r; ++r) {
        const auto& u = scene.regions[r].feature;
        for (std::size_t c = 0; c < n_c; ++c) {
            const std::size_t idx = r * n_c + c;
            // logit path: logit = tau * (<u, t> - center)
            const double gl = d_logits(r, c) * backbone.tau;
            if (gl != 0.0) {
                for (std::size_t j = 0; j < d; ++j) d_feats(c, j) += gl * u[j];
            }
            const auto& gz = d_boxes[idx];
            if (gz[0] == 0.0 && gz[1] == 0.0 && gz[2] == 0.0 && gz[3] == 0.0) continue;

            // Cotangent in pre-clamp (raw) coordinates.
            const auto& st = fwd.box_clamped[idx];
            std::array<double, 4> graw{0.0, 0.0, 0.0, 0.0};
            graw[0] = st[0] == 0 ? gz[0] : 0.0;
            graw[1] = st[1] == 0 ? gz[1] : 0.0;
            graw[2] = st[2] == 0 ? gz[2] : 0.0;
            graw[3] = st[3] == 0 ? gz[3] : 0.0;
            if (st[0] != 0 && st[2] == 0) graw[2] -= 0.5 * st[0] * gz[0];
            if (st[1] != 0 && st[3] == 0) graw[3] -= 0.5 * st[1] * gz[1];

            // raw coord = proposal + step * tanh(B (u o t))
            for (std::size_t k = 0; k < 4; ++k) {
                if (graw[k] == 0.0) continue;
                const double th = fwd.box_tanh[idx][k];
                const double gk = graw[k] * backbone.box_step * (1.0 - th * th);
                for (std::size_t j = 0; j < d; ++j)
                    d_feats(c, j) += gk * backbone.box_head(k, j) * u[j];
            }
        }
    }
    return d_feats;
}

// Thresholded inference. At most one detection per region: the class with
// the highest score (ties broken by the lowest class index), emitted only
// if score >= box_threshold and similarity >= text_threshold.
inline std::vector<Detection> detect(const FrozenBackbone& backbone, const Scene& scene,
                                     const ClassFeatures& cf,
                                     const std::vector<std::string>& class_names,
                                     double box_threshold = 0.3, double text_threshold = 0.25) {
    if (class_names.size() != cf.feats.rows) {
        throw shape_error("detect: class name count mismatch");
    }
    const DenseForward fwd = detect_forward_for_training(backbone, scene, cf);
    std::vector<Detection> dets;
    const std::size_t n_c = cf.feats.rows;
    for (std::size_t r = 0; r < scene.regions.size(); ++r) {
        if (n_c == 0) break;
        std::size_t best = 0;
        double best_score = sigmoid(fwd.logits(r, 0));
        for (std::size_t c = 1; c < n_c; ++c) {
            const double sc = sigmoid(fwd.logits(r, c));
            if (sc > best_score) {
                best_score = sc;
                best = c;
            }
        }
        const double sim = fwd.similarities(r, best);
        if (best_score >= box_threshold && sim >= text_threshold) {
            Detection det;
            det.box = fwd.boxes[r * n_c + best];
            det.class_index = best;
            det.class_name = class_names[best];
            det.score = best_score;
            det.similarity = sim;
            dets.push_back(std::move(det));
        }
    }
    return dets;
}

}  // namespace vllfl
