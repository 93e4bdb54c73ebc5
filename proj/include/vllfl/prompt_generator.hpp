#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/matrix.hpp"
#include "vllfl/rng.hpp"

namespace vllfl {

// Token embeddings for a task's concatenated class names, grouped into
// per-class spans. spans are disjoint, ordered, and cover every row.
struct ClassSpan {
    std::string class_name;
    std::size_t start = 0;
    std::size_t len = 0;
};

struct ClassEmbeddingBatch {
    Matrix tokens;  // n_tok x d
    std::vector<ClassSpan> spans;
};

// The generated prompt vectors, always exactly m rows.
struct PromptSet {
    Matrix vectors;  // m x d
};

// All trainable state of the prompt generator: learnable queries, key/value
// projections, and a two-layer tanh perceptron applied to the attention
// output. This is the only thing that ever goes on the wire.
struct PromptGeneratorParams {
    std::size_t m = 0;    // prompt width
    std::size_t d = 0;    // embedding dimension
    std::size_t d_h = 0;  // hidden width
    Matrix q;             // m x d
    Matrix w_k;           // d x d
    Matrix w_v;           // d x d
    Matrix w1;            // d x d_h
    std::vector<double> b1;  // d_h
    Matrix w2;            // d_h x d
    std::vector<double> b2;  // d

    std::size_t flat_count() const {
        return m * d + 2 * d * d + d * d_h + d_h + d_h * d + d;
    }
};

// Gradients with the same shapes as the parameters.
using PromptGeneratorGrad = PromptGeneratorParams;

// Intermediates of one forward pass, kept for the backward pass.
struct ForwardTrace {
    Matrix k_t;           // n_tok x d
    Matrix v_t;           // n_tok x d
    Matrix attn_weights;  // m x n_tok, rows sum to 1
    Matrix attn_out;      // m x d
    Matrix hidden_pre;    // m x d_h (pre-activation)
    Matrix hidden;        // m x d_h (tanh applied)
};

inline PromptGeneratorParams init_params(std::size_t m, std::size_t d, std::size_t d_h,
                                         RngStream& stream) {
    if (m < 1 || d < 1 || d_h < 1) {
        throw config_error("init_params: dimensions must be >= 1");
    }
    // Fixed draw order: q, w_k, w_v, w1, w2. Biases start at zero.
    constexpr double kInitStd = 0.02;
    PromptGeneratorParams p;
    p.m = m;
    p.d = d;
    p.d_h = d_h;
    p.q = Matrix::randn(m, d, stream, 0.0, kInitStd);
    p.w_k = Matrix::randn(d, d, stream, 0.0, kInitStd);
    p.w_v = Matrix::randn(d, d, stream, 0.0, kInitStd);
    p.w1 = Matrix::randn(d, d_h, stream, 0.0, kInitStd);
    p.w2 = Matrix::randn(d_h, d, stream, 0.0, kInitStd);
    p.b1.assign(d_h, 0.0);
    p.b2.assign(d, 0.0);
    return p;
}

inline PromptGeneratorGrad zero_grad_like(const PromptGeneratorParams& p) {
    PromptGeneratorGrad g;
    g.m = p.m;
    g.d = p.d;
    g.d_h = p.d_h;
    g.q = Matrix(p.m, p.d);
    g.w_k = Matrix(p.d, p.d);
    g.w_v = Matrix(p.d, p.d);
    g.w1 = Matrix(p.d, p.d_h);
    g.b1.assign(p.d_h, 0.0);
    g.w2 = Matrix(p.d_h, p.d);
    g.b2.assign(p.d, 0.0);
    return g;
}

// Single-head scaled dot-product cross-attention over the class embeddings,
// then the two-layer perceptron. Returns the m prompt vectors and the trace.
inline std::pair<PromptSet, ForwardTrace> generate_prompts(
    const PromptGeneratorParams& params, const ClassEmbeddingBatch& batch) {
    const Matrix& t = batch.tokens;
    if (t.cols != params.d) {
        throw shape_error("generate_prompts: token dim " + std::to_string(t.cols) +
                          " != d " + std::to_string(params.d));
    }
    if (t.rows == 0) throw shape_error("generate_prompts: empty token batch");

    ForwardTrace tr;
    tr.k_t = matmul(t, params.w_k);
    tr.v_t = matmul(t, params.w_v);

    Matrix scores = matmul_a_bt(params.q, tr.k_t);  // m x n_tok
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.d));
    scores *= scale;
    tr.attn_weights = softmax_rows(scores);
    tr.attn_out = matmul(tr.attn_weights, tr.v_t);  // m x d

    tr.hidden_pre = matmul(tr.attn_out, params.w1);  // m x d_h
    for (std::size_t i = 0; i < tr.hidden_pre.rows; ++i)
        for (std::size_t j = 0; j < tr.hidden_pre.cols; ++j)
            tr.hidden_pre(i, j) += params.b1[j];
    tr.hidden = tr.hidden_pre;
    for (double& v : tr.hidden.data) v = std::tanh(v);

    PromptSet out;
    out.vectors = matmul(tr.hidden, params.w2);  // m x d
    for (std::size_t i = 0; i < out.vectors.rows; ++i)
        for (std::size_t j = 0; j < out.vectors.cols; ++j)
            out.vectors(i, j) += params.b2[j];
    return {out, tr};
}

// Reverse-mode gradients of the prompt output contracted with dl_dp.
// The trace must come from generate_prompts with the same params and batch.
inline PromptGeneratorGrad backprop(const PromptGeneratorParams& params,
                                    const ForwardTrace& trace,
                                    const ClassEmbeddingBatch& batch,
                                    const Matrix& dl_dp) {
    const Matrix& t = batch.tokens;
    if (dl_dp.rows != params.m || dl_dp.cols != params.d) {
        throw shape_error("backprop: dl_dp shape mismatch");
    }
    if (trace.attn_weights.rows != params.m || trace.attn_weights.cols != t.rows ||
        trace.k_t.rows != t.rows || trace.hidden.cols != params.d_h) {
        throw shape_error("backprop: trace does not match params/batch");
    }

    PromptGeneratorGrad g = zero_grad_like(params);

    // P = hidden * w2 + b2
    for (std::size_t i = 0; i < dl_dp.rows; ++i)
        for (std::size_t j = 0; j < dl_dp.cols; ++j) g.b2[j] += dl_dp(i, j);
    g.w2 = matmul_at_b(trace.hidden, dl_dp);              // d_h x d
    Matrix d_hidden = matmul_a_bt(dl_dp, params.w2);      // m x d_h

    // hidden = tanh(hidden_pre)
    Matrix d_pre = d_hidden;
    for (std::size_t i = 0; i < d_pre.data.size(); ++i) {
        const double th = trace.hidden.data[i];
        d_pre.data[i] *= (1.0 - th * th);
    }

    // hidden_pre = attn_out * w1 + b1
    for (std::size_t i = 0; i < d_pre.rows; ++i)
        for (std::size_t j = 0; j < d_pre.cols; ++j) g.b1[j] += d_pre(i, j);
    g.w1 = matmul_at_b(trace.attn_out, d_pre);            // d x d_h
    Matrix d_attn_out = matmul_a_bt(d_pre, params.w1);    // m x d

    // attn_out = attn_weights * v_t
    Matrix d_weights = matmul_a_bt(d_attn_out, trace.v_t);  // m x n_tok
    Matrix d_v_t = matmul_at_b(trace.attn_weights, d_attn_out);  // n_tok x d

    // attn_weights = softmax(scores): dS_j = A_j * (dA_j - sum_k dA_k A_k)
    Matrix d_scores(params.m, t.rows);
    for (std::size_t i = 0; i < params.m; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < t.rows; ++j)
            inner += d_weights(i, j) * trace.attn_weights(i, j);
        for (std::size_t j = 0; j < t.rows; ++j)
            d_scores(i, j) = trace.attn_weights(i, j) * (d_weights(i, j) - inner);
    }

    // scores = q * k_t^T / sqrt(d)
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.d));
    d_scores *= scale;
    g.q = matmul(d_scores, trace.k_t);            // m x d
    Matrix d_k_t = matmul_at_b(d_scores, params.q);  // n_tok x d

    // k_t = t * w_k; v_t = t * w_v
    g.w_k = matmul_at_b(t, d_k_t);
    g.w_v = matmul_at_b(t, d_v_t);
    return g;
}

// --- flat vector view (optimizer + wire order: q, w_k, w_v, w1, b1, w2, b2) ---

inline std::vector<double> flatten_params(const PromptGeneratorParams& p) {
    std::vector<double> flat;
    flat.reserve(p.flat_count());
    auto push = [&](const std::vector<double>& v) {
        flat.insert(flat.end(), v.begin(), v.end());
    };
    push(p.q.data);
    push(p.w_k.data);
    push(p.w_v.data);
    push(p.w1.data);
    push(p.b1);
    push(p.w2.data);
    push(p.b2);
    return flat;
}

inline void unflatten_params(const std::vector<double>& flat, PromptGeneratorParams& p) {
    if (flat.size() != p.flat_count()) {
        throw shape_error("unflatten_params: length mismatch");
    }
    std::size_t off = 0;
    auto take = [&](std::vector<double>& dst) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
        off += dst.size();
    };
    take(p.q.data);
    take(p.w_k.data);
    take(p.w_v.data);
    take(p.w1.data);
    take(p.b1);
    take(p.w2.data);
    take(p.b2);
}

}  // namespace vllfl
