#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vllfl/finite_diff.hpp"
#include "vllfl/prompt_generator.hpp"
#include "vllfl/rng.hpp"

using namespace vllfl;

namespace {

ClassEmbeddingBatch batch_from(const Matrix& tokens, std::vector<ClassSpan> spans) {
    ClassEmbeddingBatch b;
    b.tokens = tokens;
    b.spans = std::move(spans);
    return b;
}

ClassEmbeddingBatch random_batch(std::size_t n_tok, std::size_t d, RngStream& stream) {
    return batch_from(Matrix::randn(n_tok, d, stream), {{"x", 0, n_tok}});
}

}  // namespace

TEST_CASE("flat parameter count follows the shape formula") {
    RngStream stream(1, "init");
    const auto p = init_params(4, 64, 64, stream);
    // m*d + 2*d^2 + d*d_h + d_h + d_h*d + d
    REQUIRE(p.flat_count() == 4 * 64 + 2 * 64 * 64 + 64 * 64 + 64 + 64 * 64 + 64);
    REQUIRE(p.flat_count() == 16768u);
    REQUIRE(flatten_params(p).size() == p.flat_count());
}

TEST_CASE("same seed gives identical parameters, biases start at zero") {
    RngStream s1(9, "init");
    RngStream s2(9, "init");
    const auto a = init_params(3, 16, 8, s1);
    const auto b = init_params(3, 16, 8, s2);
    REQUIRE(flatten_params(a) == flatten_params(b));
    for (double v : a.b1) REQUIRE(v == 0.0);
    for (double v : a.b2) REQUIRE(v == 0.0);
}

TEST_CASE("zero dimensions raise config error") {
    RngStream stream(1, "init");
    REQUIRE_THROWS_AS(init_params(0, 8, 8, stream), config_error);
    REQUIRE_THROWS_AS(init_params(2, 0, 8, stream), config_error);
}

TEST_CASE("single-token attention collapses every prompt row to h_phi(t)") {
    RngStream stream(10, "init");
    auto p = init_params(4, 8, 8, stream);
    p.w_k = Matrix::identity(8);
    p.w_v = Matrix::identity(8);
    const Matrix token = Matrix::randn(1, 8, stream);
    const auto [prompts, trace] = generate_prompts(p, batch_from(token, {{"t", 0, 1}}));

    // With one key, attention output is exactly the token for every query.
    std::vector<double> expected(8);
    for (std::size_t j = 0; j < 8; ++j) {
        double pre = p.b1[j];
        for (std::size_t i = 0; i < 8; ++i) pre += token(0, i) * p.w1(i, j);
        expected[j] = std::tanh(pre);
    }
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t j = 0; j < 8; ++j) {
            double want = p.b2[j];
            for (std::size_t i = 0; i < 8; ++i) want += expected[i] * p.w2(i, j);
            REQUIRE_THAT(prompts.vectors(k, j), Catch::Matchers::WithinAbs(want, 1e-12));
        }
    }
}

TEST_CASE("null last layer produces the zero prompt set") {
    RngStream stream(11, "init");
    auto p = init_params(3, 8, 8, stream);
    p.w2 = Matrix(8, 8, 0.0);
    p.b2.assign(8, 0.0);
    const auto [prompts, trace] = generate_prompts(p, random_batch(5, 8, stream));
    REQUIRE(prompts.vectors.rows == 3);
    for (double v : prompts.vectors.data) REQUIRE(v == 0.0);
}

TEST_CASE("prompt count is m regardless of token count") {
    RngStream stream(12, "init");
    const auto p = init_params(5, 8, 8, stream);
    for (std::size_t n_tok : {1, 3, 9}) {
        auto batch = random_batch(n_tok, 8, stream);
        const auto [prompts, trace] = generate_prompts(p, batch);
        REQUIRE(prompts.vectors.rows == 5);
        REQUIRE(prompts.vectors.cols == 8);
        // Attention rows always normalize.
        for (std::size_t i = 0; i < trace.attn_weights.rows; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < trace.attn_weights.cols; ++j)
                sum += trace.attn_weights(i, j);
            REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }
}

TEST_CASE("permuting tokens within a span leaves the prompts unchanged") {
    RngStream stream(13, "init");
    const auto p = init_params(4, 8, 8, stream);
    auto batch = random_batch(6, 8, stream);
    const auto [prompts, trace] = generate_prompts(p, batch);

    ClassEmbeddingBatch permuted = batch;
    const std::size_t order[] = {3, 0, 5, 1, 4, 2};
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < 8; ++j) permuted.tokens(r, j) = batch.tokens(order[r], j);
    const auto [prompts2, trace2] = generate_prompts(p, permuted);
    for (std::size_t i = 0; i < prompts.vectors.data.size(); ++i) {
        REQUIRE_THAT(prompts2.vectors.data[i],
                     Catch::Matchers::WithinAbs(prompts.vectors.data[i], 1e-12));
    }
}

TEST_CASE("generate_prompts is pure: same inputs, bitwise same outputs") {
    RngStream stream(14, "init");
    const auto p = init_params(2, 8, 4, stream);
    const auto batch = random_batch(4, 8, stream);
    const auto [a, ta] = generate_prompts(p, batch);
    const auto [b, tb] = generate_prompts(p, batch);
    REQUIRE(a.vectors.data == b.vectors.data);
}

TEST_CASE("token dimension mismatch raises shape error") {
    RngStream stream(15, "init");
    const auto p = init_params(2, 8, 4, stream);
    REQUIRE_THROWS_AS(generate_prompts(p, random_batch(3, 7, stream)), shape_error);
}

TEST_CASE("zero cotangent gives zero gradients") {
    RngStream stream(16, "init");
    const auto p = init_params(2, 8, 4, stream);
    const auto batch = random_batch(3, 8, stream);
    const auto [prompts, trace] = generate_prompts(p, batch);
    const auto g = backprop(p, trace, batch, Matrix(2, 8, 0.0));
    for (double v : flatten_params(g)) REQUIRE(v == 0.0);
}

TEST_CASE("b2 gradient equals the column sums of the cotangent") {
    RngStream stream(17, "init");
    const auto p = init_params(3, 8, 4, stream);
    const auto batch = random_batch(4, 8, stream);
    const auto [prompts, trace] = generate_prompts(p, batch);
    const Matrix dl = Matrix::randn(3, 8, stream);
    const auto g = backprop(p, trace, batch, dl);
    for (std::size_t j = 0; j < 8; ++j) {
        double want = 0.0;
        for (std::size_t i = 0; i < 3; ++i) want += dl(i, j);
        REQUIRE_THAT(g.b2[j], Catch::Matchers::WithinAbs(want, 1e-14));
    }
}

TEST_CASE("analytic gradients match finite differences over random draws") {
    RngStream stream(18, "init");
    int worst_reported = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + stream.next_index(3);
        const std::size_t d = 4 + stream.next_index(5);
        const std::size_t d_h = 3 + stream.next_index(5);
        const std::size_t n_tok = 1 + stream.next_index(5);
        auto p = init_params(m, d, d_h, stream);
        // Non-trivial scale so tanh is active.
        std::vector<double> flat = flatten_params(p);
        for (double& v : flat) v *= 20.0;
        unflatten_params(flat, p);
        const auto batch = random_batch(n_tok, d, stream);
        const Matrix contraction = Matrix::randn(m, d, stream);

        const auto [prompts, trace] = generate_prompts(p, batch);
        const auto analytic = flatten_params(backprop(p, trace, batch, contraction));

        auto f = [&](const std::vector<double>& x) {
            PromptGeneratorParams q = p;
            unflatten_params(x, q);
            const auto [out, tr] = generate_prompts(q, batch);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.vectors.data.size(); ++i)
                acc += out.vectors.data[i] * contraction.data[i];
            return acc;
        };
        const auto fd = finite_diff_grad(f, flatten_params(p), 1e-5);
        const double rel = gradient_rel_error(analytic, fd);
        if (rel >= 1e-4) ++worst_reported;
        REQUIRE(rel < 1e-4);
    }
    REQUIRE(worst_reported == 0);
}

TEST_CASE("stale trace raises shape error") {
    RngStream stream(19, "init");
    const auto p = init_params(2, 8, 4, stream);
    const auto batch = random_batch(3, 8, stream);
    const auto other = random_batch(5, 8, stream);
    const auto [prompts, trace] = generate_prompts(p, other);
    REQUIRE_THROWS_AS(backprop(p, trace, batch, Matrix(2, 8)), shape_error);
}
