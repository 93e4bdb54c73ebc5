#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "vllfl/rng.hpp"
#include "vllfl/trainer.hpp"
#include "vllfl/world.hpp"

using namespace vllfl;

namespace {

WorldConfig small_config() {
    WorldConfig cfg;
    cfg.dim = 32;
    cfg.num_classes = 4;
    cfg.class_names = {"apple", "lemon", "blood orange", "green pear"};
    return cfg;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return dot(a, b) / (norm(a) * norm(b));
}

std::vector<double> feat_row(const Matrix& m, std::size_t r) {
    return std::vector<double>(m.data.begin() + r * m.cols, m.data.begin() + (r + 1) * m.cols);
}

}  // namespace

TEST_CASE("same seed produces the identical world") {
    const auto cfg = small_config();
    const auto a = generate_world(cfg, RngStream(5, "world"));
    const auto b = generate_world(cfg, RngStream(5, "world"));
    REQUIRE(a.prototypes.data == b.prototypes.data);
    REQUIRE(a.bias == b.bias);
    REQUIRE(a.backbone.box_head.data == b.backbone.box_head.data);
    for (const auto& [tok, e] : a.backbone.token_table) {
        REQUIRE(b.backbone.token_table.at(tok) == e);
    }
}

TEST_CASE("prototypes are unit norm and the bias has norm beta") {
    auto cfg = small_config();
    cfg.beta = 2.0;
    const auto world = generate_world(cfg, RngStream(6, "world"));
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        REQUIRE_THAT(norm(feat_row(world.prototypes, c)), Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
    REQUIRE_THAT(norm(world.bias), Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("zero beta gives unbiased noisy prototype embeddings") {
    auto cfg = small_config();
    cfg.beta = 0.0;
    cfg.sigma_tok = 0.05;
    const auto world = generate_world(cfg, RngStream(7, "world"));
    const auto& e = world.backbone.token_table.at("apple");
    std::vector<double> proto = feat_row(world.prototypes, 0);
    std::vector<double> diff(e.size());
    for (std::size_t j = 0; j < e.size(); ++j) diff[j] = e[j] - proto[j];
    REQUIRE(norm(diff) < 0.15);  // pure noise of magnitude ~0.05
}

TEST_CASE("prototype pairs stay well separated across 100 seeds") {
    auto cfg = WorldConfig{};
    cfg.dim = 64;
    cfg.num_classes = 6;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto world = generate_world(cfg, RngStream(seed, "world"));
        for (std::size_t a = 0; a < 6; ++a) {
            for (std::size_t b = a + 1; b < 6; ++b) {
                REQUIRE(std::abs(cosine(feat_row(world.prototypes, a),
                                        feat_row(world.prototypes, b))) < 0.5);
            }
        }
    }
}

TEST_CASE("duplicate tokens across class names are rejected") {
    auto cfg = small_config();
    cfg.class_names = {"red apple", "red pear", "lemon", "plum"};
    REQUIRE_THROWS_AS(generate_world(cfg, RngStream(8, "world")), config_error);
}

TEST_CASE("degenerate dimensions are rejected") {
    WorldConfig cfg;
    cfg.dim = 4;
    REQUIRE_THROWS_AS(generate_world(cfg, RngStream(9, "world")), config_error);
}

TEST_CASE("noiseless scenes reproduce prototypes and ground truth exactly") {
    auto cfg = small_config();
    cfg.sigma_img = 0.0;
    cfg.sigma_box = 0.0;
    const auto world = generate_world(cfg, RngStream(10, "world"));
    RngStream stream(11, "scenes", 0);
    const Scene scene = generate_scene(world, {1}, stream);
    for (std::size_t i = 0; i < scene.ground_truth.size(); ++i) {
        REQUIRE(scene.ground_truth[i].label == 1);
        const auto& u = scene.regions[i].feature;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            REQUIRE_THAT(u[j], Catch::Matchers::WithinAbs(world.prototypes(1, j), 1e-12));
        }
        REQUIRE(scene.regions[i].proposal.cx == scene.ground_truth[i].box.cx);
        REQUIRE(scene.regions[i].proposal.w == scene.ground_truth[i].box.w);
    }
}

TEST_CASE("generated scenes respect all invariants over 10000 draws") {
    const auto world = generate_world(small_config(), RngStream(12, "world"));
    RngStream stream(13, "scenes", 0);
    for (int trial = 0; trial < 10000; ++trial) {
        const Scene scene = generate_scene(world, {0, 2}, stream);
        REQUIRE(scene.ground_truth.size() >= 1);
        REQUIRE(scene.ground_truth.size() <= 4);
        REQUIRE(scene.regions.size() >= scene.ground_truth.size() + 2);
        REQUIRE(scene.regions.size() <= scene.ground_truth.size() + 6);
        for (const auto& gt : scene.ground_truth) {
            REQUIRE((gt.label == 0 || gt.label == 2));
            REQUIRE(gt.box.w > 0.0);
            REQUIRE(gt.box.h > 0.0);
            REQUIRE(gt.box.x1() >= 0.0);
            REQUIRE(gt.box.x2() <= 1.0);
            REQUIRE(gt.box.y1() >= 0.0);
            REQUIRE(gt.box.y2() <= 1.0);
        }
        for (const auto& region : scene.regions) {
            REQUIRE_THAT(norm(region.feature), Catch::Matchers::WithinAbs(1.0, 1e-9));
            REQUIRE(region.proposal.w >= 1e-3);
            REQUIRE(region.proposal.x1() >= -1e-12);
            REQUIRE(region.proposal.x2() <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("split proportions are 8:1:1 up to rounding and disjoint") {
    REQUIRE(split_counts(50) == std::array<std::size_t, 3>{40, 5, 5});
    REQUIRE(split_counts(10) == std::array<std::size_t, 3>{8, 1, 1});
    REQUIRE(split_counts(7) == std::array<std::size_t, 3>{5, 0, 2});
    const auto world = generate_world(small_config(), RngStream(14, "world"));
    const auto tasks = make_tasks(world, 15, 2, 2, 20);
    REQUIRE(tasks.size() == 2);
    for (const auto& task : tasks) {
        REQUIRE(task.train.size() == 16);
        REQUIRE(task.val.size() == 2);
        REQUIRE(task.test.size() == 2);
    }
    REQUIRE(tasks[0].class_ids == std::vector<std::size_t>{0, 1});
    REQUIRE(tasks[1].class_ids == std::vector<std::size_t>{2, 3});
}

TEST_CASE("oracle prompts are zero when beta is zero") {
    auto cfg = small_config();
    cfg.beta = 0.0;
    const auto world = generate_world(cfg, RngStream(16, "world"));
    TaskSpec task;
    task.class_ids = {0, 1};
    task.class_names = {"apple", "lemon"};
    const auto prompts = oracle_prompts(world, task, 4);
    REQUIRE(prompts.vectors.rows == 4);
    for (double v : prompts.vectors.data) REQUIRE(v == 0.0);
}

TEST_CASE("oracle prompts recover high prototype alignment, zero prompts do not") {
    // Alignment of the pooled class feature with the prototype: the oracle
    // cancels the bias (cosine >= 0.95 at sigma_tok = 0.1 for every class);
    // with no prompts the bias holds the cosine near (1 + <g,b>)/|g+b|,
    // about 0.71 at beta = 2. Individual classes can sit higher when their
    // prototype happens to align with the bias direction, so the 0.75 bound
    // is asserted on the per-seed task mean.
    WorldConfig cfg;
    cfg.dim = 64;
    cfg.num_classes = 6;
    cfg.beta = 2.0;
    cfg.sigma_tok = 0.1;
    double worst_oracle = 1.0, zero_grand_mean = 0.0, best_zero = -1.0;
    for (std::uint64_t seed = 100; seed < 200; ++seed) {
        const auto world = generate_world(cfg, RngStream(seed, "world"));
        TaskSpec task;
        task.class_ids = {0, 1};
        task.class_names = {world.class_names[0], world.class_names[1]};
        const auto batch = encode_classnames(world.backbone, task.class_names);

        const auto cf_oracle = class_features(
            assemble_prompted_embeddings(batch, oracle_prompts(world, task, 4)));
        const auto cf_zero =
            class_features(assemble_prompted_embeddings(batch, zero_prompts()));
        for (std::size_t c = 0; c < 2; ++c) {
            const double co = cosine(feat_row(cf_oracle.feats, c), feat_row(world.prototypes, c));
            const double cz = cosine(feat_row(cf_zero.feats, c), feat_row(world.prototypes, c));
            worst_oracle = std::min(worst_oracle, co);
            best_zero = std::max(best_zero, cz);
            zero_grand_mean += cz / 200.0;
        }
    }
    REQUIRE(worst_oracle >= 0.95);
    REQUIRE(zero_grand_mean <= 0.75);
    REQUIRE(best_zero <= 0.9);
}

TEST_CASE("base adaptation leaves the world unchanged at zero steps") {
    auto world = generate_world(small_config(), RngStream(17, "world"));
    const auto before = world.backbone.token_table;
    BaseAdaptationConfig bac;
    bac.steps = 0;
    base_adaptation(world, bac, 17);
    REQUIRE(world.backbone.token_correction.empty());
    REQUIRE(world.backbone.token_table == before);
}

TEST_CASE("base adaptation drives the correction toward the negated bias") {
    WorldConfig cfg;
    cfg.dim = 64;
    cfg.num_classes = 6;
    double prev_mean = -1.0;
    for (std::size_t steps : {5, 40, 300}) {
        double mean_cos = 0.0;
        for (std::uint64_t seed = 300; seed < 303; ++seed) {
            auto world = generate_world(cfg, RngStream(seed, "world"));
            BaseAdaptationConfig bac;
            bac.steps = steps;
            base_adaptation(world, bac, seed);
            std::vector<double> neg_bias = world.bias;
            for (double& v : neg_bias) v = -v;
            mean_cos += cosine(world.backbone.token_correction, neg_bias) / 3.0;
        }
        REQUIRE(mean_cos > prev_mean);
        prev_mean = mean_cos;
    }
    REQUIRE(prev_mean > 0.9);
}
