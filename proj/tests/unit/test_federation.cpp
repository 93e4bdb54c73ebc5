#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vllfl/federation.hpp"
#include "vllfl/trainer.hpp"
#include "vllfl/world.hpp"

using namespace vllfl;

namespace {

WorldConfig tiny_world_config() {
    WorldConfig cfg;
    cfg.dim = 32;
    cfg.num_classes = 4;
    cfg.beta = 2.0;
    cfg.class_names = {"apple", "lemon", "blood orange", "green pear"};
    return cfg;
}

FederationConfig tiny_fed(std::uint64_t master, std::size_t n_clients, std::size_t rounds) {
    FederationConfig cfg;
    cfg.n_clients = n_clients;
    cfg.rounds = rounds;
    cfg.local_epochs = 1;
    cfg.participation_rate = 1.0;
    cfg.batch_size = 4;
    cfg.seeds = StreamSeeds::from_master(master);
    return cfg;
}

}  // namespace

TEST_CASE("selection size follows max(1, round(rate * n))") {
    FederationConfig cfg = tiny_fed(1, 3, 1);
    cfg.participation_rate = 0.7;
    REQUIRE(select_clients(cfg, 0).size() == 2);  // round(2.1) = 2
    cfg.participation_rate = 1.0;
    REQUIRE(select_clients(cfg, 0) == std::vector<std::size_t>{0, 1, 2});
    cfg.participation_rate = 0.1;
    REQUIRE(select_clients(cfg, 0).size() == 1);  // max(1, round(0.3))
}

TEST_CASE("selection is deterministic in (seed, round) and uniform in the long run") {
    FederationConfig cfg = tiny_fed(9, 3, 1);
    cfg.participation_rate = 0.7;
    REQUIRE(select_clients(cfg, 17) == select_clients(cfg, 17));

    std::vector<std::size_t> hits(3, 0);
    const std::size_t rounds = 10000;
    for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t cid : select_clients(cfg, r)) hits[cid] += 1;
    }
    for (std::size_t cid = 0; cid < 3; ++cid) {
        const double frac = static_cast<double>(hits[cid]) / static_cast<double>(rounds);
        REQUIRE_THAT(frac, Catch::Matchers::WithinAbs(2.0 / 3.0, 0.02));
    }
}

TEST_CASE("aggregating identical updates returns that update exactly") {
    RngStream stream(2, "init");
    PromptModel model = init_model(Method::vllfl, 2, 16, 8, stream);
    const auto payload = model.serialize();
    std::vector<ClientUpdate> updates;
    for (std::size_t i = 0; i < 3; ++i) updates.push_back({i, 0, payload, {}});
    const PromptModel mean = aggregate(updates, Method::vllfl);
    REQUIRE(mean.serialize() == payload);
}

TEST_CASE("two-point aggregation gives the midpoint") {
    PromptModel a, b;
    a.method = b.method = Method::fedcoop;
    a.static_prompts = Matrix::from_rows({{1, 3}});
    b.static_prompts = Matrix::from_rows({{3, 5}});
    std::vector<ClientUpdate> updates{{0, 0, a.serialize(), {}}, {1, 0, b.serialize(), {}}};
    const PromptModel mean = aggregate(updates, Method::fedcoop);
    REQUIRE(mean.static_prompts.data == std::vector<double>{2.0, 4.0});
}

TEST_CASE("aggregation ignores arrival order") {
    RngStream stream(3, "init");
    std::vector<ClientUpdate> updates;
    for (std::size_t i = 0; i < 4; ++i) {
        PromptModel m = init_model(Method::vllfl, 2, 12, 6, RngStream(100 + i, "init"));
        updates.push_back({i, 0, m.serialize(), {}});
    }
    auto shuffled = updates;
    std::swap(shuffled[0], shuffled[3]);
    std::swap(shuffled[1], shuffled[2]);
    REQUIRE(aggregate(updates, Method::vllfl).serialize() ==
            aggregate(shuffled, Method::vllfl).serialize());
}

TEST_CASE("aggregation rejects mismatched shapes") {
    PromptModel a, b;
    a.method = b.method = Method::fedcoop;
    a.static_prompts = Matrix(2, 4);
    b.static_prompts = Matrix(2, 5);
    std::vector<ClientUpdate> updates{{0, 0, a.serialize(), {}}, {1, 0, b.serialize(), {}}};
    REQUIRE_THROWS_AS(aggregate(updates, Method::fedcoop), protocol_error);
    REQUIRE_THROWS_AS(aggregate({}, Method::fedcoop), protocol_error);
}

TEST_CASE("zero local epochs echo the broadcast payload bitwise") {
    const auto world = generate_world(tiny_world_config(), RngStream(4, "world"));
    const auto tasks = make_tasks(world, 4, 1, 2, 10);
    const auto embeddings = encode_classnames(world.backbone, tasks[0].class_names);
    PromptModel model = init_model(Method::vllfl, 2, 32, 16, RngStream(5, "init"));
    const auto broadcast = model.serialize();
    FederationConfig cfg = tiny_fed(6, 1, 1);
    cfg.local_epochs = 0;
    AdamWState opt;
    const ClientUpdate u =
        client_local_train(broadcast, Method::vllfl, 0, 0, world, tasks[0], embeddings, opt, cfg);
    REQUIRE(u.payload == broadcast);
}

TEST_CASE("local training is deterministic") {
    const auto world = generate_world(tiny_world_config(), RngStream(7, "world"));
    const auto tasks = make_tasks(world, 8, 1, 2, 10);
    const auto embeddings = encode_classnames(world.backbone, tasks[0].class_names);
    PromptModel model = init_model(Method::vllfl, 2, 32, 16, RngStream(9, "init"));
    const auto broadcast = model.serialize();
    FederationConfig cfg = tiny_fed(10, 1, 1);
    AdamWState opt1, opt2;
    opt1.lr = opt2.lr = cfg.lr;
    const ClientUpdate a =
        client_local_train(broadcast, Method::vllfl, 0, 3, world, tasks[0], embeddings, opt1, cfg);
    const ClientUpdate b =
        client_local_train(broadcast, Method::vllfl, 0, 3, world, tasks[0], embeddings, opt2, cfg);
    REQUIRE(a.payload == b.payload);
}

TEST_CASE("one epoch of training does not increase the training loss") {
    double before_sum = 0.0, after_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto wc = tiny_world_config();
        const auto world = generate_world(wc, RngStream(seed, "world"));
        const auto tasks = make_tasks(world, seed + 50, 1, 2, 20);
        const auto embeddings = encode_classnames(world.backbone, tasks[0].class_names);
        PromptModel model = init_model(Method::vllfl, 4, 32, 32, RngStream(seed, "init"));

        std::vector<const Scene*> all;
        for (const auto& s : tasks[0].train) all.push_back(&s);
        const double before = train_batch(model, world, tasks[0], embeddings, all).loss.total;

        AdamWState opt;
        opt.lr = 0.002;
        opt.weight_decay = 1e-4;
        LocalTrainConfig ltc;
        ltc.epochs = 1;
        ltc.batch_size = 4;
        RngStream batching(seed, "batching", 0, 0);
        local_train(model, opt, world, tasks[0], embeddings, ltc, batching);
        const double after = train_batch(model, world, tasks[0], embeddings, all).loss.total;
        before_sum += before;
        after_sum += after;
    }
    REQUIRE(after_sum <= before_sum);
}

TEST_CASE("zero rounds return the initial parameters") {
    const auto world = generate_world(tiny_world_config(), RngStream(11, "world"));
    const auto tasks = make_tasks(world, 12, 2, 2, 10);
    PromptModel model = init_model(Method::vllfl, 2, 32, 8, RngStream(13, "init"));
    FederationConfig cfg = tiny_fed(14, 2, 0);
    const auto result = run_federation(model, world, tasks, cfg, NetworkModel{});
    REQUIRE(result.rounds.empty());
    REQUIRE(result.final_model.serialize() == model.serialize());
}

TEST_CASE("round records are complete and byte-exact") {
    const auto world = generate_world(tiny_world_config(), RngStream(15, "world"));
    const auto tasks = make_tasks(world, 16, 2, 2, 10);
    PromptModel model = init_model(Method::vllfl, 2, 32, 8, RngStream(17, "init"));
    FederationConfig cfg = tiny_fed(18, 2, 7);
    cfg.participation_rate = 0.5;
    const auto result = run_federation(model, world, tasks, cfg, NetworkModel{});
    REQUIRE(result.rounds.size() == 7);
    const std::size_t payload = model.serialize().size();
    for (std::size_t r = 0; r < 7; ++r) {
        const auto& rec = result.rounds[r];
        REQUIRE(rec.round == r);
        REQUIRE(rec.selected.size() == 1);
        REQUIRE(rec.bytes_up == rec.selected.size() * payload);
        REQUIRE(rec.bytes_down == rec.selected.size() * payload);
        REQUIRE(rec.client_losses.size() == rec.selected.size());
    }
}

TEST_CASE("single-client full-participation federation equals a centralized loop") {
    const auto world = generate_world(tiny_world_config(), RngStream(19, "world"));
    const auto tasks = make_tasks(world, 20, 1, 2, 10);
    const auto embeddings = encode_classnames(world.backbone, tasks[0].class_names);
    const PromptModel init = init_model(Method::vllfl, 2, 32, 16, RngStream(21, "init"));

    FederationConfig cfg = tiny_fed(22, 1, 50);
    cfg.local_epochs = 1;
    const auto fed = run_federation(init, world, tasks, cfg, NetworkModel{});

    // Centralized oracle: the same wire quantization points, the same
    // batching substream per round, one persistent optimizer.
    PromptModel central = init;
    AdamWState opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    LocalTrainConfig ltc;
    ltc.epochs = 1;
    ltc.batch_size = cfg.batch_size;
    for (std::size_t r = 0; r < 50; ++r) {
        PromptModel wire;
        wire.method = Method::vllfl;
        wire.deserialize_payload(central.serialize());
        RngStream batching(cfg.seeds.batching, "batching", 0, r);
        local_train(wire, opt, world, tasks[0], embeddings, ltc, batching);
        PromptModel back;
        back.method = Method::vllfl;
        back.deserialize_payload(wire.serialize());
        central = back;
    }
    REQUIRE(fed.final_model.serialize() == central.serialize());
}

TEST_CASE("overhead arithmetic reproduces the reference byte accounting") {
    NetworkModel net;  // 100 Mbps
    const auto rep = overhead_report(1000000, 172000000, 4, net);
    REQUIRE_THAT(rep.mb_prompt, Catch::Matchers::WithinAbs(3.81, 0.005));
    REQUIRE_THAT(rep.mb_full, Catch::Matchers::WithinAbs(656.0, 0.2));
    REQUIRE_THAT(rep.reduction_percent, Catch::Matchers::WithinAbs(99.3, 0.5));
    REQUIRE(rep.reduction_percent > 99.3);

    const auto yolo = overhead_report(1000000, 62000000, 4, net);
    REQUIRE_THAT(yolo.seconds_per_upload_full, Catch::Matchers::WithinAbs(19.84, 0.01));
    REQUIRE(yolo.seconds_per_upload_full >= 19.0);
    REQUIRE(yolo.seconds_per_upload_full <= 20.0);

    const auto equal = overhead_report(5000, 5000, 4, net);
    REQUIRE(equal.reduction_percent == 0.0);

    REQUIRE_THROWS_AS(overhead_report(0, 10, 4, net), domain_error);
}
