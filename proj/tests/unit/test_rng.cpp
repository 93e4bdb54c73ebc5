#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vllfl/rng.hpp"

using namespace vllfl;

TEST_CASE("identical stream identity gives identical draws") {
    RngStream a(42, "init");
    RngStream b(42, "init");
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    RngStream c(42, "scenes", 3, 7);
    RngStream d(42, "scenes", 3, 7);
    for (int i = 0; i < 100; ++i) REQUIRE(c.next_normal() == d.next_normal());
}

TEST_CASE("different names or substreams decorrelate") {
    RngStream a(42, "init");
    RngStream b(42, "selection");
    RngStream c(42, "init", 1);
    REQUIRE(a.next_u64() != b.next_u64());
    RngStream a2(42, "init");
    REQUIRE(a2.next_u64() != c.next_u64());
}

TEST_CASE("uniform draws live in [0, 1)") {
    RngStream stream(7, "world");
    for (int i = 0; i < 10000; ++i) {
        const double u = stream.next_uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("next_index respects the bound and hits all values") {
    RngStream stream(7, "selection");
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) {
        const auto v = stream.next_index(5);
        REQUIRE(v < 5);
        hits[v] += 1;
    }
    for (int h : hits) REQUIRE(h > 800);
}

TEST_CASE("normal draws have roughly standard moments") {
    RngStream stream(11, "world");
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = stream.next_normal();
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 0.01));
    REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 0.02));
}

// Frozen outputs: any change here means every seeded experiment in the
// project changes too, which breaks stored-run reproducibility.
TEST_CASE("golden draw sequence is stable") {
    RngStream stream(1, "init");
    REQUIRE(stream.next_u64() == 0x8ec4025c29b9e1e1ULL);
    RngStream u(2026, "world");
    REQUIRE_THAT(u.next_uniform(), Catch::Matchers::WithinAbs(0.24603433921751616, 1e-16));
}
