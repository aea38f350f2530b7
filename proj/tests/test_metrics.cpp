#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "atlas/metrics.hpp"
#include "atlas/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace atlas;
using namespace atlas::metrics;

namespace {

RoadGraph chain(std::initializer_list<Point> pts) {
    RoadGraph g;
    for (const auto& p : pts) g.nodes.push_back(p);
    for (std::size_t i = 0; i + 1 < g.nodes.size(); i++) {
        g.edges.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
    }
    return g;
}

}  // namespace

TEST_CASE("pixel f1: identical graphs score 1") {
    Rng rng(1);
    const RoadGraph g = oracle::random_graph(rng, 15, 5, 128, 128);
    const PRF r = pixel_f1(g, g, 128, 128, 3, 4);
    CHECK(r.f1 == doctest::Approx(1.0));
}

TEST_CASE("pixel f1: empty prediction scores 0 against a nonempty truth") {
    Rng rng(2);
    const RoadGraph g = oracle::random_graph(rng, 10, 3, 128, 128);
    CHECK(pixel_f1(RoadGraph{}, g, 128, 128, 3, 4).f1 == 0.0);
}

TEST_CASE("pixel f1: parallel lines inside vs outside the buffer") {
    // horizontal lines; offset <= buffer matches, offset = buffer + 1 does not
    const double buffer = 4;
    const RoadGraph gt = chain({{10, 60}, {110, 60}});
    const RoadGraph close_pred = chain({{10, 64}, {110, 64}});
    const RoadGraph far_pred = chain({{10, 65}, {110, 65}});
    CHECK(pixel_f1(close_pred, gt, 128, 128, 1, buffer).f1 == doctest::Approx(1.0));
    CHECK(pixel_f1(far_pred, gt, 128, 128, 1, buffer).f1 == 0.0);
}

TEST_CASE("junction f1: identical graphs score 1") {
    Rng rng(3);
    const RoadGraph g = oracle::random_graph(rng, 12, 4, 128, 128);
    const PRF r = junction_f1(g, g, 8);
    CHECK(r.f1 == doctest::Approx(1.0));
}

TEST_CASE("junction f1: a missing incident edge breaks the degree match") {
    // cross intersection: center has degree 4
    RoadGraph gt;
    gt.nodes = {{50, 50}, {20, 50}, {80, 50}, {50, 20}, {50, 80}};
    gt.edges = {{0, 1}, {0, 2}, {0, 3}, {0, 4}};
    RoadGraph pred = gt;
    pred.edges.pop_back();  // center now degree 3, node 4 isolated (degree 0)
    const PRF r = junction_f1(pred, gt, 8);
    // center matches positionally but the degree differs: counted FP + FN
    CHECK(r.f1 < 1.0);
    // identical pred is still perfect
    CHECK(junction_f1(gt, gt, 8).f1 == doctest::Approx(1.0));
}

TEST_CASE("junction f1: one-to-one matching limits double use") {
    // two GT junctions within radius of one predicted junction
    RoadGraph gt;
    gt.nodes = {{50, 50}, {54, 50}, {20, 50}, {80, 50}, {54, 20}};
    gt.edges = {{0, 2}, {1, 3}, {1, 4}};  // degrees: 1, 2, ... node 0 deg 1, node 1 deg 2
    RoadGraph pred;
    pred.nodes = {{52, 50}, {20, 50}};
    pred.edges = {{0, 1}};
    const PRF r = junction_f1(pred, gt, 8);
    // pred junction 0 (degree 1) can match at most one GT junction
    CHECK(r.precision <= 1.0);
    CHECK(r.recall < 1.0);
}

TEST_CASE("apls: identical graphs score 1, empty proposal scores 0") {
    Rng rng(4);
    const RoadGraph g = oracle::random_graph(rng, 8, 3, 200, 200);
    CHECK(apls(g, g, 8) == doctest::Approx(1.0));
    CHECK(apls(RoadGraph{}, g, 8) == 0.0);
    CHECK(apls(g, RoadGraph{}, 8) == 0.0);
}

TEST_CASE("apls: hand-traced partial chain scores 2/3") {
    const RoadGraph gt = chain({{0, 0}, {100, 0}, {200, 0}});
    const RoadGraph pred = chain({{0, 0}, {100, 0}});
    CHECK(apls(pred, gt, 10) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("apls is symmetric in its arguments") {
    Rng rng(5);
    for (int rep = 0; rep < 10; rep++) {
        const RoadGraph a = oracle::random_graph(rng, 6, 2, 100, 100);
        const RoadGraph b = oracle::random_graph(rng, 7, 3, 100, 100);
        CHECK(apls(a, b, 10) == doctest::Approx(apls(b, a, 10)).epsilon(1e-12));
    }
}

TEST_CASE("apls matches the brute-force oracle on small graphs") {
    Rng rng(6);
    for (int rep = 0; rep < 40; rep++) {
        const int na = rng.uniform_int(1, 5);
        const int nb = rng.uniform_int(1, 5);
        const RoadGraph a = oracle::random_graph(rng, na, rng.uniform_int(0, 2), 64, 64);
        const RoadGraph b = oracle::random_graph(rng, nb, rng.uniform_int(0, 2), 64, 64);
        const double snap = rng.uniform(2.0, 20.0);
        CHECK(apls(a, b, snap) == doctest::Approx(oracle::brute_apls(a, b, snap)).epsilon(1e-12));
    }
}

TEST_CASE("complexity score reproduces the published table rows") {
    CHECK(complexity_from_counts(21615, 46.93) == doctest::Approx(461).epsilon(1.01 / 461));
    CHECK(complexity_from_counts(18034, 21.27) == doctest::Approx(848).epsilon(1.01 / 848));
    CHECK(complexity_from_counts(25306, 45.09) == doctest::Approx(561).epsilon(1.01 / 561));
    CHECK(complexity_from_counts(90662, 64.59) == doctest::Approx(1404).epsilon(1.01 / 1404));
    CHECK(std::isinf(complexity_from_counts(100, 0.0)));

    RoadGraph g;
    g.nodes = {{0, 0}, {1, 1}, {2, 2}};
    g.edges = {{0, 1}, {1, 2}};
    CHECK(complexity_score(g, 10.0) == doctest::Approx(1.0));  // 5 / 10 rounded
}

TEST_CASE("metrics are reindexing invariant") {
    Rng rng(7);
    const RoadGraph g = oracle::random_graph(rng, 10, 4, 96, 96);
    RoadGraph p;
    p.width = g.width;
    p.height = g.height;
    std::vector<int> perm(g.nodes.size());
    for (std::size_t i = 0; i < perm.size(); i++) perm[i] = static_cast<int>(i);
    for (int i = static_cast<int>(perm.size()) - 1; i > 0; i--) {
        std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    }
    p.nodes.resize(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); i++) p.nodes[perm[i]] = g.nodes[i];
    for (const auto& [i, j] : g.edges) p.edges.emplace_back(perm[i], perm[j]);

    CHECK(pixel_f1(p, g, 96, 96, 3, 4).f1 == doctest::Approx(1.0));
    CHECK(junction_f1(p, g, 8).f1 == doctest::Approx(1.0));
    CHECK(apls(p, g, 8) == doctest::Approx(1.0));
}

TEST_CASE("metric identities over random graphs, and zeros against empty") {
    Rng rng(8);
    for (int rep = 0; rep < 25; rep++) {
        const RoadGraph g = oracle::random_graph(rng, rng.uniform_int(4, 20),
                                                 rng.uniform_int(0, 5), 128, 128);
        CHECK(pixel_f1(g, g, 128, 128, 3, 4).f1 == doctest::Approx(1.0));
        CHECK(junction_f1(g, g, 8).f1 == doctest::Approx(1.0));
        CHECK(apls(g, g, 8) == doctest::Approx(1.0));
        CHECK(pixel_f1(RoadGraph{}, g, 128, 128, 3, 4).f1 == 0.0);
        CHECK(junction_f1(RoadGraph{}, g, 8).f1 == 0.0);
        CHECK(apls(RoadGraph{}, g, 8) == 0.0);
    }
}

TEST_CASE("evaluate: identical directories give a MACRO row of ones") {
    const auto pred = std::filesystem::temp_directory_path() / "atlas_eval_p";
    const auto gt = std::filesystem::temp_directory_path() / "atlas_eval_g";
    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
    std::filesystem::create_directories(pred);
    std::filesystem::create_directories(gt);

    Rng rng(9);
    for (int i = 0; i < 3; i++) {
        const RoadGraph g = oracle::random_graph(rng, 12, 4, 128, 128);
        const std::string name = "scene_000" + std::to_string(i) + ".json";
        save_graph(g, (pred / name).string());
        save_graph(g, (gt / name).string());
    }
    MetricConfig cfg;
    const EvalReport rep = evaluate(pred.string(), gt.string(), cfg);
    REQUIRE(rep.scenes.size() == 3);
    CHECK(rep.macro.p_f1 == doctest::Approx(1.0));
    CHECK(rep.macro.j_f1 == doctest::Approx(1.0));
    CHECK(rep.macro.apls == doctest::Approx(1.0));

    const std::string csv = (pred / "report.csv").string();
    write_report_csv(rep, csv);
    CHECK(std::filesystem::exists(csv));

    // single-scene macro equals the scene
    std::filesystem::remove(pred / "scene_0001.json");
    std::filesystem::remove(pred / "scene_0002.json");
    std::filesystem::remove(gt / "scene_0001.json");
    std::filesystem::remove(gt / "scene_0002.json");
    const EvalReport one = evaluate(pred.string(), gt.string(), cfg);
    CHECK(one.macro.apls == doctest::Approx(one.scenes[0].apls));

    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
}

TEST_CASE("evaluate: a missing counterpart is an error") {
    const auto pred = std::filesystem::temp_directory_path() / "atlas_eval_mp";
    const auto gt = std::filesystem::temp_directory_path() / "atlas_eval_mg";
    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
    std::filesystem::create_directories(pred);
    std::filesystem::create_directories(gt);
    Rng rng(10);
    const RoadGraph g = oracle::random_graph(rng, 5, 2, 64, 64);
    save_graph(g, (gt / "scene_0000.json").string());
    CHECK_THROWS_WITH_AS(evaluate(pred.string(), gt.string(), MetricConfig{}),
                         doctest::Contains("missing"), std::runtime_error);
    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
}

TEST_CASE("macro average over mixed scenes is the arithmetic mean") {
    Rng rng(11);
    const RoadGraph g = oracle::random_graph(rng, 10, 3, 128, 128);
    std::vector<std::pair<RoadGraph, RoadGraph>> pairs;
    pairs.emplace_back(g, g);                  // apls 1
    pairs.emplace_back(RoadGraph{}, g);        // apls 0
    pairs.back().first.width = 128;
    pairs.back().first.height = 128;
    const EvalReport rep = evaluate_pairs(pairs, {"a", "b"}, MetricConfig{});
    CHECK(rep.macro.apls == doctest::Approx(0.5));
}
