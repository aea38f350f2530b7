#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "atlas/graph.hpp"
#include "atlas/synth.hpp"
#include "doctest.h"

using namespace atlas;
using synth::SceneConfig;

namespace {

SceneConfig base_config() {
    SceneConfig c;
    c.width = 256;
    c.height = 256;
    c.lattice_spacing = 64;
    c.jitter = 0;
    c.drop_prob = 0;
    c.curve_amplitude = 0;
    c.noise_level = 0;
    c.seed = 5;
    return c;
}

double luminance(const SceneImage& im, int y, int x) {
    double s = 0;
    for (int c = 0; c < im.channels; c++) s += im.at(c, y, x);
    return s / im.channels;
}

}  // namespace

TEST_CASE("regular 4x4 lattice has 24 edges") {
    const RoadGraph g = synth::generate_road_graph(base_config());
    CHECK(g.nodes.size() == 16);
    CHECK(g.edges.size() == 24);  // 2 * 4 * 3
    // all nodes on the undisturbed lattice
    for (const auto& p : g.nodes) {
        CHECK(std::fmod(p.x - 32.0, 64.0) == doctest::Approx(0.0));
        CHECK(std::fmod(p.y - 32.0, 64.0) == doctest::Approx(0.0));
    }
}

TEST_CASE("drop_prob near 1 leaves an empty graph") {
    SceneConfig c = base_config();
    c.drop_prob = 1.0 - 1e-12;
    const RoadGraph g = synth::generate_road_graph(c);
    CHECK(g.nodes.empty());
    CHECK(g.edges.empty());
}

TEST_CASE("same seed gives identical graphs") {
    SceneConfig c = base_config();
    c.jitter = 8;
    c.drop_prob = 0.3;
    c.curve_amplitude = 8;
    const RoadGraph a = synth::generate_road_graph(c);
    const RoadGraph b = synth::generate_road_graph(c);
    CHECK(a == b);
}

TEST_CASE("generated graphs satisfy the graph invariants and stay in canvas") {
    SceneConfig c = base_config();
    c.jitter = 10;
    c.drop_prob = 0.35;
    c.curve_amplitude = 10;
    for (std::uint64_t seed = 0; seed < 20; seed++) {
        c.seed = seed;
        const RoadGraph g = synth::generate_road_graph(c);
        CHECK_NOTHROW(validate_graph(g));
        // no isolated nodes after cleanup
        for (int d : g.degrees()) CHECK(d > 0);
    }
}

TEST_CASE("turn insertion produces degree-2 nodes") {
    SceneConfig c = base_config();
    c.curve_amplitude = 8;
    const RoadGraph g = synth::generate_road_graph(c);
    CHECK(g.nodes.size() > 16);  // midpoints were added
    int turns = 0;
    for (int d : g.degrees()) {
        if (d == 2) turns++;
    }
    CHECK(turns > 0);
}

TEST_CASE("config invariants are enforced") {
    SceneConfig c = base_config();
    c.drop_prob = 1.0;
    CHECK_THROWS_AS(synth::generate_road_graph(c), std::runtime_error);
    c = base_config();
    c.jitter = 40;  // spacing 64 <= 2 * 40
    CHECK_THROWS_AS(synth::generate_road_graph(c), std::runtime_error);
    c = base_config();
    c.width = 250;  // not divisible by 32
    CHECK_THROWS_AS(synth::generate_road_graph(c), std::runtime_error);
}

TEST_CASE("empty graph renders the pure background") {
    SceneConfig c = base_config();
    const SceneImage im = synth::render_scene(RoadGraph{}, c);
    CHECK(im.width == 256);
    CHECK(im.channels == 3);
    for (float v : im.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 0.2f);  // background stays dark
    }
}

TEST_CASE("same seed renders bit-identical images") {
    SceneConfig c = base_config();
    c.noise_level = 0.3;
    c.jitter = 8;
    const RoadGraph g = synth::generate_road_graph(c);
    const SceneImage a = synth::render_scene(g, c);
    const SceneImage b = synth::render_scene(g, c);
    CHECK(a.values == b.values);
}

TEST_CASE("road centerlines outshine the background over 100 seeds") {
    // statistical contract at noise_level <= 0.3
    SceneConfig c = base_config();
    c.noise_level = 0.3;
    int wins = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 100; seed++) {
        c.seed = seed;
        const RoadGraph g = synth::generate_road_graph(c);
        if (g.edges.empty()) continue;
        const SceneImage im = synth::render_scene(g, c);
        // a point on the first edge's centerline vs the far corner
        const Point a = g.nodes[g.edges[0].first];
        const Point b = g.nodes[g.edges[0].second];
        const int mx = static_cast<int>((a.x + b.x) / 2);
        const int my = static_cast<int>((a.y + b.y) / 2);
        const RasterMask mask = rasterize(g, c.width, c.height, c.road_width + 8);
        int fx = -1, fy = -1;
        for (int y = 0; y < c.height && fx < 0; y++) {
            for (int x = 0; x < c.width && fx < 0; x++) {
                if (!mask.at(x, y)) {
                    fx = x;
                    fy = y;
                }
            }
        }
        if (fx < 0) continue;
        total++;
        if (luminance(im, my, mx) >= luminance(im, fy, fx)) wins++;
    }
    CHECK(total > 90);
    CHECK(wins == total);
}

TEST_CASE("thresholded luminance difference recovers the rasterized mask") {
    // anti-aliasing contract: >= 95% IoU at noise 0
    SceneConfig c = base_config();
    c.jitter = 8;
    c.drop_prob = 0.2;
    c.curve_amplitude = 8;
    c.noise_level = 0;
    for (std::uint64_t seed = 1; seed <= 5; seed++) {
        c.seed = seed;
        const RoadGraph g = synth::generate_road_graph(c);
        const SceneImage with_roads = synth::render_scene(g, c);
        const SceneImage background = synth::render_scene(RoadGraph{}, c);
        const RasterMask mask = rasterize(g, c.width, c.height, c.road_width);
        std::size_t inter = 0, uni = 0;
        for (int y = 0; y < c.height; y++) {
            for (int x = 0; x < c.width; x++) {
                const bool lit =
                    luminance(with_roads, y, x) - luminance(background, y, x) > 0.5;
                const bool m = mask.at(x, y) != 0;
                inter += lit && m;
                uni += lit || m;
            }
        }
        REQUIRE(uni > 0);
        CHECK(static_cast<double>(inter) / uni >= 0.95);
    }
}

TEST_CASE("make_dataset writes the naming contract") {
    const auto dir = std::filesystem::temp_directory_path() / "atlas_ds_test";
    std::filesystem::remove_all(dir);

    SceneConfig c = base_config();
    synth::make_dataset(c, 0, dir.string());
    CHECK(std::filesystem::is_empty(dir));

    synth::make_dataset(c, 2, dir.string());
    CHECK(std::filesystem::exists(dir / "scene_0000.img"));
    CHECK(std::filesystem::exists(dir / "scene_0000.json"));
    CHECK(std::filesystem::exists(dir / "scene_0001.img"));
    CHECK(std::filesystem::exists(dir / "scene_0001.json"));

    // rerun: bit-identical files
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const std::string img0 = slurp(dir / "scene_0000.img");
    const std::string g0 = slurp(dir / "scene_0000.json");
    synth::make_dataset(c, 2, dir.string());
    CHECK(slurp(dir / "scene_0000.img") == img0);
    CHECK(slurp(dir / "scene_0000.json") == g0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ATLG image round trip") {
    SceneImage im = SceneImage::make(5, 3, 2);
    for (std::size_t i = 0; i < im.values.size(); i++) im.values[i] = 0.01f * i;
    const auto path = (std::filesystem::temp_directory_path() / "t.img").string();
    write_atlg(im, path);
    const SceneImage back = read_atlg(path);
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.channels == 2);
    CHECK(back.values == im.values);
}
