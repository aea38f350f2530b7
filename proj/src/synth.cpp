#include "atlas/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <thread>

#include "atlas/rng.hpp"

namespace atlas::synth {

void SceneConfig::validate() const {
    if (width <= 0 || height <= 0) throw std::runtime_error("scene: dimensions must be positive");
    if (stride <= 0 || width % stride != 0 || height % stride != 0) {
        throw std::runtime_error("scene: width and height must be divisible by the stride");
    }
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
        throw std::runtime_error("scene: drop_prob must be in [0, 1)");
    }
    if (!(lattice_spacing > 2.0 * jitter)) {
        throw std::runtime_error("scene: lattice_spacing must exceed 2 * jitter");
    }
    if (noise_level < 0.0 || noise_level > 1.0) {
        throw std::runtime_error("scene: noise_level must be in [0, 1]");
    }
    if (road_width < 1.0) throw std::runtime_error("scene: road_width must be >= 1");
}

namespace {

// pixel centers sit on integer coordinates 0 .. extent-1; keeping nodes in
// that closed range makes horizontal/vertical flips exact
double clamp_coord(double v, int extent) {
    return std::clamp(v, 0.0, static_cast<double>(extent - 1));
}

}  // namespace

RoadGraph generate_road_graph(const SceneConfig& config) {
    config.validate();
    Rng rng = Rng(config.seed).fork(1);

    RoadGraph g;
    g.width = config.width;
    g.height = config.height;

    // Lattice columns/rows at spacing/2 + i*spacing, jittered.
    std::vector<double> xs, ys;
    for (double x = config.lattice_spacing / 2.0; x < config.width; x += config.lattice_spacing)
        xs.push_back(x);
    for (double y = config.lattice_spacing / 2.0; y < config.height; y += config.lattice_spacing)
        ys.push_back(y);
    const int nx = static_cast<int>(xs.size());
    const int ny = static_cast<int>(ys.size());

    for (int iy = 0; iy < ny; iy++) {
        for (int ix = 0; ix < nx; ix++) {
            const double jx = rng.uniform(-config.jitter, config.jitter);
            const double jy = rng.uniform(-config.jitter, config.jitter);
            g.nodes.push_back({clamp_coord(xs[ix] + jx, config.width),
                               clamp_coord(ys[iy] + jy, config.height)});
        }
    }
    auto node_id = [nx](int ix, int iy) { return iy * nx + ix; };

    // 4-neighbor lattice edges, each dropped independently.
    std::vector<std::pair<int, int>> lattice;
    for (int iy = 0; iy < ny; iy++) {
        for (int ix = 0; ix < nx; ix++) {
            if (ix + 1 < nx) lattice.emplace_back(node_id(ix, iy), node_id(ix + 1, iy));
            if (iy + 1 < ny) lattice.emplace_back(node_id(ix, iy), node_id(ix, iy + 1));
        }
    }
    for (const auto& e : lattice) {
        if (!rng.bernoulli(config.drop_prob)) g.edges.push_back(e);
    }

    // Turn points: surviving edges are split at a perpendicularly shifted
    // midpoint with probability 1/2, producing degree-2 turns.
    if (config.curve_amplitude > 0.0) {
        std::vector<std::pair<int, int>> split_edges;
        for (const auto& [i, j] : g.edges) {
            if (!rng.bernoulli(0.5)) {
                split_edges.emplace_back(i, j);
                continue;
            }
            const Point a = g.nodes[i];
            const Point b = g.nodes[j];
            const double len = std::hypot(b.x - a.x, b.y - a.y);
            if (len <= 0.0) {
                split_edges.emplace_back(i, j);
                continue;
            }
            const double px = -(b.y - a.y) / len;
            const double py = (b.x - a.x) / len;
            // magnitude bounded away from zero: a near-zero shift would
            // leave an undetectable node on a straight road
            const double mag = rng.uniform(0.6 * config.curve_amplitude, config.curve_amplitude);
            const double shift = rng.bernoulli(0.5) ? mag : -mag;
            const int mid = static_cast<int>(g.nodes.size());
            g.nodes.push_back({clamp_coord((a.x + b.x) / 2.0 + shift * px, config.width),
                               clamp_coord((a.y + b.y) / 2.0 + shift * py, config.height)});
            split_edges.emplace_back(i, mid);
            split_edges.emplace_back(mid, j);
        }
        g.edges = std::move(split_edges);
    }

    // Drop isolated nodes and reindex.
    std::vector<int> deg = g.degrees();
    std::vector<int> remap(g.nodes.size(), -1);
    RoadGraph out;
    out.width = g.width;
    out.height = g.height;
    for (std::size_t i = 0; i < g.nodes.size(); i++) {
        if (deg[i] > 0) {
            remap[i] = static_cast<int>(out.nodes.size());
            out.nodes.push_back(g.nodes[i]);
        }
    }
    for (const auto& [i, j] : g.edges) {
        out.edges.emplace_back(std::min(remap[i], remap[j]), std::max(remap[i], remap[j]));
    }
    validate_graph(out);
    return out;
}

SceneImage render_scene(const RoadGraph& graph, const SceneConfig& config) {
    config.validate();
    for (std::size_t i = 0; i < graph.nodes.size(); i++) {
        const Point& p = graph.nodes[i];
        if (!(p.x >= 0 && p.x < config.width && p.y >= 0 && p.y < config.height)) {
            throw std::runtime_error("render_scene: node " + std::to_string(i) +
                                     " outside the canvas");
        }
    }
    Rng rng = Rng(config.seed).fork(2);
    const int W = config.width;
    const int H = config.height;
    SceneImage im = SceneImage::make(W, H, 3);

    // Dark value-noise background with a per-scene channel tint. Road
    // pixels must dominate the background luminance by a wide margin so
    // the anti-aliasing IoU contract holds.
    double tint[3];
    for (double& t : tint) t = rng.uniform(0.5, 1.0);
    const int cell = 16;
    const int gx = W / cell + 2;
    const int gy = H / cell + 2;
    std::vector<double> noise_grid(static_cast<std::size_t>(gx) * gy);
    for (double& v : noise_grid) v = rng.uniform();
    auto value_noise = [&](double x, double y) {
        const double fx = x / cell;
        const double fy = y / cell;
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const double tx = fx - x0;
        const double ty = fy - y0;
        const double v00 = noise_grid[static_cast<std::size_t>(y0) * gx + x0];
        const double v10 = noise_grid[static_cast<std::size_t>(y0) * gx + x0 + 1];
        const double v01 = noise_grid[static_cast<std::size_t>(y0 + 1) * gx + x0];
        const double v11 = noise_grid[static_cast<std::size_t>(y0 + 1) * gx + x0 + 1];
        return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
    };
    for (int c = 0; c < 3; c++) {
        for (int y = 0; y < H; y++) {
            for (int x = 0; x < W; x++) {
                im.at(c, y, x) = static_cast<float>((0.03 + 0.15 * value_noise(x, y)) * tint[c]);
            }
        }
    }

    // Anti-aliased white strokes: coverage ramps over 0.4 px centered just
    // outside distance road_width/2. Overlapping strokes keep max coverage.
    std::vector<float> alpha(im.plane_size(), 0.0f);
    const double r = config.road_width / 2.0;
    for (const auto& [i, j] : graph.edges) {
        const Point a = graph.nodes[i];
        const Point b = graph.nodes[j];
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r - 1)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r - 1)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r + 1)));
        for (int y = y0; y <= y1; y++) {
            for (int x = x0; x <= x1; x++) {
                const double d = point_segment_distance({double(x), double(y)}, a, b);
                const double cov = std::clamp((r + 0.2 - d) / 0.4, 0.0, 1.0);
                auto& px = alpha[static_cast<std::size_t>(y) * W + x];
                px = std::max(px, static_cast<float>(cov));
            }
        }
    }
    for (int c = 0; c < 3; c++) {
        for (std::size_t p = 0; p < im.plane_size(); p++) {
            const float bg = im.values[c * im.plane_size() + p];
            im.values[c * im.plane_size() + p] = bg + alpha[p] * (1.0f - bg);
        }
    }

    // Additive pixel noise, drawn in a fixed (c, y, x) order.
    if (config.noise_level > 0.0) {
        for (std::size_t i = 0; i < im.values.size(); i++) {
            const double n = config.noise_level * 0.5 * (rng.uniform() - 0.5);
            im.values[i] = static_cast<float>(std::clamp(im.values[i] + n, 0.0, 1.0));
        }
    }
    return im;
}

void make_dataset(const SceneConfig& config, int count, const std::string& out_dir, int jobs) {
    std::filesystem::create_directories(out_dir);
    auto write_scene = [&](int i) {
        SceneConfig c = config;
        c.seed = config.seed + static_cast<std::uint64_t>(i);
        const RoadGraph g = generate_road_graph(c);
        const SceneImage im = render_scene(g, c);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        const auto base = std::filesystem::path(out_dir) / name;
        write_atlg(im, base.string() + ".img");
        save_graph(g, base.string() + ".json");
    };
    if (jobs <= 1 || count <= 1) {
        for (int i = 0; i < count; i++) write_scene(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < std::min(jobs, count); w++) {
        workers.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                write_scene(i);
            }
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace atlas::synth
