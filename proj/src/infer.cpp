#include "atlas/infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "atlas/train.hpp"

namespace atlas::infer {

void InferConfig::validate() const {
    if (window <= 0 || window % 32 != 0) {
        throw std::runtime_error("infer: window must be a positive multiple of 32");
    }
    if (overlap_stride <= 0 || overlap_stride > window) {
        throw std::runtime_error("infer: overlap_stride must be in (0, window]");
    }
    if (j_thr < 0 || j_thr > 1 || edge_thr < 0 || edge_thr > 1) {
        throw std::runtime_error("infer: thresholds must be in [0, 1]");
    }
    if (merge_radius < 0) throw std::runtime_error("infer: merge_radius must be >= 0");
    if (jobs < 1) throw std::runtime_error("infer: jobs must be >= 1");
}

std::vector<DecodedPoint> decode_points(const std::vector<double>& junction,
                                        const std::vector<double>& offsets, int grid_w,
                                        int grid_h, double j_thr, int image_w, int image_h) {
    if (junction.size() != static_cast<std::size_t>(grid_w) * grid_h ||
        offsets.size() != junction.size() * 2) {
        throw std::runtime_error("decode_points: grid size mismatch");
    }
    std::vector<DecodedPoint> out;
    for (int cy = 0; cy < grid_h; cy++) {
        for (int cx = 0; cx < grid_w; cx++) {
            const int c = cy * grid_w + cx;
            if (!(junction[c] > j_thr)) continue;  // strict comparison
            DecodedPoint d;
            d.cell = c;
            d.p.x = (offsets[2 * c] + cx + 0.5) / grid_w * image_w;
            d.p.y = (offsets[2 * c + 1] + cy + 0.5) / grid_h * image_h;
            out.push_back(d);
        }
    }
    return out;
}

ScoredTile predict_tile_scored(const SceneImage& tile, model::ModelParams& params,
                               const InferConfig& cfg) {
    if (tile.width != cfg.window || tile.height != cfg.window) {
        throw std::runtime_error("predict_tile: tile dims must equal the window");
    }
    nn::Tensor img = model::image_to_tensor(tile);
    model::ForwardOut fwd = model::model_forward(img, params, cfg.j_thr, nn::BnMode::eval);
    ScoredTile out;
    out.nodes = fwd.batch.coords;
    out.pairs = fwd.scores.pairs;
    if (fwd.scores.size() > 0) {
        out.probs.assign(fwd.scores.probs.data(), fwd.scores.probs.data() + fwd.scores.size());
    }
    return out;
}

namespace {

RoadGraph graph_from_scored(const ScoredTile& t, double edge_thr, int width, int height) {
    RoadGraph g;
    g.width = width;
    g.height = height;
    g.nodes = t.nodes;
    for (std::size_t e = 0; e < t.pairs.size(); e++) {
        if (t.probs[e] > edge_thr) g.edges.push_back(t.pairs[e]);
    }
    return g;
}

}  // namespace

RoadGraph predict_tile(const SceneImage& tile, model::ModelParams& params,
                       const InferConfig& cfg) {
    cfg.validate();
    const ScoredTile scored = predict_tile_scored(tile, params, cfg);
    return graph_from_scored(scored, cfg.edge_thr, tile.width, tile.height);
}

std::vector<std::pair<int, int>> tile_origins(int image_w, int image_h, int window,
                                              int overlap_stride) {
    auto axis = [&](int extent) {
        std::vector<int> xs;
        for (int o = 0;; o += overlap_stride) {
            if (o + window >= extent) {
                xs.push_back(extent - window);  // clamp the last tile flush
                break;
            }
            xs.push_back(o);
        }
        return xs;
    };
    std::vector<std::pair<int, int>> origins;
    for (int oy : axis(image_h)) {
        for (int ox : axis(image_w)) origins.emplace_back(ox, oy);
    }
    return origins;
}

/// Pre-threshold accumulation across tiles: global nodes, scored pairs with
/// max-combined probabilities after node merging.
struct Accumulated {
    std::vector<Point> nodes;
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> probs;
    int width = 0, height = 0;
};

namespace {

Accumulated accumulate_tiles(const SceneImage& image, model::ModelParams& params,
                             const InferConfig& cfg) {
    cfg.validate();
    if (image.width < cfg.window || image.height < cfg.window) {
        throw std::runtime_error("sliding_window: image smaller than the window");
    }
    const auto origins = tile_origins(image.width, image.height, cfg.window, cfg.overlap_stride);
    std::vector<ScoredTile> tiles(origins.size());

    auto run_tile = [&](std::size_t t) {
        const auto [ox, oy] = origins[t];
        SceneImage tile = SceneImage::make(cfg.window, cfg.window, image.channels);
        for (int c = 0; c < image.channels; c++) {
            for (int y = 0; y < cfg.window; y++) {
                for (int x = 0; x < cfg.window; x++) {
                    tile.at(c, y, x) = image.at(c, y + oy, x + ox);
                }
            }
        }
        tiles[t] = predict_tile_scored(tile, params, cfg);
    };
    if (cfg.jobs <= 1 || origins.size() <= 1) {
        for (std::size_t t = 0; t < origins.size(); t++) run_tile(t);
    } else {
        // Tiles land in indexed slots; the serial merge below keeps the
        // output independent of the thread count.
        std::vector<std::thread> workers;
        std::size_t next = 0;
        std::mutex mu;
        const int nw = std::min<int>(cfg.jobs, static_cast<int>(origins.size()));
        for (int w = 0; w < nw; w++) {
            workers.emplace_back([&]() {
                for (;;) {
                    std::size_t t;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= origins.size()) return;
                        t = next++;
                    }
                    run_tile(t);
                }
            });
        }
        for (auto& w : workers) w.join();
    }

    // Serial row-major accumulation.
    Accumulated acc;
    acc.width = image.width;
    acc.height = image.height;
    std::vector<double> flat_probs;
    std::vector<std::pair<int, int>> flat_pairs;
    for (std::size_t t = 0; t < origins.size(); t++) {
        const auto [ox, oy] = origins[t];
        const int base = static_cast<int>(acc.nodes.size());
        for (const Point& p : tiles[t].nodes) {
            acc.nodes.push_back({p.x + ox, p.y + oy});
        }
        for (std::size_t e = 0; e < tiles[t].pairs.size(); e++) {
            flat_pairs.emplace_back(tiles[t].pairs[e].first + base,
                                    tiles[t].pairs[e].second + base);
            flat_probs.push_back(tiles[t].probs[e]);
        }
    }

    // Merge nodes, then re-point the scored pairs onto the merged ids and
    // keep the max probability per unordered pair.
    RoadGraph merged_nodes;
    merged_nodes.nodes = acc.nodes;
    merged_nodes.width = acc.width;
    merged_nodes.height = acc.height;
    std::vector<int> assign;
    const RoadGraph merged = merge_nearby_nodes(merged_nodes, cfg.merge_radius, &assign);

    acc.pairs.clear();
    acc.probs.clear();
    std::map<std::pair<int, int>, double> best_prob;
    for (std::size_t e = 0; e < flat_pairs.size(); e++) {
        int a = assign[flat_pairs[e].first];
        int b = assign[flat_pairs[e].second];
        if (a == b) continue;  // endpoints collapsed together
        if (a > b) std::swap(a, b);
        auto [it, inserted] = best_prob.try_emplace(std::make_pair(a, b), flat_probs[e]);
        if (!inserted) it->second = std::max(it->second, flat_probs[e]);
    }
    for (const auto& [pair, prob] : best_prob) {
        acc.pairs.push_back(pair);
        acc.probs.push_back(prob);
    }
    acc.nodes = merged.nodes;
    return acc;
}

RoadGraph graph_from_accumulated(const Accumulated& acc, double edge_thr) {
    RoadGraph g;
    g.width = acc.width;
    g.height = acc.height;
    g.nodes = acc.nodes;
    for (std::size_t e = 0; e < acc.pairs.size(); e++) {
        if (acc.probs[e] > edge_thr) g.edges.push_back(acc.pairs[e]);
    }
    return g;
}

}  // namespace

RoadGraph sliding_window_infer(const SceneImage& image, model::ModelParams& params,
                               const InferConfig& cfg) {
    const Accumulated acc = accumulate_tiles(image, params, cfg);
    RoadGraph g = graph_from_accumulated(acc, cfg.edge_thr);
    validate_graph(g);
    return g;
}

std::vector<SweepRow> threshold_sweep(const std::string& dataset_dir,
                                      model::ModelParams& params,
                                      const std::vector<double>& thresholds,
                                      const InferConfig& cfg,
                                      const metrics::MetricConfig& mcfg) {
    for (double t : thresholds) {
        if (t < 0 || t > 1) throw std::runtime_error("sweep: thresholds must be in [0, 1]");
    }
    std::vector<train::Scene> scenes = train::load_scenes(dataset_dir);
    if (scenes.empty()) throw std::runtime_error("sweep: no scenes in " + dataset_dir);

    // detections and edge scores once per scene; the per-threshold loop
    // below only re-cuts the cached pre-threshold accumulation
    std::vector<Accumulated> cached;
    for (const auto& scene : scenes) {
        cached.push_back(accumulate_tiles(scene.image, params, cfg));
    }

    std::vector<SweepRow> rows;
    for (double thr : thresholds) {
        SweepRow row;
        row.threshold = thr;
        std::vector<std::pair<RoadGraph, RoadGraph>> pairs;
        std::vector<std::string> names;
        for (std::size_t s = 0; s < scenes.size(); s++) {
            RoadGraph pred = graph_from_accumulated(cached[s], thr);
            row.nodes += static_cast<double>(pred.nodes.size()) / scenes.size();
            row.edges += static_cast<double>(pred.edges.size()) / scenes.size();
            pairs.emplace_back(std::move(pred), scenes[s].graph);
            names.push_back(scenes[s].name);
        }
        const metrics::EvalReport rep = metrics::evaluate_pairs(pairs, names, mcfg);
        row.p_f1 = rep.macro.p_f1;
        row.j_f1 = rep.macro.j_f1;
        row.apls = rep.macro.apls;
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open sweep file: " + path);
    std::fprintf(f, "threshold,p_f1,j_f1,apls,nodes,edges\n");
    for (const auto& r : rows) {
        std::fprintf(f, "%.3f,%.6f,%.6f,%.6f,%.2f,%.2f\n", r.threshold, r.p_f1, r.j_f1, r.apls,
                     r.nodes, r.edges);
    }
    std::fclose(f);
}

}  // namespace atlas::infer
