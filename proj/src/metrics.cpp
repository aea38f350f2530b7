#include "atlas/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>
#include <thread>

namespace atlas::metrics {

namespace {

double safe_f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// fraction of src pixels with a dst pixel within `buffer` (Euclidean)
double buffered_fraction(const RasterMask& src, const RasterMask& dst, double buffer) {
    std::size_t total = src.count();
    if (total == 0) return 0.0;
    // dilate dst by a disk of radius buffer, then count hits
    const int rad = static_cast<int>(std::floor(buffer));
    std::vector<std::pair<int, int>> disk;
    for (int dy = -rad; dy <= rad; dy++) {
        for (int dx = -rad; dx <= rad; dx++) {
            if (dx * dx + dy * dy <= buffer * buffer) disk.emplace_back(dx, dy);
        }
    }
    std::vector<std::uint8_t> dilated(dst.values.size(), 0);
    for (int y = 0; y < dst.height; y++) {
        for (int x = 0; x < dst.width; x++) {
            if (!dst.at(x, y)) continue;
            for (const auto& [dx, dy] : disk) {
                const int nx = x + dx, ny = y + dy;
                if (nx >= 0 && nx < dst.width && ny >= 0 && ny < dst.height) {
                    dilated[static_cast<std::size_t>(ny) * dst.width + nx] = 1;
                }
            }
        }
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < src.values.size(); i++) {
        if (src.values[i] && dilated[i]) hit++;
    }
    return static_cast<double>(hit) / total;
}

}  // namespace

PRF pixel_f1(const RoadGraph& pred, const RoadGraph& gt, int width, int height,
             double line_width, double buffer) {
    const RasterMask mp = rasterize(pred, width, height, line_width);
    const RasterMask mg = rasterize(gt, width, height, line_width);
    PRF out;
    const std::size_t np = mp.count(), ng = mg.count();
    if (np == 0 && ng == 0) {
        out.precision = out.recall = out.f1 = 1.0;
        return out;
    }
    out.precision = np == 0 ? 0.0 : buffered_fraction(mp, mg, buffer);
    out.recall = ng == 0 ? 0.0 : buffered_fraction(mg, mp, buffer);
    out.f1 = safe_f1(out.precision, out.recall);
    return out;
}

PRF junction_f1(const RoadGraph& pred, const RoadGraph& gt, double match_radius) {
    auto junctions = [](const RoadGraph& g) {
        std::vector<int> out;
        const auto deg = g.degrees();
        for (std::size_t i = 0; i < g.nodes.size(); i++) {
            if (deg[i] != 2) out.push_back(static_cast<int>(i));
        }
        return out;
    };
    const std::vector<int> jp = junctions(pred);
    const std::vector<int> jg = junctions(gt);
    PRF out;
    if (jp.empty() && jg.empty()) {
        out.precision = out.recall = out.f1 = 1.0;
        return out;
    }
    if (jp.empty() || jg.empty()) return out;  // all zeros

    const auto deg_p = pred.degrees();
    const auto deg_g = gt.degrees();
    struct Cand {
        double dist;
        int pi, gi;
        bool operator<(const Cand& o) const {
            if (dist != o.dist) return dist < o.dist;
            if (pi != o.pi) return pi < o.pi;
            return gi < o.gi;
        }
    };
    std::vector<Cand> cands;
    for (std::size_t a = 0; a < jp.size(); a++) {
        for (std::size_t b = 0; b < jg.size(); b++) {
            const Point& p = pred.nodes[jp[a]];
            const Point& q = gt.nodes[jg[b]];
            const double d = std::hypot(p.x - q.x, p.y - q.y);
            if (d <= match_radius) cands.push_back({d, static_cast<int>(a), static_cast<int>(b)});
        }
    }
    std::sort(cands.begin(), cands.end());
    std::vector<bool> used_p(jp.size(), false), used_g(jg.size(), false);
    int tp = 0;
    for (const auto& c : cands) {
        if (used_p[c.pi] || used_g[c.gi]) continue;
        used_p[c.pi] = used_g[c.gi] = true;
        if (deg_p[jp[c.pi]] == deg_g[jg[c.gi]]) tp++;  // degree mismatch: FP + FN
    }
    out.precision = static_cast<double>(tp) / jp.size();
    out.recall = static_cast<double>(tp) / jg.size();
    out.f1 = safe_f1(out.precision, out.recall);
    return out;
}

namespace {

// weighted adjacency with support for inserting snapped points on edges
struct PathGraph {
    std::vector<Point> pts;
    std::vector<std::vector<std::pair<int, double>>> adj;  // (node, length)

    explicit PathGraph(const RoadGraph& g) : pts(g.nodes), adj(g.nodes.size()) {
        for (const auto& [i, j] : g.edges) {
            const double len = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
            adj[i].emplace_back(j, len);
            adj[j].emplace_back(i, len);
        }
    }

    int add_point(const Point& p) {
        pts.push_back(p);
        adj.emplace_back();
        return static_cast<int>(pts.size()) - 1;
    }

    void link(int a, int b) {
        const double len = std::hypot(pts[a].x - pts[b].x, pts[a].y - pts[b].y);
        adj[a].emplace_back(b, len);
        adj[b].emplace_back(a, len);
    }

    std::vector<double> dijkstra(int src) const {
        std::vector<double> dist(pts.size(), std::numeric_limits<double>::infinity());
        std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>,
                            std::greater<>>
            pq;
        dist[src] = 0;
        pq.push({0.0, src});
        while (!pq.empty()) {
            const auto [d, u] = pq.top();
            pq.pop();
            if (d > dist[u]) continue;
            for (const auto& [v, w] : adj[u]) {
                if (d + w < dist[v]) {
                    dist[v] = d + w;
                    pq.push({d + w, v});
                }
            }
        }
        return dist;
    }
};

struct Snap {
    bool ok = false;
    int edge = -1;   // -1: snapped directly onto a node
    int node = -1;
    double t = 0;    // parameter along the edge
    Point p;
};

Snap snap_point(const Point& q, const RoadGraph& g, double radius) {
    Snap best;
    double best_d = radius;
    for (std::size_t i = 0; i < g.nodes.size(); i++) {
        const double d = std::hypot(q.x - g.nodes[i].x, q.y - g.nodes[i].y);
        if (d <= best_d) {
            best_d = d;
            best = {true, -1, static_cast<int>(i), 0, g.nodes[i]};
        }
    }
    for (std::size_t e = 0; e < g.edges.size(); e++) {
        const Point& a = g.nodes[g.edges[e].first];
        const Point& b = g.nodes[g.edges[e].second];
        const double dx = b.x - a.x, dy = b.y - a.y;
        const double len2 = dx * dx + dy * dy;
        double t = 0;
        if (len2 > 0) t = std::clamp(((q.x - a.x) * dx + (q.y - a.y) * dy) / len2, 0.0, 1.0);
        const Point proj{a.x + t * dx, a.y + t * dy};
        const double d = std::hypot(q.x - proj.x, q.y - proj.y);
        if (d < best_d || (d <= best_d && !best.ok)) {
            best_d = d;
            best = {true, static_cast<int>(e), -1, t, proj};
        }
    }
    return best;
}

bool has_connected_pair(const RoadGraph& g) { return !g.edges.empty(); }

// S(G -> G'): how faithfully G' reproduces the path lengths of G
double apls_one_direction(const RoadGraph& g, const RoadGraph& other, double snap_radius) {
    const int n = static_cast<int>(g.nodes.size());
    if (!has_connected_pair(g)) {
        // nothing to reproduce: vacuously perfect only when the other
        // graph also has no paths
        return has_connected_pair(other) ? 0.0 : 1.0;
    }
    if (other.nodes.empty()) return 0.0;

    // snap every control node of g onto `other`, splitting target edges
    std::vector<Snap> snaps(n);
    for (int i = 0; i < n; i++) snaps[i] = snap_point(g.nodes[i], other, snap_radius);

    PathGraph aug(other);
    std::vector<int> snapped_id(n, -1);
    // group insertions per target edge, ordered along the edge
    std::vector<std::vector<std::pair<double, int>>> per_edge(other.edges.size());
    for (int i = 0; i < n; i++) {
        if (!snaps[i].ok) continue;
        if (snaps[i].node >= 0) {
            snapped_id[i] = snaps[i].node;
        } else {
            snapped_id[i] = aug.add_point(snaps[i].p);
            per_edge[snaps[i].edge].emplace_back(snaps[i].t, snapped_id[i]);
        }
    }
    for (std::size_t e = 0; e < per_edge.size(); e++) {
        if (per_edge[e].empty()) {
            aug.link(other.edges[e].first, other.edges[e].second);
            continue;
        }
        std::sort(per_edge[e].begin(), per_edge[e].end());
        int prev = other.edges[e].first;
        for (const auto& [t, id] : per_edge[e]) {
            aug.link(prev, id);
            prev = id;
        }
        aug.link(prev, other.edges[e].second);
    }

    PathGraph src(g);
    double penalty_sum = 0;
    std::size_t pair_count = 0;
    std::vector<double> dist_other;
    for (int a = 0; a < n; a++) {
        const std::vector<double> dist_g = src.dijkstra(a);
        const bool a_ok = snapped_id[a] >= 0;
        if (a_ok) dist_other = aug.dijkstra(snapped_id[a]);
        for (int b = a + 1; b < n; b++) {
            const double L = dist_g[b];
            if (!std::isfinite(L)) continue;  // only pairs connected in G
            pair_count++;
            if (!a_ok || snapped_id[b] < 0) {
                penalty_sum += 1.0;
                continue;
            }
            const double Lp = dist_other[snapped_id[b]];
            if (!std::isfinite(Lp)) {
                penalty_sum += 1.0;
            } else if (L > 0) {
                penalty_sum += std::min(1.0, std::abs(L - Lp) / L);
            } else {
                penalty_sum += Lp > 0 ? 1.0 : 0.0;
            }
        }
    }
    if (pair_count == 0) return has_connected_pair(other) ? 0.0 : 1.0;
    return 1.0 - penalty_sum / static_cast<double>(pair_count);
}

}  // namespace

double apls(const RoadGraph& pred, const RoadGraph& gt, double snap_radius) {
    return 0.5 * (apls_one_direction(gt, pred, snap_radius) +
                  apls_one_direction(pred, gt, snap_radius));
}

double complexity_from_counts(std::size_t total_elements, double apls_percent) {
    if (!(apls_percent > 0)) return std::numeric_limits<double>::infinity();
    return std::round(static_cast<double>(total_elements) / apls_percent);
}

double complexity_score(const RoadGraph& pred, double apls_percent) {
    return complexity_from_counts(graph_stats(pred).total, apls_percent);
}

EvalReport evaluate_pairs(const std::vector<std::pair<RoadGraph, RoadGraph>>& pairs,
                          const std::vector<std::string>& names, const MetricConfig& cfg,
                          int jobs) {
    EvalReport report;
    report.scenes.resize(pairs.size());
    auto eval_scene = [&](std::size_t s) {
        const RoadGraph& pred = pairs[s].first;
        const RoadGraph& gt = pairs[s].second;
        int w = gt.width > 0 ? gt.width : pred.width;
        int h = gt.height > 0 ? gt.height : pred.height;
        if (w <= 0 || h <= 0) {
            throw std::runtime_error("evaluate: scene " + names[s] + " has no canvas size");
        }
        SceneEval e;
        e.scene = names[s];
        const PRF pf = pixel_f1(pred, gt, w, h, cfg.line_width, cfg.pf1_buffer);
        const PRF jf = junction_f1(pred, gt, cfg.jf1_radius);
        e.p_f1 = pf.f1;
        e.p_precision = pf.precision;
        e.p_recall = pf.recall;
        e.j_f1 = jf.f1;
        e.j_precision = jf.precision;
        e.j_recall = jf.recall;
        e.apls = apls(pred, gt, cfg.apls_snap);
        const GraphStats st = graph_stats(pred);
        e.nodes = st.nodes;
        e.edges = st.edges;
        e.complexity = complexity_from_counts(st.total, 100.0 * e.apls);
        report.scenes[s] = std::move(e);
    };
    if (jobs <= 1 || pairs.size() <= 1) {
        for (std::size_t s = 0; s < pairs.size(); s++) eval_scene(s);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (int w = 0; w < std::min<int>(jobs, static_cast<int>(pairs.size())); w++) {
            workers.emplace_back([&]() {
                for (;;) {
                    const std::size_t s = next.fetch_add(1);
                    if (s >= pairs.size()) return;
                    eval_scene(s);
                }
            });
        }
        for (auto& w : workers) w.join();
    }
    SceneEval& m = report.macro;
    m.scene = "MACRO";
    const double n = std::max<std::size_t>(report.scenes.size(), 1);
    for (const auto& e : report.scenes) {
        m.p_f1 += e.p_f1 / n;
        m.j_f1 += e.j_f1 / n;
        m.apls += e.apls / n;
        m.p_precision += e.p_precision / n;
        m.p_recall += e.p_recall / n;
        m.j_precision += e.j_precision / n;
        m.j_recall += e.j_recall / n;
        m.nodes += e.nodes;
        m.edges += e.edges;
    }
    if (!report.scenes.empty()) {
        m.nodes = static_cast<std::size_t>(std::llround(static_cast<double>(m.nodes) / n));
        m.edges = static_cast<std::size_t>(std::llround(static_cast<double>(m.edges) / n));
        m.complexity = complexity_from_counts(m.nodes + m.edges, 100.0 * m.apls);
    }
    return report;
}

EvalReport evaluate(const std::string& pred_dir, const std::string& gt_dir,
                    const MetricConfig& cfg, int jobs) {
    std::vector<std::filesystem::path> gt_files;
    for (const auto& entry : std::filesystem::directory_iterator(gt_dir)) {
        if (entry.path().extension() == ".json") gt_files.push_back(entry.path());
    }
    std::sort(gt_files.begin(), gt_files.end());
    if (gt_files.empty()) throw std::runtime_error("evaluate: no graphs in " + gt_dir);

    std::vector<std::pair<RoadGraph, RoadGraph>> pairs;
    std::vector<std::string> names;
    for (const auto& gt_path : gt_files) {
        const auto pred_path = std::filesystem::path(pred_dir) / gt_path.filename();
        if (!std::filesystem::exists(pred_path)) {
            throw std::runtime_error("evaluate: missing prediction for " +
                                     gt_path.filename().string());
        }
        pairs.emplace_back(load_graph(pred_path.string()), load_graph(gt_path.string()));
        names.push_back(gt_path.stem().string());
    }
    return evaluate_pairs(pairs, names, cfg, jobs);
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open report file: " + path);
    std::fprintf(f, "scene,p_f1,j_f1,apls,nodes,edges,complexity\n");
    auto row = [&](const SceneEval& e) {
        std::fprintf(f, "%s,%.6f,%.6f,%.6f,%zu,%zu,%.0f\n", e.scene.c_str(), e.p_f1, e.j_f1,
                     e.apls, e.nodes, e.edges, e.complexity);
    };
    for (const auto& e : report.scenes) row(e);
    row(report.macro);
    std::fclose(f);
}

}  // namespace atlas::metrics
