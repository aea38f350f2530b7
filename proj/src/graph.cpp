#include "atlas/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace atlas {

std::vector<int> RoadGraph::degrees() const {
    std::vector<int> deg(nodes.size(), 0);
    for (const auto& [i, j] : edges) {
        deg[i]++;
        deg[j]++;
    }
    return deg;
}

bool operator==(const RoadGraph& a, const RoadGraph& b) {
    return a.nodes == b.nodes && a.edges == b.edges && a.width == b.width &&
           a.height == b.height;
}

std::size_t RasterMask::count() const {
    std::size_t n = 0;
    for (auto v : values) n += v;
    return n;
}

namespace {

std::pair<int, int> unordered(int i, int j) {
    return i < j ? std::make_pair(i, j) : std::make_pair(j, i);
}

}  // namespace

void validate_graph(const RoadGraph& g) {
    const int n = static_cast<int>(g.nodes.size());
    if (g.width > 0 && g.height > 0) {
        for (int i = 0; i < n; i++) {
            const Point& p = g.nodes[i];
            if (!(p.x >= 0.0 && p.x < g.width && p.y >= 0.0 && p.y < g.height)) {
                throw std::runtime_error("graph: node " + std::to_string(i) +
                                         " at (" + std::to_string(p.x) + ", " +
                                         std::to_string(p.y) + ") outside canvas " +
                                         std::to_string(g.width) + "x" +
                                         std::to_string(g.height));
            }
        }
    }
    std::set<std::pair<int, int>> seen;
    for (std::size_t e = 0; e < g.edges.size(); e++) {
        const auto& [i, j] = g.edges[e];
        if (i < 0 || i >= n || j < 0 || j >= n) {
            throw std::runtime_error("graph: edge " + std::to_string(e) + " (" +
                                     std::to_string(i) + ", " + std::to_string(j) +
                                     ") references a node out of range [0, " +
                                     std::to_string(n) + ")");
        }
        if (i == j) {
            throw std::runtime_error("graph: edge " + std::to_string(e) +
                                     " is a self-loop on node " + std::to_string(i));
        }
        if (!seen.insert(unordered(i, j)).second) {
            throw std::runtime_error("graph: edge " + std::to_string(e) + " (" +
                                     std::to_string(i) + ", " + std::to_string(j) +
                                     ") duplicates an earlier edge");
        }
    }
}

std::string graph_to_json(const RoadGraph& g) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& p : g.nodes) j["nodes"].push_back({p.x, p.y});
    j["edges"] = nlohmann::json::array();
    for (const auto& [a, b] : g.edges) j["edges"].push_back({a, b});
    if (g.width > 0 && g.height > 0) j["size"] = {g.width, g.height};
    return j.dump();
}

RoadGraph graph_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("graph parse error: ") + e.what());
    }
    if (!j.is_object() || !j.contains("nodes") || !j.contains("edges")) {
        throw std::runtime_error("graph parse error: expected object with 'nodes' and 'edges'");
    }
    RoadGraph g;
    const auto& nodes = j["nodes"];
    if (!nodes.is_array()) throw std::runtime_error("graph parse error: 'nodes' is not an array");
    for (std::size_t i = 0; i < nodes.size(); i++) {
        const auto& nd = nodes[i];
        if (!nd.is_array() || nd.size() != 2 || !nd[0].is_number() || !nd[1].is_number()) {
            throw std::runtime_error("graph parse error: node " + std::to_string(i) +
                                     " is not an [x, y] number pair");
        }
        g.nodes.push_back({nd[0].get<double>(), nd[1].get<double>()});
    }
    const auto& edges = j["edges"];
    if (!edges.is_array()) throw std::runtime_error("graph parse error: 'edges' is not an array");
    for (std::size_t e = 0; e < edges.size(); e++) {
        const auto& ed = edges[e];
        if (!ed.is_array() || ed.size() != 2 || !ed[0].is_number_integer() ||
            !ed[1].is_number_integer()) {
            throw std::runtime_error("graph parse error: edge " + std::to_string(e) +
                                     " is not an [i, j] integer pair");
        }
        g.edges.emplace_back(ed[0].get<int>(), ed[1].get<int>());
    }
    if (j.contains("size")) {
        const auto& sz = j["size"];
        if (!sz.is_array() || sz.size() != 2 || !sz[0].is_number_integer() ||
            !sz[1].is_number_integer()) {
            throw std::runtime_error("graph parse error: 'size' is not a [width, height] pair");
        }
        g.width = sz[0].get<int>();
        g.height = sz[1].get<int>();
    }
    validate_graph(g);
    return g;
}

RoadGraph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open graph file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return graph_from_json(buf.str());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void save_graph(const RoadGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open graph file for writing: " + path);
    out << graph_to_json(g) << "\n";
    if (!out) throw std::runtime_error("write failure: " + path);
}

double point_segment_distance(const Point& p, const Point& a, const Point& b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) {
        t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
        t = std::clamp(t, 0.0, 1.0);
    }
    const double qx = a.x + t * dx;
    const double qy = a.y + t * dy;
    return std::hypot(p.x - qx, p.y - qy);
}

RasterMask rasterize(const RoadGraph& g, int width, int height, double line_width) {
    if (line_width < 1.0) throw std::runtime_error("rasterize: line_width must be >= 1");
    RasterMask m;
    m.width = width;
    m.height = height;
    m.values.assign(static_cast<std::size_t>(width) * height, 0);
    const double r = line_width / 2.0;
    for (const auto& [i, j] : g.edges) {
        const Point& a = g.nodes[i];
        const Point& b = g.nodes[j];
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r)));
        for (int y = y0; y <= y1; y++) {
            for (int x = x0; x <= x1; x++) {
                if (point_segment_distance({double(x), double(y)}, a, b) <= r) {
                    m.values[static_cast<std::size_t>(y) * width + x] = 1;
                }
            }
        }
    }
    return m;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; i++) parent[i] = i;
    }
    int find(int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (b < a) std::swap(a, b);  // keep smallest index as root
        parent[b] = a;
        return true;
    }
};

// One clustering round. Returns false when no pair was within radius.
bool merge_round(const RoadGraph& in, double radius, RoadGraph& out,
                 std::vector<int>& round_map) {
    const int n = static_cast<int>(in.nodes.size());
    UnionFind uf(n);
    bool merged_any = false;
    const double r2 = radius * radius;
    // Grid buckets of size radius bound the candidate pairs.
    if (radius > 0.0 && n > 1) {
        struct Cell {
            long long x, y;
            bool operator<(const Cell& o) const { return x != o.x ? x < o.x : y < o.y; }
        };
        std::map<Cell, std::vector<int>> buckets;
        for (int i = 0; i < n; i++) {
            buckets[{static_cast<long long>(std::floor(in.nodes[i].x / radius)),
                     static_cast<long long>(std::floor(in.nodes[i].y / radius))}].push_back(i);
        }
        for (const auto& [cell, ids] : buckets) {
            for (long long dx = -1; dx <= 1; dx++) {
                for (long long dy = -1; dy <= 1; dy++) {
                    auto it = buckets.find({cell.x + dx, cell.y + dy});
                    if (it == buckets.end()) continue;
                    for (int i : ids) {
                        for (int j : it->second) {
                            if (j <= i) continue;
                            const double ddx = in.nodes[i].x - in.nodes[j].x;
                            const double ddy = in.nodes[i].y - in.nodes[j].y;
                            if (ddx * ddx + ddy * ddy <= r2) merged_any |= uf.unite(i, j);
                        }
                    }
                }
            }
        }
    } else {
        for (int i = 0; i < n; i++) {
            for (int j = i + 1; j < n; j++) {
                const double ddx = in.nodes[i].x - in.nodes[j].x;
                const double ddy = in.nodes[i].y - in.nodes[j].y;
                if (ddx * ddx + ddy * ddy <= r2) merged_any |= uf.unite(i, j);
            }
        }
    }

    // Representatives ordered by smallest original index.
    std::vector<int> new_index(n, -1);
    round_map.assign(n, -1);
    out.nodes.clear();
    out.edges.clear();
    out.width = in.width;
    out.height = in.height;
    std::vector<double> sx, sy;
    std::vector<int> cnt;
    for (int i = 0; i < n; i++) {
        const int root = uf.find(i);
        if (new_index[root] < 0) {
            new_index[root] = static_cast<int>(out.nodes.size());
            out.nodes.push_back({0, 0});
            sx.push_back(0);
            sy.push_back(0);
            cnt.push_back(0);
        }
        const int k = new_index[root];
        round_map[i] = k;
        sx[k] += in.nodes[i].x;
        sy[k] += in.nodes[i].y;
        cnt[k]++;
    }
    for (std::size_t k = 0; k < out.nodes.size(); k++) {
        out.nodes[k] = {sx[k] / cnt[k], sy[k] / cnt[k]};
    }
    std::set<std::pair<int, int>> dedup;
    for (const auto& [i, j] : in.edges) {
        const int a = new_index[uf.find(i)];
        const int b = new_index[uf.find(j)];
        if (a == b) continue;
        const auto key = unordered(a, b);
        if (dedup.insert(key).second) out.edges.push_back(key);
    }
    return merged_any;
}

}  // namespace

RoadGraph merge_nearby_nodes(const RoadGraph& g, double radius, std::vector<int>* node_map) {
    RoadGraph cur = g;
    RoadGraph next;
    std::vector<int> assign(g.nodes.size());
    for (std::size_t i = 0; i < assign.size(); i++) assign[i] = static_cast<int>(i);
    std::vector<int> round_map;
    // Iterate to a fixpoint: centroids of merged clusters may fall within
    // radius of further nodes even when the originals did not.
    for (;;) {
        const bool merged = merge_round(cur, radius, next, round_map);
        for (int& a : assign) a = round_map[a];
        if (!merged) break;
        cur = std::move(next);
        next = RoadGraph{};
    }
    if (node_map) *node_map = std::move(assign);
    return next;
}

GraphStats graph_stats(const RoadGraph& g) {
    GraphStats s;
    s.nodes = g.nodes.size();
    s.edges = g.edges.size();
    s.total = s.nodes + s.edges;
    return s;
}

}  // namespace atlas
