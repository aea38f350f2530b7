#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace atlas {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline bool operator==(const Point& a, const Point& b) {
    return a.x == b.x && a.y == b.y;
}

/// Undirected planar graph in pixel coordinates. Nodes are free points,
/// edges are unordered index pairs. An optional canvas size bounds the
/// coordinates to [0, width) x [0, height).
struct RoadGraph {
    std::vector<Point> nodes;
    std::vector<std::pair<int, int>> edges;
    int width = 0;   // 0 = no declared canvas
    int height = 0;

    std::size_t node_count() const { return nodes.size(); }
    std::size_t edge_count() const { return edges.size(); }
    bool empty() const { return nodes.empty() && edges.empty(); }

    void add_edge(int i, int j) { edges.emplace_back(i, j); }
    std::vector<int> degrees() const;
};

bool operator==(const RoadGraph& a, const RoadGraph& b);

/// Throws std::runtime_error naming the offending node/edge when an
/// invariant is violated: valid endpoint indices, no self-loops, no
/// duplicate edges under unordered comparison, coordinates inside the
/// declared canvas.
void validate_graph(const RoadGraph& g);

RoadGraph load_graph(const std::string& path);
void save_graph(const RoadGraph& g, const std::string& path);

std::string graph_to_json(const RoadGraph& g);
RoadGraph graph_from_json(const std::string& text);

struct RasterMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;  // row-major, {0,1}

    std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
};

/// Exact per-pixel rasterization: pixel (x, y) has its center at the
/// integer coordinate (x, y) and is set iff its distance to some edge
/// segment is <= line_width / 2.
RasterMask rasterize(const RoadGraph& g, int width, int height, double line_width);

/// Single-linkage clustering of nodes under distance <= radius, iterated
/// to a fixpoint so the result is idempotent. Clusters collapse to their
/// centroid; edges are re-pointed, self-loops dropped, duplicates
/// collapsed. node_map, when given, receives original index -> merged
/// index.
RoadGraph merge_nearby_nodes(const RoadGraph& g, double radius,
                             std::vector<int>* node_map = nullptr);

struct GraphStats {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t total = 0;
};

GraphStats graph_stats(const RoadGraph& g);

double point_segment_distance(const Point& p, const Point& a, const Point& b);

}  // namespace atlas
