#include "atlas/targets.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace atlas::grid {

GridTargets encode_targets(const RoadGraph& graph, int image_w, int image_h, int stride) {
    if (stride <= 0 || image_w % stride != 0 || image_h % stride != 0) {
        throw std::runtime_error("encode_targets: image dims must be divisible by stride");
    }
    GridTargets t;
    t.stride = stride;
    t.grid_w = image_w / stride;
    t.grid_h = image_h / stride;
    t.junction.assign(static_cast<std::size_t>(t.grid_w) * t.grid_h, 0);
    t.offsets.assign(static_cast<std::size_t>(t.grid_w) * t.grid_h * 2, 0.0);
    t.merged.width = image_w;
    t.merged.height = image_h;

    const int n = static_cast<int>(graph.nodes.size());
    std::map<int, std::vector<int>> by_cell;  // flat cell index -> original nodes
    for (int i = 0; i < n; i++) {
        const Point& p = graph.nodes[i];
        if (!(p.x >= 0 && p.x < image_w && p.y >= 0 && p.y < image_h)) {
            throw std::runtime_error("encode_targets: node " + std::to_string(i) +
                                     " outside canvas");
        }
        const int cx = static_cast<int>(p.x / stride);
        const int cy = static_cast<int>(p.y / stride);
        by_cell[cy * t.grid_w + cx].push_back(i);
    }

    // Merged nodes ordered by cell index (row-major).
    std::vector<int> node_to_merged(n, -1);
    for (const auto& [cell, ids] : by_cell) {
        double sx = 0, sy = 0;
        for (int i : ids) {
            sx += graph.nodes[i].x;
            sy += graph.nodes[i].y;
            node_to_merged[i] = static_cast<int>(t.merged.nodes.size());
        }
        const Point centroid{sx / ids.size(), sy / ids.size()};
        const int cx = cell % t.grid_w;
        const int cy = cell / t.grid_w;
        t.merged.nodes.push_back(centroid);
        t.cell_of_node.emplace_back(cx, cy);
        t.junction[cell] = 1;
        t.offsets[cell * 2 + 0] = centroid.x / stride - cx - 0.5;
        t.offsets[cell * 2 + 1] = centroid.y / stride - cy - 0.5;
    }

    std::set<std::pair<int, int>> dedup;
    for (const auto& [i, j] : graph.edges) {
        int a = node_to_merged[i];
        int b = node_to_merged[j];
        if (a == b) continue;  // co-cell pair collapsed, drop the self-loop
        if (a > b) std::swap(a, b);
        if (dedup.insert({a, b}).second) t.merged.edges.emplace_back(a, b);
    }
    std::sort(t.merged.edges.begin(), t.merged.edges.end());
    return t;
}

EdgeLabelSet build_edge_labels(const GridTargets& targets,
                               const std::vector<double>& predicted_junction,
                               double train_jthr) {
    const std::size_t cells = targets.junction.size();
    if (predicted_junction.size() != cells) {
        throw std::runtime_error("build_edge_labels: prediction grid size mismatch");
    }
    EdgeLabelSet out;
    std::vector<int> gt_node_of_cell(cells, -1);
    for (std::size_t k = 0; k < targets.cell_of_node.size(); k++) {
        const auto& [cx, cy] = targets.cell_of_node[k];
        gt_node_of_cell[targets.cell_index(cx, cy)] = static_cast<int>(k);
    }
    for (std::size_t c = 0; c < cells; c++) {
        if (targets.junction[c] != 0 || predicted_junction[c] > train_jthr) {
            out.candidate_cells.push_back(static_cast<int>(c));
        }
    }

    std::set<std::pair<int, int>> gt_edges(targets.merged.edges.begin(),
                                           targets.merged.edges.end());
    const std::size_t m = out.candidate_cells.size();
    out.labels.assign(m * (m - 1) / 2, 0);
    for (std::size_t a = 0; a < m; a++) {
        const int na = gt_node_of_cell[out.candidate_cells[a]];
        if (na < 0) continue;
        for (std::size_t b = a + 1; b < m; b++) {
            const int nb = gt_node_of_cell[out.candidate_cells[b]];
            if (nb < 0) continue;
            const auto key = na < nb ? std::make_pair(na, nb) : std::make_pair(nb, na);
            if (gt_edges.count(key)) {
                out.labels[EdgeLabelSet::pair_index(a, b, m)] = 1;
            }
        }
    }
    return out;
}

std::vector<RatioRow> ratio_analysis(const std::vector<RoadGraph>& graphs,
                                     int stride, const std::vector<double>& ratios) {
    if (graphs.empty()) throw std::runtime_error("ratio_analysis: empty corpus");
    for (double r : ratios) {
        if (!(r > 0)) throw std::runtime_error("ratio_analysis: ratios must be positive");
    }
    std::vector<RatioRow> rows;
    for (double r : ratios) {
        double sum = 0;
        std::size_t counted = 0;
        for (const auto& g : graphs) {
            if (g.nodes.empty()) continue;
            std::map<std::pair<long long, long long>, int> buckets;
            for (const auto& p : g.nodes) {
                buckets[{static_cast<long long>(std::floor(p.x * r / stride)),
                         static_cast<long long>(std::floor(p.y * r / stride))}]++;
            }
            sum += static_cast<double>(g.nodes.size()) / buckets.size();
            counted++;
        }
        rows.push_back({r, counted ? sum / counted : 0.0});
    }
    return rows;
}

}  // namespace atlas::grid
