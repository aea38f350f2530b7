#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "atlas/graph.hpp"

namespace atlas::grid {

/// Per-cell training targets derived from a ground-truth graph: nodes are
/// bucketed into stride x stride cells, co-cell nodes collapse to their
/// centroid, and each positive cell carries the centroid offset from the
/// cell center normalized to [-0.5, 0.5].
struct GridTargets {
    int grid_w = 0;
    int grid_h = 0;
    int stride = 0;
    std::vector<std::uint8_t> junction;         // [grid_h * grid_w], row-major
    std::vector<double> offsets;                // [grid_h * grid_w * 2], (u, v); zero off-junction
    RoadGraph merged;                           // one node per positive cell
    std::vector<std::pair<int, int>> cell_of_node;  // merged node -> (cx, cy)

    int cell_index(int cx, int cy) const { return cy * grid_w + cx; }
    bool positive(int cx, int cy) const { return junction[cell_index(cx, cy)] != 0; }
};

GridTargets encode_targets(const RoadGraph& graph, int image_w, int image_h, int stride);

/// Candidate cells and symmetric edge labels for the link-prediction loss.
/// Candidates are the ground-truth cells plus every cell whose predicted
/// junction score exceeds train_jthr; pairs touching a candidate without a
/// ground-truth node are labeled 0.
struct EdgeLabelSet {
    std::vector<int> candidate_cells;   // flat indices, ascending
    std::vector<std::uint8_t> labels;   // triangular over candidate pairs (a < b)

    std::size_t pair_count() const { return labels.size(); }
    static std::size_t pair_index(std::size_t a, std::size_t b, std::size_t m) {
        // a < b < m
        return a * m - a * (a + 1) / 2 + (b - a - 1);
    }
    std::uint8_t label(std::size_t a, std::size_t b) const {
        if (a > b) std::swap(a, b);
        return labels[pair_index(a, b, candidate_cells.size())];
    }
};

EdgeLabelSet build_edge_labels(const GridTargets& targets,
                               const std::vector<double>& predicted_junction,
                               double train_jthr);

struct RatioRow {
    double ratio = 0;
    double avg_points_per_positive_cell = 0;
};

/// Fig.-3-style density probe: rescale every graph by each ratio, bucket
/// nodes into stride cells, and report the mean points-per-positive-cell
/// over the corpus.
std::vector<RatioRow> ratio_analysis(const std::vector<RoadGraph>& graphs,
                                     int stride, const std::vector<double>& ratios);

}  // namespace atlas::grid
