#pragma once

#include <string>
#include <utility>
#include <vector>

#include "atlas/graph.hpp"
#include "atlas/image.hpp"
#include "atlas/metrics.hpp"
#include "atlas/model.hpp"

namespace atlas::infer {

struct InferConfig {
    double j_thr = 0.5;
    double edge_thr = 0.3;
    int window = 256;         // tile size; equals the training resolution
    int overlap_stride = 128;  // tile spacing; defaults to window / 2
    double merge_radius = 16;  // node dedup radius; defaults to stride / 2
    int jobs = 1;

    void validate() const;
};

struct DecodedPoint {
    int cell = 0;  // flat cell index
    Point p;
};

/// One point per cell with junction > j_thr, placed at
/// ((u + X + 0.5) / W) * W_I and the y counterpart.
std::vector<DecodedPoint> decode_points(const std::vector<double>& junction,
                                        const std::vector<double>& offsets, int grid_w,
                                        int grid_h, double j_thr, int image_w, int image_h);

/// Nodes plus every scored candidate pair, before edge thresholding.
struct ScoredTile {
    std::vector<Point> nodes;
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> probs;
};

ScoredTile predict_tile_scored(const SceneImage& tile, model::ModelParams& params,
                               const InferConfig& cfg);

RoadGraph predict_tile(const SceneImage& tile, model::ModelParams& params,
                       const InferConfig& cfg);

/// Row-major tile origins at overlap_stride spacing, last row/column
/// clamped flush to the border.
std::vector<std::pair<int, int>> tile_origins(int image_w, int image_h, int window,
                                              int overlap_stride);

/// Tiles the image, translates per-tile detections into global coordinates,
/// deduplicates nodes with merge_nearby_nodes(merge_radius), keeps the
/// maximum probability among duplicate accumulated edges, then applies the
/// edge threshold. Deterministic for any jobs setting.
RoadGraph sliding_window_infer(const SceneImage& image, model::ModelParams& params,
                               const InferConfig& cfg);

struct SweepRow {
    double threshold = 0;
    double p_f1 = 0, j_f1 = 0, apls = 0;
    double nodes = 0, edges = 0;  // mean predicted counts per scene
};

/// One evaluation row per threshold; node detections and edge scores are
/// computed once per scene and re-cut at each threshold.
std::vector<SweepRow> threshold_sweep(const std::string& dataset_dir,
                                      model::ModelParams& params,
                                      const std::vector<double>& thresholds,
                                      const InferConfig& cfg,
                                      const metrics::MetricConfig& mcfg);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace atlas::infer
