#pragma once

#include <string>
#include <vector>

#include "atlas/graph.hpp"

namespace atlas::metrics {

struct MetricConfig {
    double line_width = 3;    // rasterization width for the pixel metric
    double pf1_buffer = 4;    // pixel match tolerance
    double jf1_radius = 8;    // junction match radius
    double apls_snap = 8;     // node snap radius
};

struct PRF {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

/// Buffered pixel F1: both graphs are rasterized; a predicted pixel counts
/// as a true positive when some ground-truth pixel lies within `buffer`
/// (and symmetrically for recall).
PRF pixel_f1(const RoadGraph& pred, const RoadGraph& gt, int width, int height,
             double line_width, double buffer);

/// Junctions are nodes of degree != 2. Greedy nearest-first one-to-one
/// matching within match_radius; a matched pair is a true positive only
/// when the degrees agree. Two empty junction sets count as agreement.
PRF junction_f1(const RoadGraph& pred, const RoadGraph& gt, double match_radius);

/// Average Path Length Similarity in [0, 1], symmetrized over both
/// directions. Control nodes are all graph nodes; each is snapped onto the
/// nearest point of the other graph within snap_radius.
double apls(const RoadGraph& pred, const RoadGraph& gt, double snap_radius);

/// (nodes + edges) / APLS-in-percent, rounded for reporting. Non-positive
/// APLS yields the +infinity sentinel.
double complexity_from_counts(std::size_t total_elements, double apls_percent);
double complexity_score(const RoadGraph& pred, double apls_percent);

struct SceneEval {
    std::string scene;
    double p_f1 = 0, j_f1 = 0, apls = 0;
    double p_precision = 0, p_recall = 0, j_precision = 0, j_recall = 0;
    std::size_t nodes = 0, edges = 0;
    double complexity = 0;
};

struct EvalReport {
    std::vector<SceneEval> scenes;
    SceneEval macro;  // unweighted mean, scene = "MACRO"
};

/// Pairs files by name across the two directories; missing counterparts
/// are an error. The canvas comes from the ground-truth file's size.
/// Scenes evaluate independently (jobs > 1 parallelizes); aggregation is
/// serial and deterministic.
EvalReport evaluate(const std::string& pred_dir, const std::string& gt_dir,
                    const MetricConfig& cfg, int jobs = 1);

EvalReport evaluate_pairs(const std::vector<std::pair<RoadGraph, RoadGraph>>& pairs,
                          const std::vector<std::string>& names, const MetricConfig& cfg,
                          int jobs = 1);

void write_report_csv(const EvalReport& report, const std::string& path);

}  // namespace atlas::metrics
