#pragma once

#include <cstdint>
#include <string>

#include "atlas/graph.hpp"
#include "atlas/image.hpp"

namespace atlas::synth {

/// Parameters of a procedurally generated overhead scene. Roads form a
/// jittered lattice with random edge deletion and optional off-axis turn
/// points, giving controllable densities of intersections, turns and
/// dead ends.
struct SceneConfig {
    int width = 256;
    int height = 256;
    int stride = 32;              // detection-grid stride the dims must divide by
    // 72 px keeps the average ground-truth points per positive cell at 1.0
    // for the default scene family (see the `ratio` subcommand)
    double lattice_spacing = 72;
    double jitter = 8;
    double drop_prob = 0.25;
    double curve_amplitude = 8;   // perpendicular shift of inserted turn points
    double noise_level = 0.15;    // [0, 1]
    double road_width = 4;
    std::uint64_t seed = 0;

    void validate() const;        // throws on invariant violation
};

RoadGraph generate_road_graph(const SceneConfig& config);

SceneImage render_scene(const RoadGraph& graph, const SceneConfig& config);

/// Writes `count` scene pairs (scene_%04d.img + scene_%04d.json) with
/// per-scene seeds config.seed + i. Scenes are independent, so jobs > 1
/// parallelizes without changing any output byte.
void make_dataset(const SceneConfig& config, int count, const std::string& out_dir,
                  int jobs = 1);

}  // namespace atlas::synth
