#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atlas/model.hpp"
#include "atlas/rng.hpp"
#include "atlas/targets.hpp"

namespace atlas::train {

struct TrainConfig {
    int epochs = 24;
    int batch_size = 1;
    double lr = 1e-3;
    double train_jthr = 0.5;   // junction threshold for candidate selection
    int crop = 256;
    bool flips = true;
    std::uint64_t seed = 1;
    double w_jun = 1.0, w_off = 1.0, w_edge = 1.0;
    bool offset_mask_predicted = false;  // mask the offset loss by J > train_jthr
    int checkpoint_every = 10;
    std::string out_dir;  // checkpoints land here when nonempty

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double l_jun = 0, l_off = 0, l_edge = 0, l_total = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    void write_csv(const std::string& path) const;
    /// loss-column equality; wall time is excluded from the determinism
    /// contract
    bool losses_equal(const TrainLog& other) const;
};

struct LossOut {
    nn::Tensor total;
    double jun = 0, off = 0, edge = 0;
};

/// L = w_jun * BCE(J, J_gt) + w_off * maskedMSE(offsets, V) + w_edge * BCE(p, labels).
/// The offset mask defaults to the ground-truth junction cells; edge terms
/// vanish when there are fewer than two candidates.
LossOut total_loss(const model::HeadsOut& heads, const model::EdgeScores& scores,
                   const grid::GridTargets& targets, const grid::EdgeLabelSet& labels,
                   const TrainConfig& cfg);

/// Joint horizontal/vertical flips of image and graph under the
/// pixel-center convention x -> width - 1 - x. Draws two bernoullis.
void augment(SceneImage& image, RoadGraph& graph, bool flips, Rng& rng);

/// Random crop of size crop x crop; nodes outside are dropped along with
/// their edges. No-op when the image is already crop-sized.
void random_crop(SceneImage& image, RoadGraph& graph, int crop, Rng& rng);

struct Scene {
    SceneImage image;
    RoadGraph graph;
    std::string name;
};

std::vector<Scene> load_scenes(const std::string& dir);

std::pair<model::ModelParams, TrainLog> train(const std::string& data_dir,
                                              const TrainConfig& tc,
                                              const model::ModelConfig& mc);

}  // namespace atlas::train
