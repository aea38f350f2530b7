#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atlas/graph.hpp"
#include "atlas/image.hpp"
#include "atlas/ops.hpp"
#include "atlas/tensor.hpp"

namespace atlas::model {

enum class Support { complete, knn_static, knn_dynamic };
enum class Scorer { bilinear, mlp };

Support support_from_string(const std::string& s);
Scorer scorer_from_string(const std::string& s);
std::string to_string(Support s);
std::string to_string(Scorer s);

struct ModelConfig {
    int stride = 32;
    int n_in = 128;        // stem output channels
    int n_feat = 64;       // head branch channels
    int gnn_layers = 3;
    int gnn_dim = 64;
    Support support = Support::complete;
    int k = 4;             // neighbors for the k-NN support graphs
    Scorer scorer = Scorer::mlp;
    bool use_raw_features = false;  // feed stem features to the GNN directly
    bool embed_coords = true;       // append normalized (x, y) to node embeddings

    void validate() const;
    /// width of the initial node embeddings fed to the first GNN layer
    int node_dim() const {
        return (use_raw_features ? n_in : n_feat) + (embed_coords ? 2 : 0);
    }
};

struct ConvLayer {
    nn::Tensor w, b;
};

struct GnnLayer {
    nn::Tensor w, b;          // EdgeConv linear on [x_i || x_j - x_i]
    nn::Tensor bn_gamma, bn_beta;
    nn::BnState bn_state;
    double bn_eps = 1e-5;
};

/// All trainable weights plus the batchnorm running statistics. Tensors are
/// created with requires_grad so one ModelParams serves train and eval.
struct ModelParams {
    ModelConfig config;
    std::vector<ConvLayer> stem;         // 5 stride-2 blocks, 3 -> ... -> n_in
    std::vector<ConvLayer> jun_branch;   // 3 convs -> 1 channel
    std::vector<ConvLayer> off_branch;   // 3 convs -> 2 channels
    std::vector<ConvLayer> feat_branch;  // 3 convs -> n_feat channels
    std::vector<GnnLayer> gnn;
    nn::Tensor score_w;                       // bilinear [d, d]
    nn::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // 2-layer MLP scorer

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    /// Visit every trainable tensor in a fixed order.
    void for_each_param(const std::function<void(const std::string&, nn::Tensor&)>& fn);
    std::vector<std::pair<std::string, nn::Tensor>> named_params();
    void zero_grad();
};

/// Checkpoint: "ATLC" magic, version, a JSON manifest (config + parameter
/// names/shapes + running stats), then the raw little-endian f64 payload in
/// manifest order. Byte-exact across a save/load round trip.
void save_checkpoint(ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

nn::Tensor image_to_tensor(const SceneImage& im);

/// Five stride-2 conv+ReLU blocks; output spatial dims are input / 32.
nn::Tensor stem_forward(const nn::Tensor& image, ModelParams& params);

struct HeadsOut {
    nn::Tensor junction;  // [H, W] in (0, 1)
    nn::Tensor offsets;   // [H, W, 2] in [-0.5, 0.5]
    nn::Tensor nodefeat;  // [n_feat, H, W]
};

HeadsOut heads_forward(const nn::Tensor& fmap, ModelParams& params);

struct NodeBatch {
    std::vector<int> cells;                    // flat cell indices, ascending
    std::vector<std::pair<int, int>> cell_xy;  // (X_j, Y_j)
    std::vector<Point> coords;                 // p_j in input pixels
    nn::Tensor feats;                          // [n, node_dim]

    int size() const { return static_cast<int>(cells.size()); }
};

/// Node batch for an explicit candidate cell list (ascending flat indices).
/// Candidate coordinates decode the predicted offsets; features come from
/// the node branch (or the raw stem features), with normalized coordinates
/// appended when configured.
NodeBatch gather_nodes(const HeadsOut& heads, const nn::Tensor& fmap,
                       const std::vector<int>& cells, const ModelConfig& config,
                       int image_w, int image_h);

/// Candidates are the cells with junction score strictly above j_thr.
NodeBatch select_nodes(const HeadsOut& heads, const nn::Tensor& fmap, double j_thr,
                       const ModelConfig& config, int image_w, int image_h);

/// Directed message edges (dst, src): src in N(dst). Complete support uses
/// all ordered pairs; k-NN supports pick min(k, n-1) Euclidean neighbors in
/// the given feature rows. A single node falls back to one self-message.
std::vector<std::pair<int, int>> build_support_graph(const nn::Tensor& feats,
                                                     const ModelConfig& config);

nn::Tensor edgeconv_layer(const nn::Tensor& feats,
                          const std::vector<std::pair<int, int>>& edges, GnnLayer& layer,
                          nn::BnMode mode);

/// All GNN layers; the support graph is fixed (complete / static k-NN) or
/// rebuilt from each layer's input (dynamic k-NN).
nn::Tensor gnn_forward(const NodeBatch& batch, ModelParams& params, nn::BnMode mode);

struct EdgeScores {
    std::vector<std::pair<int, int>> pairs;  // unordered, i < j, batch indices
    nn::Tensor probs;                        // [m], p_ij = p_ji

    int size() const { return static_cast<int>(pairs.size()); }
};

/// Scores the given unordered pairs; raw scores are symmetrized by
/// averaging both argument orders before the sigmoid.
EdgeScores score_edges(const nn::Tensor& feats, const std::vector<std::pair<int, int>>& pairs,
                       ModelParams& params);

std::vector<std::pair<int, int>> all_pairs(int n);

struct ForwardOut {
    HeadsOut heads;
    NodeBatch batch;
    EdgeScores scores;   // empty when fewer than 2 nodes
    nn::Tensor gnn_out;  // [n, gnn_dim] when n >= 1
};

/// Full inference composition: stem, heads, node selection (or the given
/// teacher-forced candidate cells), message passing, edge scoring over all
/// candidate pairs.
ForwardOut model_forward(const nn::Tensor& image, ModelParams& params, double j_thr,
                         nn::BnMode mode,
                         const std::optional<std::vector<int>>& teacher_cells = std::nullopt);

}  // namespace atlas::model
