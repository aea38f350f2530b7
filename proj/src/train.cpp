#include "atlas/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "atlas/optim.hpp"

namespace atlas::train {

void TrainConfig::validate() const {
    if (epochs < 1) throw std::runtime_error("train: epochs must be >= 1");
    if (batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
    if (!(lr > 0)) throw std::runtime_error("train: lr must be positive");
    if (crop % 32 != 0) throw std::runtime_error("train: crop must be divisible by 32");
    if (train_jthr < 0 || train_jthr > 1) throw std::runtime_error("train: train_jthr in [0,1]");
}

void TrainLog::write_csv(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open log file: " + path);
    std::fprintf(f, "epoch,l_jun,l_off,l_edge,l_total,seconds\n");
    for (const auto& r : epochs) {
        std::fprintf(f, "%d,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.epoch, r.l_jun, r.l_off, r.l_edge,
                     r.l_total, r.seconds);
    }
    std::fclose(f);
}

bool TrainLog::losses_equal(const TrainLog& other) const {
    if (epochs.size() != other.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); i++) {
        const auto& a = epochs[i];
        const auto& b = other.epochs[i];
        if (a.epoch != b.epoch || a.l_jun != b.l_jun || a.l_off != b.l_off ||
            a.l_edge != b.l_edge || a.l_total != b.l_total) {
            return false;
        }
    }
    return true;
}

LossOut total_loss(const model::HeadsOut& heads, const model::EdgeScores& scores,
                   const grid::GridTargets& targets, const grid::EdgeLabelSet& labels,
                   const TrainConfig& cfg) {
    const int H = heads.junction.dim(0), W = heads.junction.dim(1);
    if (H != targets.grid_h || W != targets.grid_w) {
        throw std::runtime_error("total_loss: grid shape mismatch");
    }

    std::vector<double> jgt(targets.junction.begin(), targets.junction.end());
    nn::Tensor j_target = nn::Tensor::from({H, W}, jgt);
    nn::Tensor l_jun = nn::bce_loss(nn::reshape(heads.junction, {H * W}),
                                    nn::reshape(j_target, {H * W}));

    nn::Tensor v_target = nn::Tensor::from({H, W, 2}, targets.offsets);
    nn::Tensor mask;
    if (cfg.offset_mask_predicted) {
        std::vector<double> m(static_cast<std::size_t>(H) * W, 0.0);
        for (int c = 0; c < H * W; c++) m[c] = heads.junction.data()[c] > cfg.train_jthr ? 1.0 : 0.0;
        mask = nn::Tensor::from({H, W}, m);
    } else {
        mask = j_target;
    }
    nn::Tensor l_off = nn::masked_mse(heads.offsets, v_target, mask);

    nn::Tensor l_edge;
    if (scores.size() > 0) {
        std::vector<double> lab(labels.labels.begin(), labels.labels.end());
        if (lab.size() != static_cast<std::size_t>(scores.size())) {
            throw std::runtime_error("total_loss: edge label/score count mismatch");
        }
        l_edge = nn::bce_loss(scores.probs, nn::Tensor::from({scores.size()}, lab));
    } else {
        l_edge = nn::Tensor::scalar(0.0);
    }

    LossOut out;
    out.jun = l_jun.item();
    out.off = l_off.item();
    out.edge = l_edge.item();
    out.total = nn::add(nn::add(nn::scale(l_jun, cfg.w_jun), nn::scale(l_off, cfg.w_off)),
                        nn::scale(l_edge, cfg.w_edge));
    return out;
}

void augment(SceneImage& image, RoadGraph& graph, bool flips, Rng& rng) {
    if (!flips) return;
    const bool hflip = rng.bernoulli(0.5);
    const bool vflip = rng.bernoulli(0.5);
    const int W = image.width, H = image.height;
    if (hflip) {
        for (int c = 0; c < image.channels; c++) {
            for (int y = 0; y < H; y++) {
                for (int x = 0; x < W / 2; x++) {
                    std::swap(image.at(c, y, x), image.at(c, y, W - 1 - x));
                }
            }
        }
        // pixel-center convention; coordinates beyond the last center would
        // land negative, so clamp them onto it
        for (auto& p : graph.nodes) p.x = std::max(0.0, W - 1 - p.x);
    }
    if (vflip) {
        for (int c = 0; c < image.channels; c++) {
            for (int y = 0; y < H / 2; y++) {
                for (int x = 0; x < W; x++) {
                    std::swap(image.at(c, y, x), image.at(c, H - 1 - y, x));
                }
            }
        }
        for (auto& p : graph.nodes) p.y = std::max(0.0, H - 1 - p.y);
    }
}

void random_crop(SceneImage& image, RoadGraph& graph, int crop, Rng& rng) {
    if (image.width == crop && image.height == crop) return;
    if (image.width < crop || image.height < crop) {
        throw std::runtime_error("crop larger than scene");
    }
    const int ox = rng.uniform_int(0, image.width - crop);
    const int oy = rng.uniform_int(0, image.height - crop);
    SceneImage out = SceneImage::make(crop, crop, image.channels);
    for (int c = 0; c < image.channels; c++) {
        for (int y = 0; y < crop; y++) {
            for (int x = 0; x < crop; x++) out.at(c, y, x) = image.at(c, y + oy, x + ox);
        }
    }
    RoadGraph g;
    g.width = crop;
    g.height = crop;
    std::vector<int> remap(graph.nodes.size(), -1);
    for (std::size_t i = 0; i < graph.nodes.size(); i++) {
        const Point& p = graph.nodes[i];
        if (p.x >= ox && p.x < ox + crop && p.y >= oy && p.y < oy + crop) {
            remap[i] = static_cast<int>(g.nodes.size());
            g.nodes.push_back({p.x - ox, p.y - oy});
        }
    }
    for (const auto& [i, j] : graph.edges) {
        if (remap[i] >= 0 && remap[j] >= 0) g.edges.emplace_back(remap[i], remap[j]);
    }
    image = std::move(out);
    graph = std::move(g);
}

std::vector<Scene> load_scenes(const std::string& dir) {
    std::vector<std::filesystem::path> images;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".img") images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());
    std::vector<Scene> scenes;
    for (const auto& img : images) {
        auto graph_path = img;
        graph_path.replace_extension(".json");
        if (!std::filesystem::exists(graph_path)) continue;
        Scene s;
        s.image = read_atlg(img.string());
        s.graph = load_graph(graph_path.string());
        s.name = img.stem().string();
        scenes.push_back(std::move(s));
    }
    return scenes;
}

std::pair<model::ModelParams, TrainLog> train(const std::string& data_dir,
                                              const TrainConfig& tc,
                                              const model::ModelConfig& mc) {
    tc.validate();
    mc.validate();
    std::vector<Scene> scenes = load_scenes(data_dir);
    if (scenes.empty()) throw std::runtime_error("train: no scenes in " + data_dir);

    model::ModelParams params = model::ModelParams::init(mc, splitmix64(tc.seed));
    nn::Adam adam(tc.lr);
    Rng order_rng = Rng(tc.seed).fork(11);
    Rng aug_rng = Rng(tc.seed).fork(12);
    auto named = params.named_params();

    TrainLog log;
    std::vector<int> order(scenes.size());
    for (std::size_t i = 0; i < order.size(); i++) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= tc.epochs; epoch++) {
        const auto t0 = std::chrono::steady_clock::now();
        // Fisher-Yates with the dedicated order stream
        for (int i = static_cast<int>(order.size()) - 1; i > 0; i--) {
            std::swap(order[i], order[order_rng.uniform_int(0, i)]);
        }
        double sum_jun = 0, sum_off = 0, sum_edge = 0, sum_total = 0;
        int in_batch = 0;
        params.zero_grad();
        for (std::size_t s = 0; s < order.size(); s++) {
            SceneImage image = scenes[order[s]].image;
            RoadGraph graph = scenes[order[s]].graph;
            random_crop(image, graph, tc.crop, aug_rng);
            augment(image, graph, tc.flips, aug_rng);
            grid::GridTargets targets =
                grid::encode_targets(graph, image.width, image.height, mc.stride);

            nn::Tape tape;
            LossOut loss;
            {
                nn::Tape::Scope scope(tape);
                nn::Tensor img_t = model::image_to_tensor(image);
                nn::Tensor fmap = model::stem_forward(img_t, params);
                model::HeadsOut heads = model::heads_forward(fmap, params);
                const std::vector<double>& jvals = heads.junction.values();
                grid::EdgeLabelSet labels =
                    grid::build_edge_labels(targets, jvals, tc.train_jthr);
                model::NodeBatch batch = model::gather_nodes(
                    heads, fmap, labels.candidate_cells, mc, image.width, image.height);
                model::EdgeScores scores;
                if (batch.size() >= 1) {
                    nn::Tensor gnn_out = model::gnn_forward(batch, params, nn::BnMode::train);
                    if (batch.size() >= 2) {
                        scores = model::score_edges(gnn_out, model::all_pairs(batch.size()), params);
                    }
                }
                loss = total_loss(heads, scores, targets, labels, tc);
                nn::backward(loss.total, tape);
            }
            sum_jun += loss.jun;
            sum_off += loss.off;
            sum_edge += loss.edge;
            sum_total += loss.total.item();
            in_batch++;
            if (in_batch == tc.batch_size || s + 1 == order.size()) {
                adam.step(named);
                params.zero_grad();
                in_batch = 0;
            }
        }
        const auto t1 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        const double n = static_cast<double>(order.size());
        rec.l_jun = sum_jun / n;
        rec.l_off = sum_off / n;
        rec.l_edge = sum_edge / n;
        rec.l_total = sum_total / n;
        rec.seconds = std::chrono::duration<double>(t1 - t0).count();
        log.epochs.push_back(rec);

        if (!tc.out_dir.empty() &&
            (epoch % tc.checkpoint_every == 0 || epoch == tc.epochs)) {
            std::filesystem::create_directories(tc.out_dir);
            model::save_checkpoint(params,
                                   (std::filesystem::path(tc.out_dir) / "model.atlc").string());
        }
    }
    return {std::move(params), std::move(log)};
}

}  // namespace atlas::train
