#include "atlas/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "atlas/rng.hpp"
#include "json.hpp"

namespace atlas::model {

Support support_from_string(const std::string& s) {
    if (s == "complete") return Support::complete;
    if (s == "knn_static") return Support::knn_static;
    if (s == "knn_dynamic") return Support::knn_dynamic;
    throw std::runtime_error("unknown support graph mode: " + s);
}

Scorer scorer_from_string(const std::string& s) {
    if (s == "bilinear") return Scorer::bilinear;
    if (s == "mlp") return Scorer::mlp;
    throw std::runtime_error("unknown scorer: " + s);
}

std::string to_string(Support s) {
    switch (s) {
        case Support::complete: return "complete";
        case Support::knn_static: return "knn_static";
        default: return "knn_dynamic";
    }
}

std::string to_string(Scorer s) {
    return s == Scorer::bilinear ? "bilinear" : "mlp";
}

void ModelConfig::validate() const {
    if (stride != 32) throw std::runtime_error("model: stride is fixed at 32");
    if (n_in <= 0 || n_feat <= 0 || gnn_dim <= 0) {
        throw std::runtime_error("model: channel counts must be positive");
    }
    if (gnn_layers < 1) throw std::runtime_error("model: gnn_layers must be >= 1");
    if (k < 1) throw std::runtime_error("model: k must be >= 1");
}

namespace {

nn::Tensor he_conv(Rng& rng, int c_out, int c_in, int k) {
    nn::Tensor w = nn::Tensor::zeros({c_out, c_in, k, k}, true);
    const double std = std::sqrt(2.0 / (c_in * k * k));
    for (int i = 0; i < w.size(); i++) w.data()[i] = rng.normal(0.0, std);
    return w;
}

nn::Tensor he_linear(Rng& rng, int out, int in) {
    nn::Tensor w = nn::Tensor::zeros({out, in}, true);
    const double std = std::sqrt(2.0 / in);
    for (int i = 0; i < w.size(); i++) w.data()[i] = rng.normal(0.0, std);
    return w;
}

std::vector<ConvLayer> make_branch(Rng& rng, int c_in, int c_mid, int c_out) {
    std::vector<ConvLayer> branch;
    branch.push_back({he_conv(rng, c_mid, c_in, 3), nn::Tensor::zeros({c_mid}, true)});
    branch.push_back({he_conv(rng, c_mid, c_mid, 3), nn::Tensor::zeros({c_mid}, true)});
    branch.push_back({he_conv(rng, c_out, c_mid, 3), nn::Tensor::zeros({c_out}, true)});
    return branch;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = Rng(seed).fork(0xa71a5);
    ModelParams p;
    p.config = config;

    const int stem_ch[6] = {3, 16, 32, 64, 128, config.n_in};
    for (int l = 0; l < 5; l++) {
        p.stem.push_back(
            {he_conv(rng, stem_ch[l + 1], stem_ch[l], 3), nn::Tensor::zeros({stem_ch[l + 1]}, true)});
    }
    p.jun_branch = make_branch(rng, config.n_in, config.n_feat, 1);
    p.off_branch = make_branch(rng, config.n_in, config.n_feat, 2);
    p.feat_branch = make_branch(rng, config.n_in, config.n_feat, config.n_feat);
    // bias the junction logit low so untrained models start sparse
    p.jun_branch.back().b.data()[0] = -2.0;

    int d_in = config.node_dim();
    for (int l = 0; l < config.gnn_layers; l++) {
        GnnLayer g;
        g.w = he_linear(rng, config.gnn_dim, 2 * d_in);
        g.b = nn::Tensor::zeros({config.gnn_dim}, true);
        g.bn_gamma = nn::Tensor::full({config.gnn_dim}, 1.0, true);
        g.bn_beta = nn::Tensor::zeros({config.gnn_dim}, true);
        g.bn_state = nn::BnState::make(config.gnn_dim);
        p.gnn.push_back(std::move(g));
        d_in = config.gnn_dim;
    }

    const int d = config.gnn_dim;
    p.score_w = he_linear(rng, d, d);
    p.mlp_w1 = he_linear(rng, d, 2 * d);
    p.mlp_b1 = nn::Tensor::zeros({d}, true);
    p.mlp_w2 = he_linear(rng, 1, d);
    p.mlp_b2 = nn::Tensor::zeros({1}, true);
    return p;
}

void ModelParams::for_each_param(const std::function<void(const std::string&, nn::Tensor&)>& fn) {
    auto visit_branch = [&](const char* name, std::vector<ConvLayer>& branch) {
        for (std::size_t l = 0; l < branch.size(); l++) {
            fn(std::string(name) + "." + std::to_string(l) + ".w", branch[l].w);
            fn(std::string(name) + "." + std::to_string(l) + ".b", branch[l].b);
        }
    };
    visit_branch("stem", stem);
    visit_branch("jun", jun_branch);
    visit_branch("off", off_branch);
    visit_branch("feat", feat_branch);
    for (std::size_t l = 0; l < gnn.size(); l++) {
        const std::string base = "gnn." + std::to_string(l);
        fn(base + ".w", gnn[l].w);
        fn(base + ".b", gnn[l].b);
        fn(base + ".bn_gamma", gnn[l].bn_gamma);
        fn(base + ".bn_beta", gnn[l].bn_beta);
    }
    fn("score.bilinear", score_w);
    fn("score.mlp_w1", mlp_w1);
    fn("score.mlp_b1", mlp_b1);
    fn("score.mlp_w2", mlp_w2);
    fn("score.mlp_b2", mlp_b2);
}

std::vector<std::pair<std::string, nn::Tensor>> ModelParams::named_params() {
    std::vector<std::pair<std::string, nn::Tensor>> out;
    for_each_param([&](const std::string& name, nn::Tensor& t) { out.emplace_back(name, t); });
    return out;
}

void ModelParams::zero_grad() {
    for_each_param([](const std::string&, nn::Tensor& t) { t.zero_grad(); });
}

// ---- checkpoint ----

namespace {

void put_u64(std::ofstream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; i++) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint64_t get_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"stride", c.stride},       {"n_in", c.n_in},
            {"n_feat", c.n_feat},       {"gnn_layers", c.gnn_layers},
            {"gnn_dim", c.gnn_dim},     {"support", to_string(c.support)},
            {"k", c.k},                 {"scorer", to_string(c.scorer)},
            {"use_raw_features", c.use_raw_features},
            {"embed_coords", c.embed_coords}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.stride = j.at("stride").get<int>();
    c.n_in = j.at("n_in").get<int>();
    c.n_feat = j.at("n_feat").get<int>();
    c.gnn_layers = j.at("gnn_layers").get<int>();
    c.gnn_dim = j.at("gnn_dim").get<int>();
    c.support = support_from_string(j.at("support").get<std::string>());
    c.k = j.at("k").get<int>();
    c.scorer = scorer_from_string(j.at("scorer").get<std::string>());
    c.use_raw_features = j.at("use_raw_features").get<bool>();
    c.embed_coords = j.at("embed_coords").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(ModelParams& params, const std::string& path) {
    nlohmann::json manifest;
    manifest["config"] = config_to_json(params.config);
    manifest["params"] = nlohmann::json::array();
    params.for_each_param([&](const std::string& name, nn::Tensor& t) {
        manifest["params"].push_back({{"name", name}, {"shape", t.shape()}});
    });
    manifest["bn_states"] = nlohmann::json::array();
    for (std::size_t l = 0; l < params.gnn.size(); l++) {
        manifest["bn_states"].push_back({{"name", "gnn." + std::to_string(l)},
                                         {"channels", params.gnn[l].bn_gamma.dim(0)}});
    }
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write("ATLC", 4);
    put_u64(out, 1);  // version
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    params.for_each_param([&](const std::string&, nn::Tensor& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(sizeof(double) * t.size()));
    });
    for (auto& layer : params.gnn) {
        out.write(reinterpret_cast<const char*>(layer.bn_state.running_mean.data()),
                  static_cast<std::streamsize>(sizeof(double) * layer.bn_state.running_mean.size()));
        out.write(reinterpret_cast<const char*>(layer.bn_state.running_var.data()),
                  static_cast<std::streamsize>(sizeof(double) * layer.bn_state.running_var.size()));
    }
    if (!out) throw std::runtime_error("write failure: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ATLC", 4) != 0) {
        throw std::runtime_error(path + ": bad magic, expected ATLC");
    }
    const std::uint64_t version = get_u64(in);
    if (version != 1) throw std::runtime_error(path + ": unsupported checkpoint version");
    const std::uint64_t len = get_u64(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error(path + ": truncated manifest");

    nlohmann::json manifest = nlohmann::json::parse(text);
    ModelParams params = ModelParams::init(config_from_json(manifest.at("config")), 0);

    std::size_t idx = 0;
    const auto& plist = manifest.at("params");
    params.for_each_param([&](const std::string& name, nn::Tensor& t) {
        if (idx >= plist.size() || plist[idx].at("name").get<std::string>() != name ||
            plist[idx].at("shape").get<std::vector<int>>() != t.shape()) {
            throw std::runtime_error(path + ": manifest mismatch at parameter " + name);
        }
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * t.size()));
        idx++;
    });
    for (auto& layer : params.gnn) {
        in.read(reinterpret_cast<char*>(layer.bn_state.running_mean.data()),
                static_cast<std::streamsize>(sizeof(double) * layer.bn_state.running_mean.size()));
        in.read(reinterpret_cast<char*>(layer.bn_state.running_var.data()),
                static_cast<std::streamsize>(sizeof(double) * layer.bn_state.running_var.size()));
    }
    if (!in) throw std::runtime_error(path + ": truncated data section");
    return params;
}

// ---- forward passes ----

nn::Tensor image_to_tensor(const SceneImage& im) {
    nn::Tensor t = nn::Tensor::zeros({im.channels, im.height, im.width});
    for (std::size_t i = 0; i < im.values.size(); i++) t.data()[i] = im.values[i];
    return t;
}

nn::Tensor stem_forward(const nn::Tensor& image, ModelParams& params) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw std::runtime_error("stem: expected [3, H, W] input");
    }
    if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
        throw std::runtime_error("stem: image dims must be divisible by 32");
    }
    nn::Tensor x = image;
    for (auto& layer : params.stem) {
        // conv2d wants an integral output extent; a stride-2 3x3 with pad 1
        // needs odd input dims, so drop one boundary row/col first. The
        // result is exactly half the (even) block input.
        x = nn::crop2d(x, x.dim(1) - 1, x.dim(2) - 1);
        x = nn::relu(nn::conv2d(x, layer.w, layer.b, 2, 1));
    }
    return x;
}

namespace {

nn::Tensor branch_forward(const nn::Tensor& fmap, std::vector<ConvLayer>& branch) {
    nn::Tensor x = nn::relu(nn::conv2d(fmap, branch[0].w, branch[0].b, 1, 1));
    x = nn::relu(nn::conv2d(x, branch[1].w, branch[1].b, 1, 1));
    return nn::conv2d(x, branch[2].w, branch[2].b, 1, 1);
}

}  // namespace

HeadsOut heads_forward(const nn::Tensor& fmap, ModelParams& params) {
    const int H = fmap.dim(1), W = fmap.dim(2);
    HeadsOut out;
    out.junction = nn::reshape(nn::sigmoid(branch_forward(fmap, params.jun_branch)), {H, W});
    out.offsets = nn::scale(nn::tanh(nn::chw_to_hwc(branch_forward(fmap, params.off_branch))), 0.5);
    out.nodefeat = branch_forward(fmap, params.feat_branch);
    return out;
}

NodeBatch gather_nodes(const HeadsOut& heads, const nn::Tensor& fmap,
                       const std::vector<int>& cells, const ModelConfig& config,
                       int image_w, int image_h) {
    NodeBatch batch;
    batch.cells = cells;
    if (cells.empty()) return batch;
    const int H = heads.junction.dim(0), W = heads.junction.dim(1);

    // p_j = ((u + X_j + 0.5) / W) * W_I, same for y
    nn::Tensor off_rows =
        nn::gather_rows(nn::reshape(heads.offsets, {H * W, 2}), cells);
    std::vector<double> mul(cells.size() * 2), add(cells.size() * 2);
    for (std::size_t r = 0; r < cells.size(); r++) {
        const int cx = cells[r] % W;
        const int cy = cells[r] / W;
        batch.cell_xy.emplace_back(cx, cy);
        mul[2 * r] = static_cast<double>(image_w) / W;
        mul[2 * r + 1] = static_cast<double>(image_h) / H;
        add[2 * r] = (cx + 0.5) * image_w / W;
        add[2 * r + 1] = (cy + 0.5) * image_h / H;
    }
    nn::Tensor coords = nn::affine_const(off_rows, mul, add);
    for (std::size_t r = 0; r < cells.size(); r++) {
        batch.coords.push_back({coords.data()[2 * r], coords.data()[2 * r + 1]});
    }

    nn::Tensor feats = config.use_raw_features ? nn::gather_cells(fmap, cells)
                                               : nn::gather_cells(heads.nodefeat, cells);
    if (config.embed_coords) {
        std::vector<double> nmul(cells.size() * 2), nadd(cells.size() * 2, 0.0);
        for (std::size_t r = 0; r < cells.size(); r++) {
            nmul[2 * r] = 1.0 / image_w;
            nmul[2 * r + 1] = 1.0 / image_h;
        }
        feats = nn::concat_cols(feats, nn::affine_const(coords, nmul, nadd));
    }
    batch.feats = feats;
    return batch;
}

NodeBatch select_nodes(const HeadsOut& heads, const nn::Tensor& fmap, double j_thr,
                       const ModelConfig& config, int image_w, int image_h) {
    std::vector<int> cells;
    for (int c = 0; c < heads.junction.size(); c++) {
        if (heads.junction.data()[c] > j_thr) cells.push_back(c);
    }
    return gather_nodes(heads, fmap, cells, config, image_w, image_h);
}

std::vector<std::pair<int, int>> build_support_graph(const nn::Tensor& feats,
                                                     const ModelConfig& config) {
    const int n = feats.dim(0);
    std::vector<std::pair<int, int>> edges;
    if (n == 1) {
        edges.emplace_back(0, 0);  // self-message keeps single-node scenes alive
        return edges;
    }
    if (config.support == Support::complete) {
        for (int i = 0; i < n; i++) {
            for (int j = 0; j < n; j++) {
                if (i != j) edges.emplace_back(i, j);
            }
        }
        return edges;
    }
    const int k = std::min(config.k, n - 1);
    const int d = feats.dim(1);
    const double* fd = feats.data();
    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; i++) {
        for (int j = 0; j < n; j++) {
            double d2 = 0.0;
            const double* fi = fd + static_cast<std::size_t>(i) * d;
            const double* fj = fd + static_cast<std::size_t>(j) * d;
            for (int c = 0; c < d; c++) {
                const double diff = fi[c] - fj[c];
                d2 += diff * diff;
            }
            dist[j] = {d2, j};
        }
        dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
        std::sort(dist.begin(), dist.end());
        for (int r = 0; r < k; r++) edges.emplace_back(i, dist[r].second);
    }
    return edges;
}

nn::Tensor edgeconv_layer(const nn::Tensor& feats,
                          const std::vector<std::pair<int, int>>& edges, GnnLayer& layer,
                          nn::BnMode mode) {
    const int n = feats.dim(0);
    // group messages by destination: sort by (dst, src) for deterministic
    // segment layout and tie-breaking
    std::vector<std::pair<int, int>> sorted = edges;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> dst(sorted.size()), src(sorted.size());
    std::vector<int> seg_offsets(n + 1, 0);
    for (std::size_t e = 0; e < sorted.size(); e++) {
        dst[e] = sorted[e].first;
        src[e] = sorted[e].second;
        seg_offsets[dst[e] + 1]++;
    }
    for (int i = 0; i < n; i++) seg_offsets[i + 1] += seg_offsets[i];

    nn::Tensor x_i = nn::gather_rows(feats, dst);
    nn::Tensor x_j = nn::gather_rows(feats, src);
    nn::Tensor msg = nn::relu(
        nn::linear(nn::concat_cols(x_i, nn::sub(x_j, x_i)), layer.w, layer.b));
    nn::Tensor agg = nn::max_reduce_segments(msg, seg_offsets);
    return nn::batchnorm(agg, layer.bn_gamma, layer.bn_beta, layer.bn_state, mode,
                         layer.bn_eps);
}

nn::Tensor gnn_forward(const NodeBatch& batch, ModelParams& params, nn::BnMode mode) {
    nn::Tensor x = batch.feats;
    std::vector<std::pair<int, int>> support;
    if (params.config.support != Support::knn_dynamic) {
        support = build_support_graph(x, params.config);
    }
    for (auto& layer : params.gnn) {
        if (params.config.support == Support::knn_dynamic) {
            support = build_support_graph(x, params.config);
        }
        x = edgeconv_layer(x, support, layer, mode);
    }
    return x;
}

std::vector<std::pair<int, int>> all_pairs(int n) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; i++) {
        for (int j = i + 1; j < n; j++) pairs.emplace_back(i, j);
    }
    return pairs;
}

EdgeScores score_edges(const nn::Tensor& feats, const std::vector<std::pair<int, int>>& pairs,
                       ModelParams& params) {
    EdgeScores out;
    out.pairs = pairs;
    if (pairs.empty()) return out;
    if (feats.dim(0) < 2) throw std::runtime_error("score_edges: need at least 2 nodes");

    nn::Tensor fwd, rev;
    if (params.config.scorer == Scorer::bilinear) {
        std::vector<std::pair<int, int>> swapped;
        swapped.reserve(pairs.size());
        for (const auto& [i, j] : pairs) swapped.emplace_back(j, i);
        fwd = nn::bilinear_pairs(feats, params.score_w, pairs);
        rev = nn::bilinear_pairs(feats, params.score_w, swapped);
    } else {
        std::vector<int> first, second;
        first.reserve(pairs.size());
        second.reserve(pairs.size());
        for (const auto& [i, j] : pairs) {
            first.push_back(i);
            second.push_back(j);
        }
        auto mlp = [&](const std::vector<int>& a, const std::vector<int>& b) {
            nn::Tensor cat = nn::concat_cols(nn::gather_rows(feats, a), nn::gather_rows(feats, b));
            nn::Tensor hidden = nn::relu(nn::linear(cat, params.mlp_w1, params.mlp_b1));
            return nn::reshape(nn::linear(hidden, params.mlp_w2, params.mlp_b2),
                               {static_cast<int>(a.size())});
        };
        fwd = mlp(first, second);
        rev = mlp(second, first);
    }
    out.probs = nn::sigmoid(nn::scale(nn::add(fwd, rev), 0.5));
    return out;
}

ForwardOut model_forward(const nn::Tensor& image, ModelParams& params, double j_thr,
                         nn::BnMode mode,
                         const std::optional<std::vector<int>>& teacher_cells) {
    params.config.validate();
    const int image_h = image.dim(1), image_w = image.dim(2);
    ForwardOut out;
    nn::Tensor fmap = stem_forward(image, params);
    out.heads = heads_forward(fmap, params);
    out.batch = teacher_cells
                    ? gather_nodes(out.heads, fmap, *teacher_cells, params.config, image_w, image_h)
                    : select_nodes(out.heads, fmap, j_thr, params.config, image_w, image_h);
    if (out.batch.size() == 0) return out;
    out.gnn_out = gnn_forward(out.batch, params, mode);
    if (out.batch.size() >= 2) {
        out.scores = score_edges(out.gnn_out, all_pairs(out.batch.size()), params);
    }
    return out;
}

}  // namespace atlas::model
