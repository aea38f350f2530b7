#include "atlas/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "atlas/infer.hpp"
#include "atlas/metrics.hpp"
#include "atlas/model.hpp"
#include "atlas/synth.hpp"
#include "atlas/targets.hpp"
#include "atlas/train.hpp"

namespace atlas::cli {

namespace {

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

// --config file: plain key=value lines, '#' comments. Entries become
// --key=value arguments unless the flag was given explicitly, so the
// command line always overrides the file.
std::vector<std::string> apply_config_file(const std::vector<std::string>& args) {
    std::string config_path;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < args.size(); i++) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw std::runtime_error("--config needs a file path");
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (config_path.empty()) return out;

    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + config_path);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        const std::string flag = "--" + key;
        bool given = false;
        for (const auto& a : out) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) {
                given = true;
                break;
            }
        }
        if (!given) out.push_back(flag + "=" + value);
    }
    return out;
}

void add_model_flags(CLI::App* cmd, model::ModelConfig& mc, std::string& support,
                     std::string& scorer) {
    cmd->add_option("--n-in", mc.n_in, "Stem output channels")->capture_default_str();
    cmd->add_option("--n-feat", mc.n_feat, "Head branch channels")->capture_default_str();
    cmd->add_option("--gnn-layers", mc.gnn_layers, "Message-passing layers")->capture_default_str();
    cmd->add_option("--gnn-dim", mc.gnn_dim, "GNN layer width")->capture_default_str();
    cmd->add_option("--support", support, "Support graph: complete|knn_static|knn_dynamic")
        ->capture_default_str();
    cmd->add_option("--k", mc.k, "Neighbors for k-NN support")->capture_default_str();
    cmd->add_option("--scorer", scorer, "Edge scorer: mlp|bilinear")->capture_default_str();
    cmd->add_flag("--raw-features", mc.use_raw_features, "Feed stem features to the GNN directly");
    cmd->add_flag("--no-embed-coords", "Do not append normalized coordinates to node embeddings");
}

void finish_model_flags(CLI::App* cmd, model::ModelConfig& mc, const std::string& support,
                        const std::string& scorer) {
    mc.support = model::support_from_string(support);
    mc.scorer = model::scorer_from_string(scorer);
    if (cmd->count("--no-embed-coords") > 0) mc.embed_coords = false;
}

void render_overlay(const SceneImage& image, const RoadGraph& graph, const std::string& path) {
    SceneImage out = image;
    const RasterMask mask = rasterize(graph, image.width, image.height, 2.0);
    for (int y = 0; y < image.height; y++) {
        for (int x = 0; x < image.width; x++) {
            if (!mask.at(x, y)) continue;
            out.at(0, y, x) = 1.0f;  // roads in red
            if (out.channels > 1) out.at(1, y, x) = 0.0f;
            if (out.channels > 2) out.at(2, y, x) = 0.0f;
        }
    }
    write_atlg(out, path);
}

int run_impl(const std::vector<std::string>& args) {
    CLI::App app{"atlas: single-shot road-graph extraction pipeline"};
    app.require_subcommand(1);

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "Generate synthetic scene pairs");
    synth::SceneConfig sc;
    int gen_count = 8, gen_size = 256;
    std::string gen_out;
    gen->add_option("--count", gen_count, "Number of scenes")->capture_default_str();
    gen->add_option("--size", gen_size, "Square scene size in pixels")->capture_default_str();
    gen->add_option("--seed", sc.seed, "Base seed")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--spacing", sc.lattice_spacing, "Lattice spacing")->capture_default_str();
    gen->add_option("--jitter", sc.jitter, "Node jitter")->capture_default_str();
    gen->add_option("--drop", sc.drop_prob, "Edge drop probability")->capture_default_str();
    gen->add_option("--curve", sc.curve_amplitude, "Turn point amplitude")->capture_default_str();
    gen->add_option("--noise", sc.noise_level, "Pixel noise level")->capture_default_str();
    gen->add_option("--road-width", sc.road_width, "Stroke width")->capture_default_str();
    int gen_jobs = 1;
    gen->add_option("--jobs", gen_jobs, "Concurrent scene workers")->capture_default_str();

    // ---- encode ----
    auto* enc = app.add_subcommand("encode", "Encode a graph into grid targets");
    std::string enc_graph, enc_out;
    int enc_stride = 32, enc_w = 0, enc_h = 0;
    enc->add_option("--graph", enc_graph, "Input graph file")->required();
    enc->add_option("--out", enc_out, "Output directory")->required();
    enc->add_option("--stride", enc_stride, "Grid stride")->capture_default_str();
    enc->add_option("--width", enc_w, "Canvas width (defaults to the graph's size)");
    enc->add_option("--height", enc_h, "Canvas height (defaults to the graph's size)");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Train a model on a scene directory");
    train::TrainConfig tc;
    model::ModelConfig tr_mc;
    std::string tr_data, tr_support = "complete", tr_scorer = "mlp", tr_log;
    tr->add_option("--data", tr_data, "Scene directory")->required();
    tr->add_option("--out", tc.out_dir, "Checkpoint directory")->required();
    tr->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
    tr->add_option("--batch", tc.batch_size, "Scenes per optimizer step")->capture_default_str();
    tr->add_option("--lr", tc.lr, "Adam learning rate")->capture_default_str();
    tr->add_option("--train-jthr", tc.train_jthr, "Junction threshold during training")
        ->capture_default_str();
    tr->add_option("--crop", tc.crop, "Random crop size")->capture_default_str();
    tr->add_flag("--no-flips", "Disable flip augmentation");
    tr->add_option("--seed", tc.seed, "Training seed")->capture_default_str();
    tr->add_option("--w-jun", tc.w_jun, "Junction loss weight")->capture_default_str();
    tr->add_option("--w-off", tc.w_off, "Offset loss weight")->capture_default_str();
    tr->add_option("--w-edge", tc.w_edge, "Edge loss weight")->capture_default_str();
    tr->add_flag("--off-mask-pred", tc.offset_mask_predicted,
                 "Mask the offset loss by predicted junctions instead of ground truth");
    tr->add_option("--ckpt-every", tc.checkpoint_every, "Checkpoint cadence")->capture_default_str();
    tr->add_option("--log", tr_log, "Write the per-epoch loss table here");
    add_model_flags(tr, tr_mc, tr_support, tr_scorer);

    // ---- infer ----
    auto* inf = app.add_subcommand("infer", "Extract a road graph from an image");
    infer::InferConfig ic;
    std::string inf_model, inf_image, inf_out, inf_render;
    bool have_overlap = false;
    inf->add_option("--model", inf_model, "Checkpoint file")->required();
    inf->add_option("--image", inf_image, "Input ATLG image")->required();
    inf->add_option("--out", inf_out, "Output graph file")->required();
    inf->add_option("--jthr", ic.j_thr, "Junction threshold")->capture_default_str();
    inf->add_option("--ethr", ic.edge_thr, "Edge threshold")->capture_default_str();
    inf->add_option("--window", ic.window, "Sliding window size")->capture_default_str();
    inf->add_option("--overlap", ic.overlap_stride, "Tile stride (default window/2)")
        ->each([&](const std::string&) { have_overlap = true; });
    inf->add_option("--merge-radius", ic.merge_radius, "Node dedup radius")->capture_default_str();
    inf->add_option("--jobs", ic.jobs, "Concurrent tiles")->capture_default_str();
    inf->add_option("--render", inf_render, "Also write a graph-over-image raster dump");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Evaluate predictions against ground truth");
    metrics::MetricConfig mc_eval;
    std::string ev_pred, ev_gt, ev_report;
    ev->add_option("--pred", ev_pred, "Prediction directory")->required();
    ev->add_option("--gt", ev_gt, "Ground-truth directory")->required();
    ev->add_option("--report", ev_report, "Write the CSV report here");
    ev->add_option("--line-width", mc_eval.line_width, "Rasterization width")->capture_default_str();
    ev->add_option("--buffer", mc_eval.pf1_buffer, "Pixel match buffer")->capture_default_str();
    ev->add_option("--jf1-radius", mc_eval.jf1_radius, "Junction match radius")
        ->capture_default_str();
    ev->add_option("--snap-radius", mc_eval.apls_snap, "APLS snap radius")->capture_default_str();
    int ev_jobs = 1;
    ev->add_option("--jobs", ev_jobs, "Concurrent scene workers")->capture_default_str();

    // ---- ratio ----
    auto* ra = app.add_subcommand("ratio", "Points-per-positive-cell at resize ratios");
    std::string ra_data, ra_ratios = "0.25,0.5,0.75,1.0", ra_out;
    int ra_stride = 32;
    ra->add_option("--data", ra_data, "Scene directory")->required();
    ra->add_option("--ratios", ra_ratios, "Comma-separated resize ratios")->capture_default_str();
    ra->add_option("--stride", ra_stride, "Grid stride")->capture_default_str();
    ra->add_option("--out", ra_out, "Write the CSV here (default stdout)");

    // ---- sweep ----
    auto* sw = app.add_subcommand("sweep", "Metrics across edge thresholds");
    infer::InferConfig sw_ic;
    metrics::MetricConfig sw_mc;
    std::string sw_data, sw_model, sw_thrs = "0.0,0.1,0.2,0.3,0.4,0.5", sw_report;
    sw->add_option("--data", sw_data, "Scene directory")->required();
    sw->add_option("--model", sw_model, "Checkpoint file")->required();
    sw->add_option("--thrs", sw_thrs, "Comma-separated edge thresholds")->capture_default_str();
    sw->add_option("--report", sw_report, "Write the CSV here (default stdout)");
    sw->add_option("--jthr", sw_ic.j_thr, "Junction threshold")->capture_default_str();
    sw->add_option("--window", sw_ic.window, "Sliding window size")->capture_default_str();
    sw->add_option("--jobs", sw_ic.jobs, "Concurrent tiles")->capture_default_str();

    std::string config_doc;
    for (CLI::App* sub : {gen, enc, tr, inf, ev, ra, sw}) {
        sub->add_option("--config", config_doc,
                        "key=value config file; command-line flags override");
    }

    const std::vector<std::string> merged = apply_config_file(args);
    std::vector<std::string> reversed(merged.rbegin(), merged.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            return app.exit(e);
        }
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 1;
    }

    if (gen->parsed()) {
        sc.width = gen_size;
        sc.height = gen_size;
        synth::make_dataset(sc, gen_count, gen_out, gen_jobs);
        std::printf("wrote %d scenes to %s\n", gen_count, gen_out.c_str());
        return 0;
    }
    if (enc->parsed()) {
        RoadGraph g = load_graph(enc_graph);
        const int w = enc_w > 0 ? enc_w : g.width;
        const int h = enc_h > 0 ? enc_h : g.height;
        if (w <= 0 || h <= 0) {
            std::cerr << "encode: graph has no size; pass --width/--height\n";
            return 1;
        }
        const grid::GridTargets t = grid::encode_targets(g, w, h, enc_stride);
        std::filesystem::create_directories(enc_out);
        SceneImage jun = SceneImage::make(t.grid_w, t.grid_h, 1);
        SceneImage off = SceneImage::make(t.grid_w, t.grid_h, 2);
        for (int c = 0; c < t.grid_w * t.grid_h; c++) {
            jun.values[c] = static_cast<float>(t.junction[c]);
            off.values[c] = static_cast<float>(t.offsets[2 * c]);
            off.values[t.grid_w * t.grid_h + c] = static_cast<float>(t.offsets[2 * c + 1]);
        }
        const auto base = std::filesystem::path(enc_out);
        write_atlg(jun, (base / "junction.img").string());
        write_atlg(off, (base / "offsets.img").string());
        save_graph(t.merged, (base / "merged.json").string());
        std::printf("encoded %dx%d grid, %zu merged nodes\n", t.grid_w, t.grid_h,
                    t.merged.nodes.size());
        return 0;
    }
    if (tr->parsed()) {
        finish_model_flags(tr, tr_mc, tr_support, tr_scorer);
        if (tr->count("--no-flips") > 0) tc.flips = false;
        auto [params, log] = train::train(tr_data, tc, tr_mc);
        if (!tr_log.empty()) log.write_csv(tr_log);
        if (!log.epochs.empty()) {
            const auto& last = log.epochs.back();
            std::printf("epoch %d: l_total %.6f (jun %.6f off %.6f edge %.6f)\n", last.epoch,
                        last.l_total, last.l_jun, last.l_off, last.l_edge);
        }
        return 0;
    }
    if (inf->parsed()) {
        if (!have_overlap) ic.overlap_stride = ic.window / 2;
        model::ModelParams params = model::load_checkpoint(inf_model);
        const SceneImage image = read_atlg(inf_image);
        // window-sized images degenerate to a single tile plus the node
        // merge; larger ones tile at overlap_stride
        const RoadGraph g = infer::sliding_window_infer(image, params, ic);
        save_graph(g, inf_out);
        if (!inf_render.empty()) render_overlay(image, g, inf_render);
        std::printf("wrote %zu nodes, %zu edges to %s\n", g.nodes.size(), g.edges.size(),
                    inf_out.c_str());
        return 0;
    }
    if (ev->parsed()) {
        const metrics::EvalReport rep = metrics::evaluate(ev_pred, ev_gt, mc_eval, ev_jobs);
        if (!ev_report.empty()) metrics::write_report_csv(rep, ev_report);
        std::printf("MACRO p_f1 %.4f j_f1 %.4f apls %.4f over %zu scenes\n", rep.macro.p_f1,
                    rep.macro.j_f1, rep.macro.apls, rep.scenes.size());
        return 0;
    }
    if (ra->parsed()) {
        std::vector<RoadGraph> graphs;
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(ra_data)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) graphs.push_back(load_graph(f.string()));
        const auto rows = grid::ratio_analysis(graphs, ra_stride, parse_list(ra_ratios));
        std::FILE* out = ra_out.empty() ? stdout : std::fopen(ra_out.c_str(), "w");
        if (!out) throw std::runtime_error("cannot open " + ra_out);
        std::fprintf(out, "ratio,avg_points_per_positive_cell\n");
        for (const auto& r : rows) {
            std::fprintf(out, "%.4f,%.6f\n", r.ratio, r.avg_points_per_positive_cell);
        }
        if (!ra_out.empty()) std::fclose(out);
        return 0;
    }
    if (sw->parsed()) {
        model::ModelParams params = model::load_checkpoint(sw_model);
        const auto rows =
            infer::threshold_sweep(sw_data, params, parse_list(sw_thrs), sw_ic, sw_mc);
        if (!sw_report.empty()) {
            infer::write_sweep_csv(rows, sw_report);
        } else {
            std::printf("threshold,p_f1,j_f1,apls,nodes,edges\n");
            for (const auto& r : rows) {
                std::printf("%.3f,%.6f,%.6f,%.6f,%.2f,%.2f\n", r.threshold, r.p_f1, r.j_f1,
                            r.apls, r.nodes, r.edges);
            }
        }
        return 0;
    }
    return 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    try {
        return run_impl(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace atlas::cli
