// Command-line driver for the cascade: corpus generation, per-stage
// training and inference, evaluation and cross-validation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cseg/config.hpp"
#include "cseg/crossval.hpp"
#include "cseg/io.hpp"
#include "cseg/localization.hpp"
#include "cseg/metrics.hpp"
#include "cseg/parallel.hpp"
#include "cseg/pipeline.hpp"
#include "cseg/regforest.hpp"
#include "cseg/seed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cseg;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::string out = "out";
    std::string config;
    bool quiet = false;
};

Globals g;

RunConfig run_config() {
    RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    cfg.phantom.seed = cfg.seed;
    cfg.crossval.seed = cfg.seed;
    return cfg;
}

Logger logger() {
    if (g.quiet) return {};
    return [](std::string_view msg) { std::fprintf(stderr, "%.*s\n", static_cast<int>(msg.size()), msg.data()); };
}

std::string out_path(const std::string& name) {
    fs::create_directories(g.out);
    return (fs::path(g.out) / name).string();
}

// Hashes every file under the output directory except the manifest itself.
void write_dir_manifest(const std::string& command, const json& extra = json::object()) {
    if (!fs::exists(g.out)) return;
    const auto manifest_path = fs::path(g.out) / "manifest.json";
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(g.out))
        if (e.is_regular_file() && e.path() != manifest_path) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    auto meta = extra;
    meta["command"] = command;
    write_json(manifest_path.string(), make_manifest(g.out, files, meta));
}

std::vector<const Case*> pointers(const std::vector<Case>& cases) {
    std::vector<const Case*> out;
    for (const auto& c : cases) out.push_back(&c);
    return out;
}

// Comma-separated case ids; empty keeps every case.
std::vector<Case> select_cases(std::vector<Case> cases, const std::string& ids) {
    if (ids.empty()) return cases;
    std::vector<Case> out;
    std::stringstream ss(ids);
    for (std::string id; std::getline(ss, id, ',');) {
        const auto it = std::find_if(cases.begin(), cases.end(), [&](const Case& c) { return c.id == id; });
        require(it != cases.end(), "unknown case id '" + id + "'");
        out.push_back(*it);
    }
    return out;
}

json metrics_json(const LabelVolume& pred, const LabelVolume& gt) {
    const auto o = overlap_metrics(pred, gt);
    json j{{"dsc", o.dsc}, {"jaccard", o.jaccard}, {"hausdorff_mm", nullptr}, {"avgdist_mm", nullptr}};
    try {
        const auto s = surface_distances(pred, gt);
        j["hausdorff_mm"] = s.hausdorff_mm;
        j["avgdist_mm"] = s.avgdist_mm;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedMetric) throw;
    }
    return j;
}

BBox3 read_box(const std::string& path, const Dims& dims) {
    if (path.empty()) return full_box(dims);
    return box_from_json(read_json(path), dims);
}

json cmd_phantom(int n) {
    auto cfg = run_config();
    if (n > 0) cfg.cases = n;
    require(cfg.cases >= 1, "--n must be >= 1");
    const auto corpus = generate_corpus(cfg.phantom, static_cast<std::size_t>(cfg.cases));
    json phantom = cfg.phantom;
    const auto manifest = store_corpus(g.out, corpus, {{"command", "phantom"}, {"phantom", phantom}});
    return {{"cases", corpus.size()}, {"out", g.out}, {"files", manifest["files"].size()}};
}

json cmd_train_hnn(const std::string& corpus_dir, const std::string& view, int stage, const std::string& target,
                   const std::string& ids) {
    const auto cfg = run_config();
    const auto& pc = cfg.crossval.pipeline;
    const auto plane = parse_view_plane(view);
    require(stage == 1 || stage == 2, "--stage must be 1 or 2");
    require(target == "interior" || target == "boundary", "--target must be interior or boundary");
    require(target == "interior" || (stage == 2 && plane == ViewPlane::Axial),
            "the boundary net is a stage-2 axial net");
    const auto cases = select_cases(load_corpus(corpus_dir), ids);
    const auto ptrs = pointers(cases);
    const auto p = static_cast<std::uint64_t>(plane);
    std::string path;
    hnn::HnnParams params;
    if (stage == 1) {
        params = train_net(stage1_samples(ptrs, plane, pc), pc.stage1_net, derive_seed(cfg.seed, 10 + p), logger(),
                           "stage1 " + view);
        path = stage1_net_path(g.out, plane);
        fs::create_directories(fs::path(path).parent_path());
        hnn::save_checkpoint(path, pc.stage1_net, params);
    } else if (target == "interior") {
        params = train_net(stage2_samples(ptrs, plane, Target::Interior, pc), pc.stage2_net,
                           derive_seed(cfg.seed, 20 + p), logger(), "stage2 " + view);
        path = stage2_net_path(g.out, plane);
        fs::create_directories(fs::path(path).parent_path());
        hnn::save_checkpoint(path, pc.stage2_net, params);
    } else {
        params = train_net(stage2_samples(ptrs, plane, Target::Boundary, pc), pc.boundary_net,
                           derive_seed(cfg.seed, 30), logger(), "boundary axial");
        path = boundary_net_path(g.out);
        fs::create_directories(fs::path(path).parent_path());
        hnn::save_checkpoint(path, pc.boundary_net, params);
    }
    write_dir_manifest("train-hnn");
    return {{"checkpoint", path}, {"parameters", params.parameter_count()}, {"cases", cases.size()}};
}

json cmd_train_rf(const std::string& corpus_dir, const std::string& models, const std::string& ids) {
    const auto cfg = run_config();
    const auto cases = select_cases(load_corpus(corpus_dir), ids);
    auto m = load_stage2(models, false);
    fit_aggregation(m, pointers(cases), cfg.crossval.pipeline, cfg.seed, logger());
    const auto files = save_aggregation(g.out, m);
    write_dir_manifest("train-rf");
    return {{"files", files}, {"rf_threshold", m.rf_threshold}, {"pooled_threshold", m.pooled_threshold}};
}

json cmd_infer(const std::string& model, const std::string& ct_path, const std::string& view,
               const std::string& box_path, bool sides) {
    const auto cfg = run_config();
    const auto ct = load_volume_as<std::int16_t>(ct_path);
    const auto box = read_box(box_path, ct.dims());
    const auto input = crop(prepare_input(ct, cfg.crossval.pipeline), box);
    const auto ckpt = hnn::load_checkpoint(model);
    const auto pred = predict_volume_all(ckpt.params, input, parse_view_plane(view));
    std::vector<std::string> files;
    for (const auto& f : store_volume(pred.fused, out_path("prob"))) files.push_back(f);
    if (sides)
        for (std::size_t m = 0; m < pred.sides.size(); ++m)
            for (const auto& f : store_volume(pred.sides[m], out_path("side" + std::to_string(m + 1))))
                files.push_back(f);
    write_json(out_path("box.json"), box_to_json(box));
    write_dir_manifest("infer");
    return {{"files", files}, {"box", box_to_json(box)}};
}

json cmd_fuse(const std::string& mode_name, const std::vector<std::string>& inputs) {
    const auto mode = PoolingMode::parse(mode_name);
    std::vector<ProbVolume> maps;
    for (const auto& p : inputs) maps.push_back(load_volume_as<float>(p));
    const auto pooled = pool_views(maps, mode);
    const auto files = store_volume(pooled, out_path("pooled"));
    write_dir_manifest("fuse", {{"mode", mode.name()}});
    return {{"mode", mode.name()}, {"files", files}};
}

json cmd_localize(const std::string& prob_path, std::optional<double> threshold, std::optional<int> pad,
                  const std::string& gt_path) {
    const auto cfg = run_config();
    const auto& pc = cfg.crossval.pipeline;
    const auto prob = load_volume_as<float>(prob_path);
    BBox3 box;
    bool fallback_full = false, erosion_fallback = false;
    try {
        const auto c = candidate_region(prob, static_cast<float>(threshold.value_or(pc.candidate_threshold)),
                                        pad.value_or(pc.candidate_pad));
        box = c.box;
        erosion_fallback = c.erosion_fallback;
        store_volume(c.mask, out_path("candidate"));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoCandidate) throw;
        fallback_full = true;
        box = full_box(prob.dims(), "fallback");
    }
    json result{{"box", box_to_json(box)}, {"fallback_full", fallback_full}, {"erosion_fallback", erosion_fallback}};
    if (!gt_path.empty()) {
        const auto s = bbox_stats(box, load_volume_as<std::uint8_t>(gt_path));
        result["recall"] = s.recall;
        result["volume_reduction"] = s.volume_reduction;
    }
    write_json(out_path("box.json"), box_to_json(box));
    write_json(out_path("localize.json"), result);
    write_dir_manifest("localize");
    return result;
}

json cmd_superpixels(const std::string& models, const std::string& ct_path, const std::string& box_path,
                     const std::string& gt_path) {
    const auto cfg = run_config();
    const auto& pc = cfg.crossval.pipeline;
    const auto ct = load_volume_as<std::int16_t>(ct_path);
    const auto box = read_box(box_path, ct.dims());
    const auto input = crop(prepare_input(ct, pc), box);
    const auto boundary = hnn::load_checkpoint(boundary_net_path(models));
    const auto pred = predict_volume_all(boundary.params, input, ViewPlane::Axial);
    const auto scales = boundary_scales(pred);
    const auto sp = build_superpixels(box, scales, pc.superpixels);

    // Per-slice labels as i16 volumes over the region.
    const auto e = box.extent();
    HuVolume level1(e, ct.spacing()), level2(e, ct.spacing());
    json slices = json::array();
    for (int z = 0; z < e.z; ++z) {
        const auto& h = sp.slices[static_cast<std::size_t>(z)];
        require(h.level1_count <= 32767, "too many superpixels for an i16 label volume");
        for (int y = 0; y < e.y; ++y)
            for (int x = 0; x < e.x; ++x) {
                level1(x, y, z) = static_cast<std::int16_t>(h.level1(x, y));
                level2(x, y, z) = static_cast<std::int16_t>(h.level2(x, y));
            }
        slices.push_back({{"z", z},
                          {"level1", h.level1_count},
                          {"level2", h.level2_count},
                          {"level2_threshold", h.level2_threshold},
                          {"partition", is_partition(h.level1, h.level1_count) && is_partition(h.level2, h.level2_count)}});
    }
    store_volume(level1, out_path("level1"));
    store_volume(level2, out_path("level2"));
    for (std::size_t m = 0; m < scales.size(); ++m) store_volume(scales[m], out_path("boundary" + std::to_string(m + 1)));
    json result{{"box", box_to_json(box)}, {"proposals", sp.proposals.size()}, {"slices", slices}};
    if (!gt_path.empty()) result["oracle_dsc"] = optimal_assignment(sp, load_volume_as<std::uint8_t>(gt_path)).dsc;
    write_json(out_path("superpixels.json"), result);
    write_dir_manifest("superpixels");
    return {{"box", result["box"]}, {"proposals", sp.proposals.size()}, {"slices", e.z},
            {"oracle_dsc", result.value("oracle_dsc", json())}};
}

json cmd_segment(const std::string& variant, const std::string& models, const std::string& ct_path,
                 const std::string& box_path, const std::string& gt_path) {
    require(variant == "meanmax" || variant == "hnn-rf", "--variant must be meanmax or hnn-rf");
    const auto cfg = run_config();
    const auto& pc = cfg.crossval.pipeline;
    const auto ct = load_volume_as<std::int16_t>(ct_path);
    const auto box = read_box(box_path, ct.dims());
    const auto m = load_stage2(models);
    const auto maps = stage2_maps(m, ct, prepare_input(ct, pc), box);
    const auto seg = segment(m, maps, ct.dims(), pc);
    const auto& mask = variant == "meanmax" ? seg.meanmax : seg.rf;
    const auto files = store_volume(mask, out_path("segmentation"));
    json result{{"variant", variant}, {"files", files}, {"voxels", count_nonzero(mask)}};
    if (!gt_path.empty()) result["metrics"] = metrics_json(mask, load_volume_as<std::uint8_t>(gt_path));
    write_dir_manifest("segment", {{"variant", variant}});
    return result;
}

json cmd_evaluate(const std::string& pred_path, const std::string& gt_path, const std::string& box_path) {
    const auto pred = load_volume_as<std::uint8_t>(pred_path);
    const auto gt = load_volume_as<std::uint8_t>(gt_path);
    require(pred.dims() == gt.dims(), "prediction and ground truth dims differ");
    auto result = metrics_json(pred, gt);
    if (!box_path.empty()) {
        const auto s = bbox_stats(read_box(box_path, gt.dims()), gt);
        result["recall"] = s.recall;
        result["volume_reduction"] = s.volume_reduction;
    }
    write_json(out_path("metrics.json"), result);
    write_dir_manifest("evaluate");
    return result;
}

// Writes report.csv and summary.json; returns the summary headline.
json write_crossval(const CrossvalReport& report, const std::string& dir, const json& config) {
    fs::create_directories(dir);
    write_text((fs::path(dir) / "report.csv").string(), report_csv(report));
    auto summary = report_summary(report);
    summary["config"] = config;
    write_json((fs::path(dir) / "summary.json").string(), summary);
    json head{{"rows", report.rows.size()}, {"errors", report.errors.size()}};
    for (const char* v : {"meanmax", "hnn-rf", "oracle"})
        if (summary["variants"].contains(v)) head[std::string(v) + "_dsc"] = summary["variants"][v]["dsc"]["mean"];
    return head;
}

int crossval_status(const CrossvalReport& r) { return r.errors.empty() ? 0 : 1; }

json cmd_crossval(const std::string& corpus_dir, int k, int* status) {
    auto cfg = run_config();
    if (k > 0) cfg.crossval.folds = k;
    const auto corpus = load_corpus(corpus_dir);
    const auto report = crossval_run(corpus, cfg.crossval, logger());
    const auto head = write_crossval(report, g.out, cfg.crossval);
    write_dir_manifest("crossval");
    *status = crossval_status(report);
    return head;
}

json cmd_baseline(const std::string& corpus_dir, const std::string& ct_path, const std::string& model_path,
                  const std::string& save_model, const std::string& gt_path) {
    const auto cfg = run_config();
    LocalizerModel model;
    if (!model_path.empty()) {
        model = load_localizer(model_path);
    } else {
        require(!corpus_dir.empty(), "baseline-locate needs --corpus or --model");
        const auto cases = load_corpus(corpus_dir);
        auto lc = cfg.crossval.baseline;
        lc.seed = derive_seed(cfg.seed, 300);
        model = train_localizer(pointers(cases), lc);
    }
    if (!save_model.empty()) save_localizer(save_model, model);
    json result{{"warnings", model.warnings}};
    if (!ct_path.empty()) {
        const auto ct = load_volume_as<std::int16_t>(ct_path);
        const auto r = predict_bbox(model, ct);
        result["box"] = box_to_json(r.box);
        result["diagnostics"] = {{"grid_points", r.diagnostics.grid_points},
                                 {"accepted", r.diagnostics.accepted},
                                 {"candidates", r.diagnostics.candidates},
                                 {"votes", r.diagnostics.votes},
                                 {"vote_score", r.diagnostics.vote_score}};
        if (!gt_path.empty()) {
            const auto s = bbox_stats(r.box, load_volume_as<std::uint8_t>(gt_path));
            result["recall"] = s.recall;
            result["volume_reduction"] = s.volume_reduction;
        }
        write_json(out_path("box.json"), box_to_json(r.box));
    }
    write_json(out_path("baseline.json"), result);
    write_dir_manifest("baseline-locate");
    return result;
}

json cmd_run(int* status) {
    const auto cfg = run_config();
    const auto corpus_dir = (fs::path(g.out) / "corpus").string();
    const auto corpus = generate_corpus(cfg.phantom, static_cast<std::size_t>(cfg.cases));
    json phantom = cfg.phantom;
    store_corpus(corpus_dir, corpus, {{"command", "run"}, {"phantom", phantom}});
    write_json(out_path("config.json"), cfg);
    const auto report = crossval_run(corpus, cfg.crossval, logger());
    const auto head = write_crossval(report, (fs::path(g.out) / "report").string(), cfg.crossval);
    write_dir_manifest("run");
    *status = crossval_status(report);
    return head;
}

json cmd_overlay(const std::string& ct_path, const std::string& gt_path, const std::string& pred_path, int z) {
    const auto cfg = run_config();
    const auto ct = load_volume_as<std::int16_t>(ct_path);
    const auto grey = prepare_input(ct, cfg.crossval.pipeline);
    std::optional<LabelVolume> gt, pred;
    if (!gt_path.empty()) gt = load_volume_as<std::uint8_t>(gt_path);
    if (!pred_path.empty()) pred = load_volume_as<std::uint8_t>(pred_path);
    std::vector<int> slices;
    if (z >= 0) {
        slices.push_back(z);
    } else {
        // Every slice where either mask is present.
        for (int k = 0; k < ct.dims().z; ++k) {
            bool any = false;
            for (const auto* m : {gt ? &*gt : nullptr, pred ? &*pred : nullptr})
                for (int y = 0; m && !any && y < ct.dims().y; ++y)
                    for (int x = 0; !any && x < ct.dims().x; ++x) any = (*m)(x, y, k) != 0;
            if (any) slices.push_back(k);
        }
    }
    std::vector<std::string> files;
    for (const int k : slices) {
        char name[32];
        std::snprintf(name, sizeof name, "overlay_z%03d.ppm", k);
        write_ppm(out_path(name), overlay_slice(grey, gt ? &*gt : nullptr, pred ? &*pred : nullptr, k));
        files.push_back(out_path(name));
    }
    write_dir_manifest("overlay");
    return {{"files", files}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage cascaded organ localisation and segmentation"};
    app.require_subcommand(1);
    app.add_option("--seed", g.seed, "Master seed (corpus, folds, training)");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::Range(1, 1024));
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--config", g.config, "JSON configuration document");
    app.add_flag("--quiet", g.quiet, "No progress messages on stderr");

    std::function<json()> action;
    int status = 0;

    auto* phantom = app.add_subcommand("phantom", "Generate a phantom corpus");
    int n = 0;
    phantom->add_option("--n", n, "Number of cases (default from config)");
    phantom->callback([&] { action = [&] { return cmd_phantom(n); }; });

    std::string corpus, view = "axial", target = "interior", ids, models, ct, box, gt, pred, mode = "meanmax";
    std::string variant = "meanmax", model, save_model;
    int stage = 1, k = 0, z = -1;
    bool sides = false;
    std::optional<double> threshold;
    std::optional<int> pad;
    std::vector<std::string> inputs;

    auto* train_hnn = app.add_subcommand("train-hnn", "Train one network");
    train_hnn->add_option("--corpus", corpus, "Corpus directory")->required();
    train_hnn->add_option("--view", view, "axial, coronal or sagittal");
    train_hnn->add_option("--stage", stage, "1 (whole volume) or 2 (cropped)");
    train_hnn->add_option("--target", target, "interior or boundary");
    train_hnn->add_option("--cases", ids, "Comma-separated case ids (default all)");
    train_hnn->callback([&] { action = [&] { return cmd_train_hnn(corpus, view, stage, target, ids); }; });

    auto* train_rf = app.add_subcommand("train-rf", "Fit the superpixel forest and calibrate thresholds");
    train_rf->add_option("--corpus", corpus, "Corpus directory")->required();
    train_rf->add_option("--models", models, "Model directory with the stage-2 nets")->required();
    train_rf->add_option("--cases", ids, "Comma-separated case ids (default all)");
    train_rf->callback([&] { action = [&] { return cmd_train_rf(corpus, models, ids); }; });

    auto* infer = app.add_subcommand("infer", "Run one network over a volume");
    infer->add_option("--model", model, "Checkpoint")->required();
    infer->add_option("--ct", ct, "CT volume")->required();
    infer->add_option("--view", view, "axial, coronal or sagittal");
    infer->add_option("--box", box, "Restrict to a box (JSON)");
    infer->add_flag("--sides", sides, "Also write the side outputs");
    infer->callback([&] { action = [&] { return cmd_infer(model, ct, view, box, sides); }; });

    auto* fuse = app.add_subcommand("fuse", "Pool per-view probability volumes");
    fuse->add_option("--mode", mode, "ax, co, sa, mean(ax,co), ..., mean, max, meanmax");
    fuse->add_option("--inputs", inputs, "Probability volumes in axial, coronal, sagittal order")->required();
    fuse->callback([&] { action = [&] { return cmd_fuse(mode, inputs); }; });

    auto* localize_cmd = app.add_subcommand("localize", "Candidate box from a pooled probability volume");
    localize_cmd->add_option("--prob", pred, "Pooled probability volume")->required();
    localize_cmd->add_option("--threshold", threshold, "Probability threshold");
    localize_cmd->add_option("--pad", pad, "Box padding in voxels");
    localize_cmd->add_option("--gt", gt, "Ground truth for recall");
    localize_cmd->callback([&] { action = [&] { return cmd_localize(pred, threshold, pad, gt); }; });

    auto* superpixels = app.add_subcommand("superpixels", "Boundary-driven superpixels inside a box");
    superpixels->add_option("--models", models, "Model directory")->required();
    superpixels->add_option("--ct", ct, "CT volume")->required();
    superpixels->add_option("--box", box, "Region (JSON)");
    superpixels->add_option("--gt", gt, "Ground truth for the oracle DSC");
    superpixels->callback([&] { action = [&] { return cmd_superpixels(models, ct, box, gt); }; });

    auto* segment_cmd = app.add_subcommand("segment", "Segment inside a box");
    segment_cmd->add_option("--variant", variant, "meanmax or hnn-rf");
    segment_cmd->add_option("--models", models, "Model directory")->required();
    segment_cmd->add_option("--ct", ct, "CT volume")->required();
    segment_cmd->add_option("--box", box, "Region (JSON)");
    segment_cmd->add_option("--gt", gt, "Ground truth for metrics");
    segment_cmd->callback([&] { action = [&] { return cmd_segment(variant, models, ct, box, gt); }; });

    auto* evaluate = app.add_subcommand("evaluate", "Compare a mask with ground truth");
    evaluate->add_option("--pred", pred, "Predicted mask")->required();
    evaluate->add_option("--gt", gt, "Ground truth mask")->required();
    evaluate->add_option("--box", box, "Box for recall and volume reduction");
    evaluate->callback([&] { action = [&] { return cmd_evaluate(pred, gt, box); }; });

    auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation over a corpus");
    crossval->add_option("--corpus", corpus, "Corpus directory")->required();
    crossval->add_option("--k", k, "Fold count (default from config)");
    crossval->callback([&] { action = [&] { return cmd_crossval(corpus, k, &status); }; });

    auto* baseline = app.add_subcommand("baseline-locate", "Regression-forest box localizer");
    baseline->add_option("--corpus", corpus, "Training corpus");
    baseline->add_option("--model", model, "Load a trained localizer instead of training");
    baseline->add_option("--save-model", save_model, "Write the trained localizer");
    baseline->add_option("--ct", ct, "CT volume to localise");
    baseline->add_option("--gt", gt, "Ground truth for recall");
    baseline->callback([&] { action = [&] { return cmd_baseline(corpus, ct, model, save_model, gt); }; });

    auto* run = app.add_subcommand("run", "Generate the corpus and cross-validate per --config");
    run->callback([&] { action = [&] { return cmd_run(&status); }; });

    auto* overlay = app.add_subcommand("overlay", "PPM slices of CT with gt and prediction contours");
    overlay->add_option("--ct", ct, "CT volume")->required();
    overlay->add_option("--gt", gt, "Ground truth mask");
    overlay->add_option("--pred", pred, "Predicted mask");
    overlay->add_option("--z", z, "Axial slice (default: every slice with a mask)");
    overlay->callback([&] { action = [&] { return cmd_overlay(ct, gt, pred, z); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        set_thread_count(g.threads);
        const auto result = action();
        std::cout << result.dump(2) << "\n";
        return status;
    } catch (const Error& e) {
        std::cout << json{{"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}}.dump(2) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cout << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump(2) << "\n";
        return 1;
    }
}
