#include "cseg/pipeline.hpp"

#include <cstdio>

#include "cseg/metrics.hpp"
#include "cseg/parallel.hpp"
#include "cseg/seed.hpp"

namespace cseg {

void PipelineConfig::validate() const {
    require(window_lo < window_hi, "intensity window is empty");
    stage1_net.validate();
    stage2_net.validate();
    boundary_net.validate();
    for (const auto* s : {&stage1_sampling, &stage2_sampling})
        require(s->organ_stride >= 1 && s->organ_margin >= 0 && s->background_every >= 0, "invalid slice sampling");
    require(candidate_threshold > 0.0f && candidate_threshold < 1.0f, "candidate threshold must be in (0, 1)");
    require(candidate_pad >= 0 && training_crop_pad >= 0, "pads must be >= 0");
    require(superpixels.level2_quantile >= 0.0 && superpixels.level2_quantile <= 1.0, "level-2 quantile must be in [0, 1]");
    require(rf.trees >= 1, "forest needs at least one tree");
}

LabelVolume prepare_input(const HuVolume& ct, const PipelineConfig& cfg) {
    return window_rescale(ct, cfg.window_lo, cfg.window_hi);
}

namespace {

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

// Slices along `plane` chosen by the sampling rule relative to the organ's
// extent on the normal axis.
std::vector<int> pick_slices(const LabelVolume& gt, ViewPlane plane, const SliceSampling& s) {
    const int axis = normal_axis(plane);
    const int n = gt.dims()[axis];
    int lo = n, hi = -1;
    if (count_nonzero(gt) > 0) {
        const auto box = tight_box(gt);
        lo = box.lo[axis] - s.organ_margin;
        hi = box.hi[axis] + s.organ_margin;
    }
    std::vector<int> out;
    for (int k = 0; k < n; ++k) {
        if (k >= lo && k < hi) {
            if ((k - lo) % s.organ_stride == 0) out.push_back(k);
        } else if (s.background_every > 0 && k % s.background_every == 0) {
            out.push_back(k);
        }
    }
    return out;
}

void append_samples(std::vector<hnn::Sample>& out, const LabelVolume& input, const LabelVolume& target,
                    const LabelVolume& organ, ViewPlane plane, const SliceSampling& s) {
    const auto xs = extract_slices(input, plane);
    const auto ys = extract_slices(target, plane);
    for (int k : pick_slices(organ, plane, s))
        out.push_back({xs[static_cast<std::size_t>(k)], ys[static_cast<std::size_t>(k)]});
}

}  // namespace

std::vector<hnn::Sample> stage1_samples(const std::vector<const Case*>& cases, ViewPlane plane,
                                        const PipelineConfig& cfg) {
    std::vector<hnn::Sample> out;
    for (const auto* c : cases)
        append_samples(out, prepare_input(c->ct, cfg), c->gt_interior, c->gt_interior, plane, cfg.stage1_sampling);
    return out;
}

LabelVolume axial_contour(const LabelVolume& mask) {
    const auto& d = mask.dims();
    LabelVolume out = like<std::uint8_t>(mask);
    auto in = [&](int x, int y, int z) { return mask.contains(x, y, z) && mask(x, y, z) != 0; };
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const bool self = in(x, y, z);
                const bool differs = in(x - 1, y, z) != self || in(x + 1, y, z) != self ||
                                     in(x, y - 1, z) != self || in(x, y + 1, z) != self;
                // Grid edges count as background only for organ pixels.
                const bool edge = self && (x == 0 || y == 0 || x == d.x - 1 || y == d.y - 1);
                out(x, y, z) = differs || edge ? 1 : 0;
            }
    return out;
}

BBox3 training_region(const Case& c, const PipelineConfig& cfg) {
    return expand(tight_box(c.gt_interior, "training"), cfg.training_crop_pad, c.ct.dims());
}

std::vector<hnn::Sample> stage2_samples(const std::vector<const Case*>& cases, ViewPlane plane, Target target,
                                        const PipelineConfig& cfg) {
    std::vector<hnn::Sample> out;
    for (const auto* c : cases) {
        const auto region = training_region(*c, cfg);
        const auto input = crop(prepare_input(c->ct, cfg), region);
        const auto organ = crop(c->gt_interior, region);
        LabelVolume y = organ;
        if (target == Target::Boundary)
            y = cfg.boundary_target == BoundaryTarget::Shell ? crop(c->gt_boundary, region) : axial_contour(organ);
        append_samples(out, input, y, organ, plane, cfg.stage2_sampling);
    }
    return out;
}

hnn::HnnParams train_net(const std::vector<hnn::Sample>& samples, const hnn::NetConfig& net, std::uint64_t seed,
                         const Logger& log, std::string_view tag) {
    std::vector<Image<std::uint8_t>> masks;
    masks.reserve(samples.size());
    for (const auto& s : samples) masks.push_back(s.gt);
    hnn::LossConfig loss{hnn::compute_beta(masks)};
    auto cfg = net;
    cfg.seed = seed;
    const std::string name(tag);
    say(log, name + ": " + std::to_string(samples.size()) + " slices, beta " + std::to_string(loss.beta));
    auto res = hnn::train(cfg, loss, samples, [&](int epoch, double l) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s: epoch %d loss %.5f", name.c_str(), epoch + 1, l);
        say(log, buf);
    });
    return std::move(res.params);
}

Stage1Models train_stage1(const std::vector<const Case*>& cases, const PipelineConfig& cfg, std::uint64_t seed,
                          const Logger& log) {
    Stage1Models m;
    for (auto plane : kAllPlanes) {
        const auto samples = stage1_samples(cases, plane, cfg);
        m.interior[static_cast<std::size_t>(plane)] =
            train_net(samples, cfg.stage1_net, derive_seed(seed, 10 + static_cast<std::uint64_t>(plane)), log,
                      "stage1 " + to_string(plane));
    }
    return m;
}

std::array<ProbVolume, 3> stage1_maps(const Stage1Models& m, const LabelVolume& input) {
    std::array<ProbVolume, 3> maps;
    for (auto plane : kAllPlanes)
        maps[static_cast<std::size_t>(plane)] = predict_volume(m.interior[static_cast<std::size_t>(plane)], input, plane);
    return maps;
}

Localization localize(const Stage1Models& m, const LabelVolume& input, const PipelineConfig& cfg) {
    const auto pooled = pool_planes(stage1_maps(m, input), cfg.localization_pooling);
    Localization out;
    try {
        out.candidate = candidate_region(pooled, cfg.candidate_threshold, cfg.candidate_pad);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoCandidate) throw;
        out.fallback_full = true;
        out.candidate.mask = like<std::uint8_t>(input);
        out.candidate.box = full_box(input.dims(), "fallback");
    }
    return out;
}

Stage2Maps stage2_maps(const Stage2Models& m, const HuVolume& ct, const LabelVolume& input, const BBox3& region) {
    Stage2Maps out;
    out.region = region;
    out.ct = crop(ct, region);
    const auto in = crop(input, region);
    for (auto plane : kAllPlanes)
        out.interior[static_cast<std::size_t>(plane)] = predict_volume(m.interior[static_cast<std::size_t>(plane)], in, plane);
    out.boundary = predict_volume_all(m.boundary, in, ViewPlane::Axial);
    return out;
}

std::vector<ProbVolume> boundary_scales(const VolumePrediction& b) {
    std::vector<ProbVolume> out;
    for (std::size_t m = 1; m < b.sides.size() && m <= 2; ++m) out.push_back(b.sides[m]);
    out.push_back(b.fused);
    return out;
}

LabelVolume pooled_segmentation(const ProbVolume& pooled_crop, double threshold, const BBox3& region,
                                const Dims& full_dims) {
    require(pooled_crop.dims() == region.extent(), "pooled map does not match the region");
    const auto mask = threshold_mask(pooled_crop, static_cast<float>(threshold));
    LabelVolume part = like<std::uint8_t>(mask);
    if (count_nonzero(mask) > 0) {
        const auto eroded = morphology(mask, MorphOp::Erode, 1);
        part = count_nonzero(eroded) == 0 ? largest_component(mask, 26)
                                          : morphology(largest_component(eroded, 26), MorphOp::Dilate, 1);
    }
    LabelVolume full(full_dims, pooled_crop.spacing());
    paste(full, part, region);
    return full;
}

namespace {

std::vector<FeatureVector> proposal_features(const RegionSuperpixels& sp, const Stage2Maps& maps,
                                             const ProbVolume& pooled) {
    std::vector<FeatureVector> f(sp.proposals.size());
    parallel_for(sp.proposals.size(), [&](std::size_t i) {
        f[i] = superpixel_features(sp.proposals[i], maps.ct, pooled, maps.boundary.fused);
    });
    return f;
}

const PoolingMode kMeanMax{PoolingKind::MeanMax};

}  // namespace

SegmentationOutput segment(const Stage2Models& m, const Stage2Maps& maps, const Dims& full_dims,
                           const PipelineConfig& cfg) {
    SegmentationOutput out;
    const auto pooled = pool_planes(maps.interior, kMeanMax);
    out.superpixels = build_superpixels(maps.region, boundary_scales(maps.boundary), cfg.superpixels);
    out.features = proposal_features(out.superpixels, maps, pooled);
    out.scores = score_superpixels(m.rf, out.features);
    out.rf = predict_segmentation(out.superpixels.proposals, out.scores, m.rf_threshold, maps.region, full_dims,
                                  maps.ct.spacing());
    out.meanmax = pooled_segmentation(pooled, m.pooled_threshold.at(kMeanMax.name()), maps.region, full_dims);
    return out;
}

Stage2Models train_stage2(const std::vector<const Case*>& cases, const PipelineConfig& cfg, std::uint64_t seed,
                          const Logger& log) {
    Stage2Models m;
    for (auto plane : kAllPlanes) {
        const auto samples = stage2_samples(cases, plane, Target::Interior, cfg);
        m.interior[static_cast<std::size_t>(plane)] =
            train_net(samples, cfg.stage2_net, derive_seed(seed, 20 + static_cast<std::uint64_t>(plane)), log,
                      "stage2 " + to_string(plane));
    }
    m.boundary = train_net(stage2_samples(cases, ViewPlane::Axial, Target::Boundary, cfg), cfg.boundary_net,
                           derive_seed(seed, 30), log, "boundary axial");
    fit_aggregation(m, cases, cfg, seed, log);
    return m;
}

void fit_aggregation(Stage2Models& m, const std::vector<const Case*>& cases, const PipelineConfig& cfg,
                     std::uint64_t seed, const Logger& log) {
    require(!cases.empty(), "aggregation needs training cases");

    // In-sample stage-2 maps of every training case.
    struct TrainCase {
        Stage2Maps maps;
        RegionSuperpixels sp;
        std::vector<FeatureVector> features;
        std::size_t first_row = 0;
    };
    std::vector<TrainCase> tc(cases.size());
    forest::FeatureMatrix x(0, kFeatureCount);
    std::vector<int> labels;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = *cases[i];
        auto& t = tc[i];
        t.maps = stage2_maps(m, c.ct, prepare_input(c.ct, cfg), training_region(c, cfg));
        t.sp = build_superpixels(t.maps.region, boundary_scales(t.maps.boundary), cfg.superpixels);
        t.features = proposal_features(t.sp, t.maps, pool_planes(t.maps.interior, kMeanMax));
        t.first_row = x.rows;
        for (const auto& f : t.features) x.push_row(std::span<const double>(f));
        const auto l = label_superpixels(t.sp.proposals, crop(c.gt_interior, t.maps.region));
        labels.insert(labels.end(), l.begin(), l.end());
    }
    say(log, "forest: " + std::to_string(x.rows) + " superpixels");
    auto opt = cfg.rf;
    opt.seed = derive_seed(seed, 40);
    auto fit = forest::train_forest(x, labels, opt);
    m.rf = std::move(fit.model);
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "forest: oob accuracy %.4f", fit.oob_score);
        say(log, buf);
    }

    // Out-of-bag scores keep the calibration honest on training cases.
    std::vector<ScoredCase> scored(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        auto& s = scored[i];
        s.proposals = tc[i].sp.proposals;
        s.region = tc[i].maps.region;
        s.gt = &cases[i]->gt_interior;
        for (std::size_t j = 0; j < s.proposals.size(); ++j) {
            const auto row = tc[i].first_row + j;
            s.scores.push_back(fit.oob_trees[row] > 0 ? fit.oob_prediction[row][1] : m.rf.probability(x.row(row)));
        }
    }
    m.rf_threshold = calibrate_threshold(scored);

    for (const auto& mode : PoolingMode::all()) {
        std::vector<ProbVolume> pooled;
        for (const auto& t : tc) pooled.push_back(pool_planes(t.maps.interior, mode));
        m.pooled_threshold[mode.name()] = calibrate_threshold([&](double th) {
            double sum = 0.0;
            for (std::size_t i = 0; i < tc.size(); ++i) {
                const auto& gt = cases[i]->gt_interior;
                sum += overlap_metrics(pooled_segmentation(pooled[i], th, tc[i].maps.region, gt.dims()), gt).dsc;
            }
            return sum / static_cast<double>(tc.size());
        });
    }
    {
        char buf[96];
        std::snprintf(buf, sizeof buf, "thresholds: hnn-rf %.2f, meanmax %.2f", m.rf_threshold,
                      m.pooled_threshold.at(kMeanMax.name()));
        say(log, buf);
    }
}

}  // namespace cseg
