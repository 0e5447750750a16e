#pragma once

// The two-stage cascade: stage-1 multi-view interior nets localise a
// candidate box; stage-2 interior nets (three views) and a boundary net
// (axial) run inside the box and feed either pooled thresholding (meanmax)
// or superpixel classification with a random forest (hnn-rf).

#include <array>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cseg/datagen.hpp"
#include "cseg/forest.hpp"
#include "cseg/hnn.hpp"
#include "cseg/localization.hpp"
#include "cseg/multiview.hpp"
#include "cseg/spatial_agg.hpp"
#include "cseg/superpixels.hpp"

namespace cseg {

using Logger = std::function<void(std::string_view)>;

struct SliceSampling {
    int organ_stride = 2;     // every n-th slice within the organ's extent (+ margin)
    int organ_margin = 2;
    int background_every = 16;  // every n-th slice elsewhere; 0 disables
};

// Target of the boundary net. Shell is the case's 3D inner boundary;
// Contour marks, per axial slice, the pixels on both sides of the organ
// contour (in-plane 4-neighbour gradient), so the ridge of the predicted map
// runs between organ and background pixels.
enum class BoundaryTarget { Shell, Contour };

LabelVolume axial_contour(const LabelVolume& mask);

struct PipelineConfig {
    double window_lo = -160.0;
    double window_hi = 240.0;

    hnn::NetConfig stage1_net;
    SliceSampling stage1_sampling;
    hnn::NetConfig stage2_net;
    SliceSampling stage2_sampling{1, 0, 1};
    hnn::NetConfig boundary_net;
    BoundaryTarget boundary_target = BoundaryTarget::Contour;

    float candidate_threshold = 0.5f;
    int candidate_pad = 5;
    PoolingMode localization_pooling{PoolingKind::MaxAll};
    int training_crop_pad = 6;  // gt box growth for stage-2 training crops

    SuperpixelOptions superpixels;
    forest::ForestOptions rf;

    void validate() const;
};

struct Stage1Models {
    std::array<hnn::HnnParams, 3> interior;  // indexed by ViewPlane
};

struct Stage2Models {
    std::array<hnn::HnnParams, 3> interior;
    hnn::HnnParams boundary;
    forest::ForestModel rf;
    double rf_threshold = 0.5;
    std::map<std::string, double> pooled_threshold;  // by pooling mode name
};

LabelVolume prepare_input(const HuVolume& ct, const PipelineConfig& cfg);

// Training pairs along `plane` from whole volumes (stage 1).
std::vector<hnn::Sample> stage1_samples(const std::vector<const Case*>& cases, ViewPlane plane,
                                        const PipelineConfig& cfg);

enum class Target { Interior, Boundary };

// Training crop for stage 2: gt box grown by training_crop_pad.
BBox3 training_region(const Case& c, const PipelineConfig& cfg);

std::vector<hnn::Sample> stage2_samples(const std::vector<const Case*>& cases, ViewPlane plane, Target target,
                                        const PipelineConfig& cfg);

hnn::HnnParams train_net(const std::vector<hnn::Sample>& samples, const hnn::NetConfig& net, std::uint64_t seed,
                         const Logger& log, std::string_view tag);

Stage1Models train_stage1(const std::vector<const Case*>& cases, const PipelineConfig& cfg, std::uint64_t seed,
                          const Logger& log = {});

struct Localization {
    CandidateRegion candidate;
    bool fallback_full = false;  // nothing passed the threshold; full volume used
};

std::array<ProbVolume, 3> stage1_maps(const Stage1Models& m, const LabelVolume& input);
Localization localize(const Stage1Models& m, const LabelVolume& input, const PipelineConfig& cfg);

// Stage-2 network outputs on a region, cropped.
struct Stage2Maps {
    BBox3 region;
    HuVolume ct;
    std::array<ProbVolume, 3> interior;
    VolumePrediction boundary;  // fused + side maps
};

Stage2Maps stage2_maps(const Stage2Models& m, const HuVolume& ct, const LabelVolume& input, const BBox3& region);

// The boundary scales feeding the superpixels: two side outputs then the
// fused map. With fewer than three stages the available sides are used.
std::vector<ProbVolume> boundary_scales(const VolumePrediction& b);

// threshold -> erode(1) -> largest component -> dilate(1) inside the region,
// pasted to the full frame; empty when nothing passes.
LabelVolume pooled_segmentation(const ProbVolume& pooled_crop, double threshold, const BBox3& region,
                                const Dims& full_dims);

struct SegmentationOutput {
    RegionSuperpixels superpixels;
    std::vector<FeatureVector> features;
    std::vector<double> scores;
    LabelVolume meanmax;
    LabelVolume rf;
};

SegmentationOutput segment(const Stage2Models& m, const Stage2Maps& maps, const Dims& full_dims,
                           const PipelineConfig& cfg);

// Trains the forest and calibrates the hnn-rf and pooled thresholds on the
// training cases' own stage-2 maps; the nets in m must already be trained.
// Calibration scores each training superpixel out-of-bag.
void fit_aggregation(Stage2Models& m, const std::vector<const Case*>& cases, const PipelineConfig& cfg,
                     std::uint64_t seed, const Logger& log = {});

// Trains the stage-2 nets, then runs fit_aggregation.
Stage2Models train_stage2(const std::vector<const Case*>& cases, const PipelineConfig& cfg, std::uint64_t seed,
                          const Logger& log = {});

}  // namespace cseg
