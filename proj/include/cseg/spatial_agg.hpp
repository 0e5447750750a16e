#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "cseg/forest.hpp"
#include "cseg/superpixels.hpp"
#include "cseg/volume.hpp"

namespace cseg {

inline constexpr std::size_t kStatCount = 12;
inline constexpr std::size_t kFeatureCount = 3 * kStatCount + 3;

// mean, variance, skewness, kurtosis, then the 20th..90th percentiles in
// steps of 10. Population moments; kurtosis is the plain standardised
// fourth moment. Skewness and kurtosis are 0 below 4 values or for zero
// variance.
std::array<double, kStatCount> channel_stats(std::span<const double> values);

using FeatureVector = std::array<double, kFeatureCount>;

// Stats of CT, pooled interior map and boundary map over the superpixel,
// then its mean voxel position normalised to [0, 1] by the region extent
// (voxel centres, so the centre of the region maps to 0.5). The volumes are
// cropped to the region.
FeatureVector superpixel_features(const Superpixel& sp, const HuVolume& ct, const ProbVolume& interior,
                                  const ProbVolume& boundary);

// Positive iff at least half of the superpixel's voxels are in gt (cropped
// to the region).
std::vector<int> label_superpixels(std::span<const Superpixel> proposals, const LabelVolume& gt_crop);

// Forest probability per proposal.
std::vector<double> score_superpixels(const forest::ForestModel& model, std::span<const FeatureVector> features);

// Union of proposals with score >= threshold, pasted into a zero volume of
// full_dims at the region offset. No post-processing.
LabelVolume predict_segmentation(std::span<const Superpixel> proposals, std::span<const double> scores,
                                 double threshold, const BBox3& region, const Dims& full_dims,
                                 const Spacing& spacing);

// The thresholds 0.05, 0.10, ..., 0.95.
std::vector<double> threshold_grid();

// Grid threshold with the highest mean_dsc(t); ties go to the lower one.
double calibrate_threshold(const std::function<double(double)>& mean_dsc);

// A training case as seen by calibration.
struct ScoredCase {
    std::vector<Superpixel> proposals;
    std::vector<double> scores;
    BBox3 region;
    const LabelVolume* gt = nullptr;
};

double calibrate_threshold(std::span<const ScoredCase> cases);

}  // namespace cseg
