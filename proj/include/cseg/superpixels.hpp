#pragma once

// Boundary-driven superpixels per axial slice: a seeded watershed over the
// fused boundary map gives the base partition; adjacent regions are then
// merged greedily by the mean boundary strength across three scales.

#include <cstdint>
#include <span>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg {

using LabelImage = Image<std::uint32_t>;

struct WatershedOptions {
    int smoothing_radius = 1;  // mean filter of (2r+1)^2 pixels; 0 disables
    int levels = 256;          // quantisation of the smoothed map
};

// Labels 0..n-1 in scan order of each basin's first seed pixel; every pixel
// is labelled. Pixels reached by several basins go to the basin with the
// lower seed value, ties to the lower label.
LabelImage watershed_partition(const Image<float>& boundary, const WatershedOptions& opt = {});

std::uint32_t region_count(const LabelImage& labels);

struct Merge {
    std::uint32_t a = 0;  // base labels of the two clusters' representatives
    std::uint32_t b = 0;
    double weight = 0.0;

    bool operator==(const Merge&) const = default;
};

struct Hierarchy {
    LabelImage level1;
    LabelImage level2;
    std::uint32_t level1_count = 0;
    std::uint32_t level2_count = 0;
    std::vector<Merge> merges;  // dendrogram in merge order
    double level2_threshold = 0.0;

    friend bool operator==(const Hierarchy&, const Hierarchy&) = default;
};

// Edge weight = mean over 4-adjacent label-crossing pixel pairs of the scale
// average at both pixels. Edges are merged in (weight, min label, max label)
// order; level 2 applies every merge whose weight is below the `quantile` of
// edge weights.
Hierarchy merge_hierarchy(const LabelImage& base, std::span<const Image<float>> scales, double quantile = 0.25);

// One proposal: a set of voxels inside a region, stored as sorted
// region-local linear indices (x + ex*(y + ey*z)).
struct Superpixel {
    int z = 0;      // region-local slice
    int level = 1;  // hierarchy level it first appears in
    std::vector<std::uint32_t> voxels;
};

// Level-1 regions followed by the level-2 regions that are not identical to
// a level-1 region.
std::vector<Superpixel> proposals_first_two_levels(const Hierarchy& h, const Dims& region_extent, int z);

struct RegionSuperpixels {
    BBox3 region;
    std::vector<Hierarchy> slices;  // one per region-local z
    std::vector<Superpixel> proposals;

    // Level-1 proposals only.
    std::vector<const Superpixel*> level1() const;
};

struct SuperpixelOptions {
    WatershedOptions watershed;
    double level2_quantile = 0.25;
};

// scales are region-cropped boundary volumes (two side outputs then the
// fused map); the base partition comes from the last one.
RegionSuperpixels build_superpixels(const BBox3& region, std::span<const ProbVolume> scales,
                                    const SuperpixelOptions& opt = {});

// True iff the label image covers every pixel with labels 0..count-1 and
// every label is used.
bool is_partition(const LabelImage& labels, std::uint32_t count);

struct OracleResult {
    LabelVolume mask;  // full-volume frame
    double dsc = 0.0;
};

// Labels every level-1 superpixel positive iff at least half its voxels are
// in gt and scores the union against the full gt.
OracleResult optimal_assignment(const RegionSuperpixels& sp, const LabelVolume& gt);

}  // namespace cseg
