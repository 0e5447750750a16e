#pragma once

#include <cstdint>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg {

enum class MorphOp { Erode, Dilate };

// Binary morphology with the 6-neighbour cross, applied `radius` times.
// Erosion ignores neighbours outside the grid.
LabelVolume morphology(const LabelVolume& mask, MorphOp op, int radius);

// Labels 1..n over nonzero voxels, numbered by first occurrence in linear
// order; sizes[k] is the voxel count of label k (sizes[0] unused).
struct Components {
    Volume<std::uint32_t> labels;
    std::vector<std::size_t> sizes;
    std::size_t count() const { return sizes.empty() ? 0 : sizes.size() - 1; }
};
Components label_components(const LabelVolume& mask, int connectivity);

// Keeps the largest component; ties go to the component with the smallest
// minimum linear index. Empty in, empty out.
LabelVolume largest_component(const LabelVolume& mask, int connectivity = 26);

LabelVolume threshold_mask(const ProbVolume& prob, float threshold);

struct CandidateRegion {
    LabelVolume mask;
    BBox3 box;
    bool erosion_fallback = false;  // erosion emptied the mask
};

// threshold -> erode(1) -> largest 26-component -> dilate(1) -> tight box
// expanded by pad. Throws NoCandidate when nothing passes the threshold.
CandidateRegion candidate_region(const ProbVolume& prob, float threshold = 0.5f, int pad = 5);

struct BoxStats {
    double recall = 0.0;            // |gt in box| / |gt|
    double volume_reduction = 0.0;  // 1 - |box| / |volume|
};

// Throws UndefinedMetric for an empty gt.
BoxStats bbox_stats(const BBox3& box, const LabelVolume& gt);

}  // namespace cseg
