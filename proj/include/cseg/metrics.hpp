#pragma once

#include <span>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg {

struct OverlapMetrics {
    double dsc = 0.0;
    double jaccard = 0.0;
};

// Two empty masks count as identical (1.0, 1.0).
OverlapMetrics overlap_metrics(const LabelVolume& a, const LabelVolume& b);

struct SurfaceDistances {
    double hausdorff_mm = 0.0;
    double avgdist_mm = 0.0;  // mean over both surfaces of the distance to the other
};

// Surface voxels have at least one 6-neighbour outside the mask (or the
// grid). Distances use an exact Euclidean distance transform scaled by the
// volume spacing. Throws UndefinedMetric for an empty mask.
SurfaceDistances surface_distances(const LabelVolume& a, const LabelVolume& b);

LabelVolume surface_voxels(const LabelVolume& mask);

// Two-sided Wilcoxon signed-rank p-value on paired samples. Zero
// differences are dropped and tied magnitudes get mid-ranks. Exact null
// distribution for n <= 25, otherwise the normal approximation with tie and
// continuity corrections. Throws DegenerateTest when every difference is
// zero and InvalidArgument for fewer than 5 non-zero pairs.
double wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

struct Summary {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;  // sample (n-1); 0 for a single value
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    double p10 = 0.0;
    double p90 = 0.0;
};

Summary summarize(std::span<const double> values);

// Linear interpolation between closest ranks on sorted data; p in [0, 100].
double percentile_sorted(std::span<const double> sorted, double p);

}  // namespace cseg
