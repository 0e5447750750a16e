#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg {

// Synthetic abdomen-like phantom: a body ellipsoid of fat, one lobed and
// rotated ellipsoidal organ, and spherical distractors whose intensities
// overlap the organ's so that shape and context matter.
struct PhantomConfig {
    Dims dims{64, 64, 64};
    Spacing spacing{1.0, 1.0, 1.0};

    double organ_center_lo = 26.0;   // voxel coordinate range for each axis
    double organ_center_hi = 38.0;
    double organ_semi_axis_lo = 7.0;  // voxels
    double organ_semi_axis_hi = 13.0;
    double lobe_amplitude = 0.2;
    int organ_hu_lo = 30;
    int organ_hu_hi = 90;

    double body_fraction = 0.46;  // body semi-axes as a fraction of dims
    int body_hu = -100;
    int air_hu = -1000;

    int distractor_count = 8;
    double distractor_radius_lo = 2.0;
    double distractor_radius_hi = 4.0;
    int distractor_hu_lo = 20;
    int distractor_hu_hi = 140;
    int distractor_gap = 3;  // min voxel gap between distractor and organ

    double noise_sigma = 15.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Case {
    std::string id;
    HuVolume ct;
    LabelVolume gt_interior;
    LabelVolume gt_boundary;
};

Case generate_phantom(const PhantomConfig& cfg);

// Case i of a corpus uses a seed derived from (base seed, i).
std::uint64_t corpus_case_seed(std::uint64_t base_seed, std::size_t index);
std::string corpus_case_id(std::size_t index);
std::vector<Case> generate_corpus(const PhantomConfig& cfg, std::size_t count);

// Interior voxels with at least one 6-neighbour outside the mask (voxels
// beyond the grid count as outside).
LabelVolume inner_boundary(const LabelVolume& mask);

// Shuffled round-robin split: fold sizes differ by at most one. Each fold
// is returned sorted.
std::vector<std::vector<std::string>> split_folds(const std::vector<std::string>& ids, int k,
                                                  std::uint64_t seed);

}  // namespace cseg
