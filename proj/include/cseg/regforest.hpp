#pragma once

// Regression-forest bounding-box localizer: every grid voxel votes for the
// organ box through offsets regressed from paired-cuboid appearance
// features; a second forest accepts or rejects each vote, and the box with
// the most accepted votes after non-maximum suppression wins.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cseg/datagen.hpp"
#include "cseg/forest.hpp"
#include "cseg/volume.hpp"

namespace cseg {

using Vec3 = std::array<double, 3>;

// Feature = mean HU of cuboid A - mean HU of cuboid B, each given by a
// centre offset from the voxel and a full size, in mm.
struct Probe {
    Vec3 offset_a{};
    Vec3 size_a{};
    Vec3 offset_b{};
    Vec3 size_b{};
};

struct PatchFeatureConfig {
    std::vector<Probe> probes;
    double max_radius_mm = 30.0;

    // count random probes with sizes in [2, 12] mm fitting inside the radius.
    static PatchFeatureConfig random(int count, double max_radius_mm, std::uint64_t seed);
    void validate() const;
};

// Summed-volume table with nearest-voxel clamping for out-of-range reads.
class IntegralVolume {
public:
    explicit IntegralVolume(const HuVolume& vol);
    // Mean over the voxel box [lo, hi] (inclusive), reading clamped voxels
    // for coordinates outside the grid.
    double clamped_mean(const Index3& lo, const Index3& hi) const;
    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }

private:
    double box_sum(int x0, int y0, int z0, int x1, int y1, int z1) const;
    Dims dims_;
    Spacing spacing_;
    std::vector<double> table_;
};

std::vector<float> patch_features(const IntegralVolume& iv, const Index3& x, const PatchFeatureConfig& cfg);
std::vector<float> patch_features(const HuVolume& vol, const Index3& x, const PatchFeatureConfig& cfg);

struct LocalizerConfig {
    int probe_count = 32;
    double max_radius_mm = 30.0;
    int samples_per_case = 400;
    forest::ForestOptions regression{20, 12, 5, 0, true, 0};
    forest::ForestOptions classifier{20, 0, 2, 0, true, 0};
    double accept_radius_mm = 10.0;  // a vote is "good" within this distance of the true centre
    int grid_stride = 4;
    double accept_threshold = 0.5;
    double nms_radius_mm = 20.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LocalizerModel {
    LocalizerConfig cfg;
    PatchFeatureConfig features;
    forest::ForestModel regressor;   // 9 outputs: centre offset, lower and upper corner offsets
    forest::ForestModel classifier;  // empty when every training vote had the same label
    bool accept_all = false;
    std::vector<std::string> warnings;
};

// Cases with an empty ground truth are skipped with a warning.
LocalizerModel train_localizer(const std::vector<const Case*>& cases, const LocalizerConfig& cfg);

struct BoxPrediction {
    Vec3 center{};  // mm
    Vec3 lower{};   // lower corner - centre, mm
    Vec3 upper{};   // upper corner - centre, mm
    double score = 0.0;
};

struct BoxDiagnostics {
    std::size_t grid_points = 0;
    std::size_t accepted = 0;
    std::size_t candidates = 0;  // after suppression
    std::size_t votes = 0;       // accepted votes inside the chosen box
    double vote_score = 0.0;     // their summed score
    BoxPrediction chosen;        // componentwise median of those votes
};

struct BoxResult {
    BBox3 box;
    BoxDiagnostics diagnostics;
};

// Throws NoCandidate when no vote is accepted.
BoxResult predict_bbox(const LocalizerModel& model, const HuVolume& vol);

// Centre of a voxel box in mm.
Vec3 box_center_mm(const BBox3& box, const Spacing& s);

std::vector<char> encode_localizer(const LocalizerModel& model);
LocalizerModel decode_localizer(std::vector<char> bytes);
void save_localizer(const std::string& path, const LocalizerModel& model);
LocalizerModel load_localizer(const std::string& path);

}  // namespace cseg
