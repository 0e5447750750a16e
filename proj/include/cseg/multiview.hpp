#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "cseg/hnn.hpp"
#include "cseg/volume.hpp"

namespace cseg {

enum class PoolingKind { Single, MeanPair, MeanAll, MaxAll, MeanMax };

struct PoolingMode {
    PoolingKind kind = PoolingKind::MeanMax;
    ViewPlane first = ViewPlane::Axial;  // Single, MeanPair
    ViewPlane second = ViewPlane::Coronal;  // MeanPair

    std::size_t arity() const;
    // Planes whose maps the mode consumes, in order.
    std::vector<ViewPlane> planes() const;
    // "ax", "mean(ax,co)", "mean", "max", "meanmax", ...
    std::string name() const;
    static PoolingMode parse(const std::string& name);

    // The nine aggregation functions compared in the pooling ablation.
    static std::vector<PoolingMode> all();
};

// Fused output of every slice along `plane`, restacked to the input dims.
ProbVolume predict_volume(const hnn::HnnParams& params, const LabelVolume& vol, ViewPlane plane);

// Fused map plus each side-output map, as volumes.
struct VolumePrediction {
    ProbVolume fused;
    std::vector<ProbVolume> sides;
};
VolumePrediction predict_volume_all(const hnn::HnnParams& params, const LabelVolume& vol, ViewPlane plane);

// Voxelwise pooling. MeanMax averages the two largest of exactly three maps.
ProbVolume pool_views(std::span<const ProbVolume> maps, const PoolingMode& mode);

// Picks the mode's planes from maps indexed by ViewPlane, then pools.
ProbVolume pool_planes(const std::array<ProbVolume, 3>& by_plane, const PoolingMode& mode);

}  // namespace cseg
