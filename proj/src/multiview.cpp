#include "cseg/multiview.hpp"

#include <algorithm>
#include <array>

#include "cseg/parallel.hpp"

namespace cseg {

std::size_t PoolingMode::arity() const {
    switch (kind) {
        case PoolingKind::Single: return 1;
        case PoolingKind::MeanPair: return 2;
        default: return 3;
    }
}

std::vector<ViewPlane> PoolingMode::planes() const {
    switch (kind) {
        case PoolingKind::Single: return {first};
        case PoolingKind::MeanPair: return {first, second};
        default: return {kAllPlanes.begin(), kAllPlanes.end()};
    }
}

namespace {
std::string short_name(ViewPlane p) {
    switch (p) {
        case ViewPlane::Axial: return "ax";
        case ViewPlane::Coronal: return "co";
        case ViewPlane::Sagittal: return "sa";
    }
    return "?";
}
}  // namespace

std::string PoolingMode::name() const {
    switch (kind) {
        case PoolingKind::Single: return short_name(first);
        case PoolingKind::MeanPair: return "mean(" + short_name(first) + "," + short_name(second) + ")";
        case PoolingKind::MeanAll: return "mean";
        case PoolingKind::MaxAll: return "max";
        case PoolingKind::MeanMax: return "meanmax";
    }
    return "?";
}

PoolingMode PoolingMode::parse(const std::string& name) {
    for (const auto& m : all())
        if (m.name() == name) return m;
    if (name == "mean(ax,co,sa)") return {PoolingKind::MeanAll};
    if (name == "max(ax,co,sa)") return {PoolingKind::MaxAll};
    if (name == "meanmax(ax,co,sa)") return {PoolingKind::MeanMax};
    fail(ErrorCode::InvalidArgument, "unknown pooling mode '" + name + "'");
}

std::vector<PoolingMode> PoolingMode::all() {
    using enum ViewPlane;
    return {{PoolingKind::Single, Axial},          {PoolingKind::Single, Coronal},
            {PoolingKind::Single, Sagittal},       {PoolingKind::MeanPair, Axial, Coronal},
            {PoolingKind::MeanPair, Axial, Sagittal}, {PoolingKind::MeanPair, Coronal, Sagittal},
            {PoolingKind::MeanAll},                {PoolingKind::MaxAll},
            {PoolingKind::MeanMax}};
}

VolumePrediction predict_volume_all(const hnn::HnnParams& params, const LabelVolume& vol, ViewPlane plane) {
    const auto slices = extract_slices(vol, plane);
    const auto M = static_cast<std::size_t>(params.stage_count());
    std::vector<Image<float>> fused(slices.size());
    std::vector<std::vector<Image<float>>> sides(M, std::vector<Image<float>>(slices.size()));
    parallel_for(slices.size(), [&](std::size_t k) {
        try {
            auto pred = hnn::forward(params, slices[k]);
            fused[k] = std::move(pred.fused);
            for (std::size_t m = 0; m < M; ++m) sides[m][k] = std::move(pred.sides[m]);
        } catch (const Error& e) {
            throw Error(e.code(), std::string(e.what()) + " (" + to_string(plane) + " slice " + std::to_string(k) + ")");
        }
    });
    VolumePrediction out;
    out.fused = assemble_volume(fused, plane, vol.dims(), vol.spacing());
    for (auto& s : sides) out.sides.push_back(assemble_volume(s, plane, vol.dims(), vol.spacing()));
    return out;
}

ProbVolume predict_volume(const hnn::HnnParams& params, const LabelVolume& vol, ViewPlane plane) {
    const auto slices = extract_slices(vol, plane);
    std::vector<Image<float>> fused(slices.size());
    parallel_for(slices.size(), [&](std::size_t k) {
        try {
            fused[k] = hnn::forward(params, slices[k]).fused;
        } catch (const Error& e) {
            throw Error(e.code(), std::string(e.what()) + " (" + to_string(plane) + " slice " + std::to_string(k) + ")");
        }
    });
    return assemble_volume(fused, plane, vol.dims(), vol.spacing());
}

namespace {

// Ascending. Sums taken in this order in double do not depend on the input
// order and give back v for (v, v, v).
std::array<float, 3> sorted_triple(float a, float b, float c) {
    return {std::min({a, b, c}), std::max(std::min(a, b), std::min(std::max(a, b), c)), std::max({a, b, c})};
}

}  // namespace

ProbVolume pool_views(std::span<const ProbVolume> maps, const PoolingMode& mode) {
    require(maps.size() == mode.arity(), "pooling mode " + mode.name() + " expects " + std::to_string(mode.arity()) +
                                             " maps, got " + std::to_string(maps.size()));
    for (const auto& m : maps) require(m.dims() == maps[0].dims(), "pooled maps must share dims");
    ProbVolume out(maps[0].dims(), maps[0].spacing());
    const std::size_t n = out.size();
    switch (mode.kind) {
        case PoolingKind::Single:
            out = maps[0];
            break;
        case PoolingKind::MeanPair:
            for (std::size_t i = 0; i < n; ++i) out[i] = 0.5f * (maps[0][i] + maps[1][i]);
            break;
        case PoolingKind::MeanAll:
            for (std::size_t i = 0; i < n; ++i) {
                const auto t = sorted_triple(maps[0][i], maps[1][i], maps[2][i]);
                out[i] = static_cast<float>((static_cast<double>(t[0]) + t[1] + t[2]) / 3.0);
            }
            break;
        case PoolingKind::MaxAll:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::max({maps[0][i], maps[1][i], maps[2][i]});
            break;
        case PoolingKind::MeanMax:
            for (std::size_t i = 0; i < n; ++i) {
                const auto t = sorted_triple(maps[0][i], maps[1][i], maps[2][i]);
                out[i] = static_cast<float>(0.5 * (static_cast<double>(t[1]) + t[2]));
            }
            break;
    }
    return out;
}

ProbVolume pool_planes(const std::array<ProbVolume, 3>& by_plane, const PoolingMode& mode) {
    std::vector<ProbVolume> maps;
    for (auto p : mode.planes()) maps.push_back(by_plane[static_cast<std::size_t>(p)]);
    return pool_views(maps, mode);
}

}  // namespace cseg
