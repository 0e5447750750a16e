#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cseg/error.hpp"

namespace cseg {

struct Index3 {
    int x = 0;
    int y = 0;
    int z = 0;

    int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    friend bool operator==(const Index3&, const Index3&) = default;
};

using Dims = Index3;

struct Spacing {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;

    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

inline std::size_t voxel_count(const Dims& d) {
    return static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y) *
           static_cast<std::size_t>(d.z);
}

// 3D scalar grid, x fastest: index = x + nx*(y + ny*z). Used for HU (int16),
// probabilities (float) and labels (uint8).
template <typename T>
class Volume {
public:
    using value_type = T;

    Volume() = default;

    Volume(Dims dims, Spacing spacing, T fill = T{})
        : dims_(dims), spacing_(spacing), data_((check(dims, spacing), voxel_count(dims)), fill) {}

    Volume(Dims dims, Spacing spacing, std::vector<T> data)
        : dims_(dims), spacing_(spacing), data_(std::move(data)) {
        check(dims, spacing);
        require(data_.size() == voxel_count(dims), "volume data length does not match dims");
    }

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims_.x) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.y) * static_cast<std::size_t>(z));
    }
    std::size_t index(const Index3& p) const { return index(p.x, p.y, p.z); }

    Index3 coord(std::size_t i) const {
        const auto nx = static_cast<std::size_t>(dims_.x);
        const auto ny = static_cast<std::size_t>(dims_.y);
        return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / (nx * ny))};
    }

    bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
    }

    T& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    static int check(const Dims& d, const Spacing& s) {
        require(d.x >= 1 && d.y >= 1 && d.z >= 1, "volume dims must be >= 1");
        require(s.x > 0 && s.y > 0 && s.z > 0, "volume spacing must be > 0");
        return 0;
    }

    Dims dims_{};
    Spacing spacing_{};
    std::vector<T> data_;
};

using HuVolume = Volume<std::int16_t>;
using ProbVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

template <typename T, typename U>
Volume<T> like(const Volume<U>& ref, T fill = T{}) {
    return Volume<T>(ref.dims(), ref.spacing(), fill);
}

// 2D image, x fastest (row-major over rows of width pixels).
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, T fill = T{})
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t size() const { return data.size(); }
    T& operator()(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
    const T& operator()(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }

    friend bool operator==(const Image&, const Image&) = default;
};

// Axial slices are (x,y) planes indexed by z; coronal (x,z) indexed by y;
// sagittal (y,z) indexed by x. In-plane u is the first listed axis.
enum class ViewPlane { Axial, Coronal, Sagittal };

inline constexpr std::array<ViewPlane, 3> kAllPlanes{ViewPlane::Axial, ViewPlane::Coronal,
                                                      ViewPlane::Sagittal};

std::string to_string(ViewPlane plane);
ViewPlane parse_view_plane(const std::string& name);

// Axis normal to the plane (0=x, 1=y, 2=z), and the two in-plane axes (u, v).
int normal_axis(ViewPlane plane);
std::array<int, 2> plane_axes(ViewPlane plane);

struct BBox3 {
    Index3 lo;  // inclusive
    Index3 hi;  // exclusive
    std::string source;

    Dims extent() const { return {hi.x - lo.x, hi.y - lo.y, hi.z - lo.z}; }
    std::size_t volume() const { return voxel_count(extent()); }
    bool contains(const Index3& p) const {
        return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x < hi.x && p.y < hi.y && p.z < hi.z;
    }
    bool valid_for(const Dims& dims) const;

    friend bool operator==(const BBox3& a, const BBox3& b) { return a.lo == b.lo && a.hi == b.hi; }
};

BBox3 make_bbox(Index3 lo, Index3 hi, const Dims& dims, std::string source);
BBox3 full_box(const Dims& dims, std::string source = "full");

// Tight box of nonzero voxels; throws NoCandidate for an empty mask.
BBox3 tight_box(const LabelVolume& mask, std::string source = "tight");

// Grow by pad voxels per side, clamped to dims.
BBox3 expand(const BBox3& box, int pad, const Dims& dims);

// round(255 * clamp((v - lo) / (hi - lo), 0, 1)), half rounded up.
LabelVolume window_rescale(const HuVolume& vol, double lo, double hi);

template <typename T>
std::vector<Image<T>> extract_slices(const Volume<T>& vol, ViewPlane plane);

template <typename T>
Volume<T> assemble_volume(const std::vector<Image<T>>& slices, ViewPlane plane, Dims dims,
                          Spacing spacing = {});

template <typename T>
Volume<T> crop(const Volume<T>& vol, const BBox3& box);

// Writes `part` into `full` at box.lo; the inverse of crop.
template <typename T>
void paste(Volume<T>& full, const Volume<T>& part, const BBox3& box);

std::size_t count_nonzero(const LabelVolume& mask);

}  // namespace cseg
