#include "cseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cseg {

std::string to_string(ViewPlane plane) {
    switch (plane) {
        case ViewPlane::Axial: return "axial";
        case ViewPlane::Coronal: return "coronal";
        case ViewPlane::Sagittal: return "sagittal";
    }
    return "?";
}

ViewPlane parse_view_plane(const std::string& name) {
    if (name == "axial" || name == "ax") return ViewPlane::Axial;
    if (name == "coronal" || name == "co") return ViewPlane::Coronal;
    if (name == "sagittal" || name == "sa") return ViewPlane::Sagittal;
    fail(ErrorCode::InvalidArgument, "unknown view plane '" + name + "'");
}

int normal_axis(ViewPlane plane) {
    switch (plane) {
        case ViewPlane::Axial: return 2;
        case ViewPlane::Coronal: return 1;
        case ViewPlane::Sagittal: return 0;
    }
    return 2;
}

std::array<int, 2> plane_axes(ViewPlane plane) {
    switch (plane) {
        case ViewPlane::Axial: return {0, 1};
        case ViewPlane::Coronal: return {0, 2};
        case ViewPlane::Sagittal: return {1, 2};
    }
    return {0, 1};
}

bool BBox3::valid_for(const Dims& dims) const {
    for (int a = 0; a < 3; ++a) {
        if (lo[a] < 0 || lo[a] >= hi[a] || hi[a] > dims[a]) return false;
    }
    return true;
}

BBox3 make_bbox(Index3 lo, Index3 hi, const Dims& dims, std::string source) {
    BBox3 box{lo, hi, std::move(source)};
    require(box.valid_for(dims), "bounding box outside volume or empty");
    return box;
}

BBox3 full_box(const Dims& dims, std::string source) {
    return BBox3{{0, 0, 0}, dims, std::move(source)};
}

BBox3 tight_box(const LabelVolume& mask, std::string source) {
    const auto& d = mask.dims();
    Index3 lo{d.x, d.y, d.z};
    Index3 hi{-1, -1, -1};
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!mask(x, y, z)) continue;
                lo = {std::min(lo.x, x), std::min(lo.y, y), std::min(lo.z, z)};
                hi = {std::max(hi.x, x), std::max(hi.y, y), std::max(hi.z, z)};
            }
    if (hi.x < 0) fail(ErrorCode::NoCandidate, "empty mask has no bounding box");
    return BBox3{lo, {hi.x + 1, hi.y + 1, hi.z + 1}, std::move(source)};
}

BBox3 expand(const BBox3& box, int pad, const Dims& dims) {
    BBox3 out = box;
    for (int a = 0; a < 3; ++a) {
        out.lo[a] = std::max(0, box.lo[a] - pad);
        out.hi[a] = std::min(dims[a], box.hi[a] + pad);
    }
    return out;
}

LabelVolume window_rescale(const HuVolume& vol, double lo, double hi) {
    require(lo < hi, "degenerate intensity window");
    LabelVolume out(vol.dims(), vol.spacing());
    const double width = hi - lo;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const double t = std::clamp((static_cast<double>(vol[i]) - lo) / width, 0.0, 1.0);
        out[i] = static_cast<std::uint8_t>(std::floor(255.0 * t + 0.5));
    }
    return out;
}

namespace {

struct SliceGeometry {
    int width;
    int height;
    int count;
};

SliceGeometry geometry(const Dims& d, ViewPlane plane) {
    const auto axes = plane_axes(plane);
    return {d[axes[0]], d[axes[1]], d[normal_axis(plane)]};
}

}  // namespace

template <typename T>
std::vector<Image<T>> extract_slices(const Volume<T>& vol, ViewPlane plane) {
    const auto g = geometry(vol.dims(), plane);
    const auto axes = plane_axes(plane);
    const int n_axis = normal_axis(plane);
    std::vector<Image<T>> slices;
    slices.reserve(static_cast<std::size_t>(g.count));
    for (int k = 0; k < g.count; ++k) {
        Image<T> img(g.width, g.height);
        Index3 p;
        p[n_axis] = k;
        for (int v = 0; v < g.height; ++v) {
            p[axes[1]] = v;
            for (int u = 0; u < g.width; ++u) {
                p[axes[0]] = u;
                img(u, v) = vol(p.x, p.y, p.z);
            }
        }
        slices.push_back(std::move(img));
    }
    return slices;
}

template <typename T>
Volume<T> assemble_volume(const std::vector<Image<T>>& slices, ViewPlane plane, Dims dims,
                          Spacing spacing) {
    const auto g = geometry(dims, plane);
    require(static_cast<int>(slices.size()) == g.count, "slice count does not match dims for plane");
    const auto axes = plane_axes(plane);
    const int n_axis = normal_axis(plane);
    Volume<T> vol(dims, spacing);
    for (int k = 0; k < g.count; ++k) {
        const auto& img = slices[static_cast<std::size_t>(k)];
        require(img.width == g.width && img.height == g.height && img.size() == static_cast<std::size_t>(g.width) * g.height,
                "slice shape does not match dims for plane");
        Index3 p;
        p[n_axis] = k;
        for (int v = 0; v < g.height; ++v) {
            p[axes[1]] = v;
            for (int u = 0; u < g.width; ++u) {
                p[axes[0]] = u;
                vol(p.x, p.y, p.z) = img(u, v);
            }
        }
    }
    return vol;
}

template <typename T>
Volume<T> crop(const Volume<T>& vol, const BBox3& box) {
    require(box.valid_for(vol.dims()), "crop box outside volume");
    const auto e = box.extent();
    Volume<T> out(e, vol.spacing());
    for (int z = 0; z < e.z; ++z)
        for (int y = 0; y < e.y; ++y) {
            const auto src = vol.index(box.lo.x, box.lo.y + y, box.lo.z + z);
            std::copy_n(vol.data().begin() + static_cast<std::ptrdiff_t>(src), e.x,
                        out.data().begin() + static_cast<std::ptrdiff_t>(out.index(0, y, z)));
        }
    return out;
}

template <typename T>
void paste(Volume<T>& full, const Volume<T>& part, const BBox3& box) {
    require(box.valid_for(full.dims()) && box.extent() == part.dims(), "paste box mismatch");
    const auto e = box.extent();
    for (int z = 0; z < e.z; ++z)
        for (int y = 0; y < e.y; ++y) {
            const auto dst = full.index(box.lo.x, box.lo.y + y, box.lo.z + z);
            std::copy_n(part.data().begin() + static_cast<std::ptrdiff_t>(part.index(0, y, z)), e.x,
                        full.data().begin() + static_cast<std::ptrdiff_t>(dst));
        }
}

std::size_t count_nonzero(const LabelVolume& mask) {
    return static_cast<std::size_t>(std::count_if(mask.data().begin(), mask.data().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

#define CSEG_INSTANTIATE(T)                                                                       \
    template std::vector<Image<T>> extract_slices(const Volume<T>&, ViewPlane);                   \
    template Volume<T> assemble_volume(const std::vector<Image<T>>&, ViewPlane, Dims, Spacing);   \
    template Volume<T> crop(const Volume<T>&, const BBox3&);                                      \
    template void paste(Volume<T>&, const Volume<T>&, const BBox3&);

CSEG_INSTANTIATE(std::int16_t)
CSEG_INSTANTIATE(float)
CSEG_INSTANTIATE(std::uint8_t)
CSEG_INSTANTIATE(std::uint32_t)

#undef CSEG_INSTANTIATE

}  // namespace cseg
