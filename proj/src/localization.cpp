#include "cseg/localization.hpp"

#include <array>
#include <cstdlib>
#include <limits>

namespace cseg {

namespace {

constexpr std::array<Index3, 6> kFace{{{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

LabelVolume morph_once(const LabelVolume& in, MorphOp op) {
    const auto& d = in.dims();
    LabelVolume out = like<std::uint8_t>(in);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const bool self = in(x, y, z) != 0;
                bool v = self;
                for (const auto& o : kFace) {
                    const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
                    if (!in.contains(nx, ny, nz)) continue;
                    const bool n = in(nx, ny, nz) != 0;
                    if (op == MorphOp::Erode && !n) {
                        v = false;
                        break;
                    }
                    if (op == MorphOp::Dilate && n) {
                        v = true;
                        break;
                    }
                }
                out(x, y, z) = v ? 1 : 0;
            }
    return out;
}

}  // namespace

LabelVolume morphology(const LabelVolume& mask, MorphOp op, int radius) {
    require(radius >= 1, "morphology radius must be >= 1");
    LabelVolume cur = mask;
    for (int r = 0; r < radius; ++r) cur = morph_once(cur, op);
    return cur;
}

Components label_components(const LabelVolume& mask, int connectivity) {
    require(connectivity == 6 || connectivity == 26, "connectivity must be 6 or 26");
    std::vector<Index3> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (connectivity == 6 && manhattan != 1) continue;
                offsets.push_back({dx, dy, dz});
            }

    Components c{Volume<std::uint32_t>(mask.dims(), mask.spacing()), {0}};
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < mask.size(); ++seed) {
        if (!mask[seed] || c.labels[seed]) continue;
        const auto label = static_cast<std::uint32_t>(c.sizes.size());
        std::size_t size = 0;
        c.labels[seed] = label;
        stack.push_back(seed);
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            ++size;
            const auto p = mask.coord(i);
            for (const auto& o : offsets) {
                const int nx = p.x + o.x, ny = p.y + o.y, nz = p.z + o.z;
                if (!mask.contains(nx, ny, nz)) continue;
                const auto j = mask.index(nx, ny, nz);
                if (mask[j] && !c.labels[j]) {
                    c.labels[j] = label;
                    stack.push_back(j);
                }
            }
        }
        c.sizes.push_back(size);
    }
    return c;
}

LabelVolume largest_component(const LabelVolume& mask, int connectivity) {
    const auto c = label_components(mask, connectivity);
    LabelVolume out = like<std::uint8_t>(mask);
    if (c.count() == 0) return out;
    // Labels follow first occurrence, so the first maximal label has the
    // smallest minimum linear index.
    std::size_t best = 1;
    for (std::size_t k = 2; k < c.sizes.size(); ++k)
        if (c.sizes[k] > c.sizes[best]) best = k;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c.labels[i] == best ? 1 : 0;
    return out;
}

LabelVolume threshold_mask(const ProbVolume& prob, float threshold) {
    LabelVolume out = like<std::uint8_t>(prob);
    for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1 : 0;
    return out;
}

CandidateRegion candidate_region(const ProbVolume& prob, float threshold, int pad) {
    require(threshold > 0.0f && threshold < 1.0f, "candidate threshold must be in (0, 1)");
    require(pad >= 0, "candidate pad must be >= 0");
    const auto thresholded = threshold_mask(prob, threshold);
    if (count_nonzero(thresholded) == 0)
        fail(ErrorCode::NoCandidate, "no voxel reaches the candidate threshold");

    CandidateRegion r;
    const auto eroded = morphology(thresholded, MorphOp::Erode, 1);
    if (count_nonzero(eroded) == 0) {
        r.erosion_fallback = true;
        r.mask = largest_component(thresholded, 26);
    } else {
        r.mask = morphology(largest_component(eroded, 26), MorphOp::Dilate, 1);
    }
    r.box = expand(tight_box(r.mask, "candidate"), pad, prob.dims());
    return r;
}

BoxStats bbox_stats(const BBox3& box, const LabelVolume& gt) {
    require(box.valid_for(gt.dims()), "box is not valid for the gt volume");
    std::size_t total = 0, inside = 0;
    const auto& d = gt.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!gt(x, y, z)) continue;
                ++total;
                if (box.contains({x, y, z})) ++inside;
            }
    if (total == 0) fail(ErrorCode::UndefinedMetric, "recall is undefined for an empty ground truth");
    return {static_cast<double>(inside) / static_cast<double>(total),
            1.0 - static_cast<double>(box.volume()) / static_cast<double>(voxel_count(d))};
}

}  // namespace cseg
