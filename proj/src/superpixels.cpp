#include "cseg/superpixels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>

#include "cseg/metrics.hpp"
#include "cseg/parallel.hpp"

namespace cseg {

namespace {

constexpr std::uint32_t kUnset = 0xFFFFFFFFu;
constexpr int kDu[4] = {-1, 1, 0, 0};
constexpr int kDv[4] = {0, 0, -1, 1};

Image<float> box_smooth(const Image<float>& in, int r) {
    if (r <= 0) return in;
    const int w = in.width, h = in.height;
    Image<float> out(w, h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double s = 0.0;
            for (int dv = -r; dv <= r; ++dv)
                for (int du = -r; du <= r; ++du)
                    s += in(std::clamp(u + du, 0, w - 1), std::clamp(v + dv, 0, h - 1));
            out(u, v) = static_cast<float>(s / ((2 * r + 1) * (2 * r + 1)));
        }
    return out;
}

std::uint32_t find(std::vector<std::uint32_t>& parent, std::uint32_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
}

}  // namespace

LabelImage watershed_partition(const Image<float>& boundary, const WatershedOptions& opt) {
    require(boundary.width >= 1 && boundary.height >= 1, "watershed needs a non-empty map");
    require(opt.levels >= 2 && opt.levels <= 65536, "watershed levels must be in [2, 65536]");
    const int w = boundary.width, h = boundary.height;
    const auto n = boundary.size();
    const auto smooth = box_smooth(boundary, opt.smoothing_radius);
    std::vector<int> q(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = std::clamp(static_cast<double>(smooth.data[i]), 0.0, 1.0);
        q[i] = static_cast<int>(std::floor(v * (opt.levels - 1) + 0.5));
    }

    // Regional minima: 4-connected plateaus with no lower neighbour.
    LabelImage labels(w, h, kUnset);
    std::vector<int> seed_value;
    std::vector<std::uint8_t> visited(n, 0);
    std::vector<std::size_t> plateau, stack;
    for (std::size_t s = 0; s < n; ++s) {
        if (visited[s]) continue;
        plateau.clear();
        stack.assign(1, s);
        visited[s] = 1;
        bool minimum = true;
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            plateau.push_back(i);
            const int u = static_cast<int>(i % w), v = static_cast<int>(i / w);
            for (int k = 0; k < 4; ++k) {
                const int nu = u + kDu[k], nv = v + kDv[k];
                if (nu < 0 || nv < 0 || nu >= w || nv >= h) continue;
                const auto j = static_cast<std::size_t>(nv) * w + nu;
                if (q[j] < q[i]) minimum = false;
                if (q[j] == q[i] && !visited[j]) {
                    visited[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        if (!minimum) continue;
        const auto label = static_cast<std::uint32_t>(seed_value.size());
        seed_value.push_back(q[s]);
        for (auto i : plateau) labels.data[i] = label;
    }

    // Priority flood: (value, push order). A pixel joins the basin of its
    // neighbour flooded at the lowest level; a tie between basins there
    // makes it a ridge pixel, resolved by lower seed value then lower label.
    using Item = std::tuple<int, std::uint64_t, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    std::vector<std::uint8_t> queued(n, 0);
    std::vector<int> level(n, 0);
    std::uint64_t order = 0;
    auto push_neighbours = [&](std::size_t i) {
        const int u = static_cast<int>(i % w), v = static_cast<int>(i / w);
        for (int k = 0; k < 4; ++k) {
            const int nu = u + kDu[k], nv = v + kDv[k];
            if (nu < 0 || nv < 0 || nu >= w || nv >= h) continue;
            const auto j = static_cast<std::size_t>(nv) * w + nu;
            if (labels.data[j] != kUnset || queued[j]) continue;
            queued[j] = 1;
            pq.emplace(q[j], order++, j);
        }
    };
    for (std::size_t i = 0; i < n; ++i)
        if (labels.data[i] != kUnset) {
            level[i] = q[i];
            queued[i] = 1;
        }
    for (std::size_t i = 0; i < n; ++i)
        if (labels.data[i] != kUnset) push_neighbours(i);
    int flood = 0;
    while (!pq.empty()) {
        const auto [key, seq, i] = pq.top();
        pq.pop();
        flood = std::max(flood, key);
        const int u = static_cast<int>(i % w), v = static_cast<int>(i / w);
        std::uint32_t best = kUnset;
        int best_level = 0;
        for (int k = 0; k < 4; ++k) {
            const int nu = u + kDu[k], nv = v + kDv[k];
            if (nu < 0 || nv < 0 || nu >= w || nv >= h) continue;
            const auto j = static_cast<std::size_t>(nv) * w + nu;
            const auto l = labels.data[j];
            if (l == kUnset) continue;
            const bool better = best == kUnset || level[j] < best_level ||
                                (level[j] == best_level && (seed_value[l] < seed_value[best] ||
                                                            (seed_value[l] == seed_value[best] && l < best)));
            if (better) {
                best = l;
                best_level = level[j];
            }
        }
        labels.data[i] = best;
        level[i] = flood;
        push_neighbours(i);
    }
    return labels;
}

std::uint32_t region_count(const LabelImage& labels) {
    std::uint32_t m = 0;
    for (auto l : labels.data) m = std::max(m, l + 1);
    return m;
}

bool is_partition(const LabelImage& labels, std::uint32_t count) {
    if (labels.size() != static_cast<std::size_t>(labels.width) * labels.height) return false;
    std::vector<std::uint8_t> used(count, 0);
    for (auto l : labels.data) {
        if (l >= count) return false;
        used[l] = 1;
    }
    return std::all_of(used.begin(), used.end(), [](auto u) { return u != 0; });
}

Hierarchy merge_hierarchy(const LabelImage& base, std::span<const Image<float>> scales, double quantile) {
    require(!scales.empty(), "merge_hierarchy needs at least one scale map");
    require(quantile >= 0.0 && quantile <= 1.0, "level-2 quantile must be in [0, 1]");
    for (const auto& s : scales)
        require(s.width == base.width && s.height == base.height, "scale maps must match the base partition");
    const int w = base.width, h = base.height;
    const auto n = base.size();
    std::vector<double> avg(n, 0.0);
    for (const auto& s : scales)
        for (std::size_t i = 0; i < n; ++i) avg[i] += s.data[i];
    for (auto& a : avg) a /= static_cast<double>(scales.size());

    std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<double, std::size_t>> acc;
    auto visit = [&](std::size_t i, std::size_t j) {
        const auto a = base.data[i], b = base.data[j];
        if (a == b) return;
        auto& e = acc[{std::min(a, b), std::max(a, b)}];
        e.first += 0.5 * (avg[i] + avg[j]);
        ++e.second;
    };
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            const auto i = static_cast<std::size_t>(v) * w + u;
            if (u + 1 < w) visit(i, i + 1);
            if (v + 1 < h) visit(i, i + static_cast<std::size_t>(w));
        }

    struct Edge {
        double weight;
        std::uint32_t a, b;
    };
    std::vector<Edge> edges;
    for (const auto& [k, e] : acc) edges.push_back({e.first / static_cast<double>(e.second), k.first, k.second});
    std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
    });

    Hierarchy hy;
    hy.level1 = base;
    hy.level1_count = region_count(base);

    std::vector<double> weights;
    for (const auto& e : edges) weights.push_back(e.weight);
    hy.level2_threshold = weights.empty() ? 0.0 : percentile_sorted(weights, 100.0 * quantile);

    std::vector<std::uint32_t> parent(hy.level1_count);
    std::iota(parent.begin(), parent.end(), 0u);
    std::vector<std::uint32_t> level2_parent;
    bool level2_done = false;
    for (const auto& e : edges) {
        if (!level2_done && !(e.weight < hy.level2_threshold)) {
            level2_parent = parent;
            level2_done = true;
        }
        const auto ra = find(parent, e.a), rb = find(parent, e.b);
        if (ra == rb) continue;
        hy.merges.push_back({ra, rb, e.weight});
        parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    if (!level2_done) level2_parent = parent;

    // Level-2 labels renumbered by first appearance in scan order.
    std::vector<std::uint32_t> remap(hy.level1_count, kUnset);
    hy.level2 = LabelImage(w, h);
    std::uint32_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto root = find(level2_parent, base.data[i]);
        if (remap[root] == kUnset) remap[root] = next++;
        hy.level2.data[i] = remap[root];
    }
    hy.level2_count = next;
    return hy;
}

std::vector<Superpixel> proposals_first_two_levels(const Hierarchy& hy, const Dims& e, int z) {
    require(hy.level1.width == e.x && hy.level1.height == e.y, "hierarchy does not match the region extent");
    require(z >= 0 && z < e.z, "slice outside the region");
    const auto offset = static_cast<std::uint32_t>(static_cast<std::size_t>(e.x) * e.y * z);
    auto collect = [&](const LabelImage& lab, std::uint32_t count, int level) {
        std::vector<Superpixel> out(count);
        for (auto& s : out) {
            s.z = z;
            s.level = level;
        }
        for (std::size_t i = 0; i < lab.size(); ++i)
            out[lab.data[i]].voxels.push_back(offset + static_cast<std::uint32_t>(i));
        return out;
    };
    auto result = collect(hy.level1, hy.level1_count, 1);
    std::set<std::vector<std::uint32_t>> seen;
    for (const auto& s : result) seen.insert(s.voxels);
    for (auto& s : collect(hy.level2, hy.level2_count, 2))
        if (seen.insert(s.voxels).second) result.push_back(std::move(s));
    return result;
}

std::vector<const Superpixel*> RegionSuperpixels::level1() const {
    std::vector<const Superpixel*> out;
    for (const auto& s : proposals)
        if (s.level == 1) out.push_back(&s);
    return out;
}

RegionSuperpixels build_superpixels(const BBox3& region, std::span<const ProbVolume> scales,
                                    const SuperpixelOptions& opt) {
    require(!scales.empty(), "superpixels need at least one boundary map");
    const auto e = region.extent();
    for (const auto& s : scales) require(s.dims() == e, "boundary maps must be cropped to the region");
    std::vector<std::vector<Image<float>>> per_scale;
    for (const auto& s : scales) per_scale.push_back(extract_slices(s, ViewPlane::Axial));

    RegionSuperpixels out;
    out.region = region;
    out.slices.resize(static_cast<std::size_t>(e.z));
    std::vector<std::vector<Superpixel>> props(static_cast<std::size_t>(e.z));
    parallel_for(static_cast<std::size_t>(e.z), [&](std::size_t z) {
        std::vector<Image<float>> maps;
        for (const auto& s : per_scale) maps.push_back(s[z]);
        const auto base = watershed_partition(maps.back(), opt.watershed);
        out.slices[z] = merge_hierarchy(base, maps, opt.level2_quantile);
        props[z] = proposals_first_two_levels(out.slices[z], e, static_cast<int>(z));
    });
    // Level-1 proposals of all slices first, then level-2 ones.
    for (int level : {1, 2})
        for (auto& p : props)
            for (auto& s : p)
                if (s.level == level) out.proposals.push_back(s);
    return out;
}

OracleResult optimal_assignment(const RegionSuperpixels& sp, const LabelVolume& gt) {
    require(sp.region.valid_for(gt.dims()), "superpixel region outside the ground truth volume");
    const auto gt_crop = crop(gt, sp.region);
    LabelVolume part = like<std::uint8_t>(gt_crop);
    for (const auto* s : sp.level1()) {
        std::size_t inside = 0;
        for (auto v : s->voxels) inside += gt_crop[v] ? 1 : 0;
        if (2 * inside >= s->voxels.size())
            for (auto v : s->voxels) part[v] = 1;
    }
    OracleResult r;
    r.mask = like<std::uint8_t>(gt);
    paste(r.mask, part, sp.region);
    r.dsc = overlap_metrics(r.mask, gt).dsc;
    return r;
}

}  // namespace cseg
