#pragma once

// Brute-force references for the evaluation metrics: all-pairs surface
// distances, exhaustive signed-rank enumeration and a sort-based summary.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cseg/metrics.hpp"

namespace cseg::test {

inline std::vector<Index3> surface_points(const LabelVolume& m) {
    const auto s = surface_voxels(m);
    std::vector<Index3> out;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i]) out.push_back(s.coord(i));
    return out;
}

// All-pairs surface distances.
inline SurfaceDistances ref_surface(const LabelVolume& a, const LabelVolume& b) {
    const auto pa = surface_points(a), pb = surface_points(b);
    const auto sp = a.spacing();
    auto dist = [&](const Index3& p, const Index3& q) {
        const double dx = (p.x - q.x) * sp.x, dy = (p.y - q.y) * sp.y, dz = (p.z - q.z) * sp.z;
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    };
    double hd = 0.0, sum = 0.0;
    auto one_way = [&](const std::vector<Index3>& from, const std::vector<Index3>& to) {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, dist(p, q));
            hd = std::max(hd, best);
            sum += best;
        }
    };
    one_way(pa, pb);
    one_way(pb, pa);
    return {hd, sum / static_cast<double>(pa.size() + pb.size())};
}

// Two-sided exact p-value by enumerating all 2^n sign assignments.
inline double ref_wilcoxon(const std::vector<double>& d) {
    std::vector<double> nz;
    for (double v : d)
        if (v != 0.0) nz.push_back(v);
    const auto n = nz.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(nz[i]) < std::abs(nz[j]); });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = (i + j) / 2.0 + 1.0;
        i = j + 1;
    }
    double total = 0.0, w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += rank[i];
        if (nz[i] > 0) w_plus += rank[i];
    }
    const double observed = std::abs(w_plus - total / 2.0);
    std::size_t extreme = 0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) w += rank[i];
        if (std::abs(w - total / 2.0) >= observed - 1e-9) ++extreme;
    }
    return static_cast<double>(extreme) / static_cast<double>(std::size_t{1} << n);
}

// Mean, sample std, median and linearly interpolated percentiles over a
// sorted copy, accumulated in long double.
inline Summary ref_summary(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    long double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<long double>(n);
    long double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    auto pct = [&](double p) {
        const double pos = p / 100.0 * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const auto hi = std::min(lo + 1, n - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    Summary s;
    s.count = n;
    s.mean = static_cast<double>(mean);
    s.std = n > 1 ? std::sqrt(static_cast<double>(ss / static_cast<long double>(n - 1))) : 0.0;
    s.median = pct(50);
    s.min = v.front();
    s.max = v.back();
    s.p10 = pct(10);
    s.p90 = pct(90);
    return s;
}

}  // namespace cseg::test
