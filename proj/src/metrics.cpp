#include "cseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cseg {

OverlapMetrics overlap_metrics(const LabelVolume& a, const LabelVolume& b) {
    require(a.dims() == b.dims(), "overlap metrics need masks of equal dims");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return {1.0, 1.0};
    const double inter = static_cast<double>(both);
    return {2.0 * inter / static_cast<double>(na + nb), inter / static_cast<double>(na + nb - both)};
}

LabelVolume surface_voxels(const LabelVolume& mask) {
    LabelVolume out = like<std::uint8_t>(mask);
    const auto& d = mask.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!mask(x, y, z)) continue;
                const bool edge = x == 0 || y == 0 || z == 0 || x == d.x - 1 || y == d.y - 1 || z == d.z - 1 ||
                                  !mask(x - 1, y, z) || !mask(x + 1, y, z) || !mask(x, y - 1, z) ||
                                  !mask(x, y + 1, z) || !mask(x, y, z - 1) || !mask(x, y, z + 1);
                out(x, y, z) = edge ? 1 : 0;
            }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line
// with sample spacing s; infinite samples are not sites.
void edt_line(std::vector<double>& f, double s, std::vector<double>& out, std::vector<int>& v,
              std::vector<double>& zb) {
    const int n = static_cast<int>(f.size());
    const double s2 = s * s;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf) continue;
        const double fq = f[static_cast<std::size_t>(q)] + s2 * q * q;
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            const double fp = f[static_cast<std::size_t>(p)] + s2 * p * p;
            const double cross = (fq - fp) / (2.0 * s2 * (q - p));
            if (cross <= zb[static_cast<std::size_t>(k)]) {
                --k;
                continue;
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            zb[static_cast<std::size_t>(k)] = cross;
            break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            zb[0] = -kInf;
        }
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (j < k && zb[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(q)] = s2 * (q - p) * (q - p) + f[static_cast<std::size_t>(p)];
    }
}

// Squared distance in mm^2 from every voxel to the nearest nonzero voxel.
std::vector<double> squared_edt(const LabelVolume& sites) {
    const auto& d = sites.dims();
    std::vector<double> g(sites.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = sites[i] ? 0.0 : kInf;
    const int len_max = std::max({d.x, d.y, d.z});
    std::vector<double> line, out;
    std::vector<int> v(static_cast<std::size_t>(len_max));
    std::vector<double> zb(static_cast<std::size_t>(len_max) + 1);
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d.x), static_cast<std::size_t>(d.x) * d.y};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = d[axis];
        line.resize(static_cast<std::size_t>(n));
        out.resize(static_cast<std::size_t>(n));
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        for (int j = 0; j < d[a2]; ++j)
            for (int i = 0; i < d[a1]; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * stride[a1] + static_cast<std::size_t>(j) * stride[a2];
                for (int t = 0; t < n; ++t) line[static_cast<std::size_t>(t)] = g[base + static_cast<std::size_t>(t) * stride[axis]];
                edt_line(line, sites.spacing()[axis], out, v, zb);
                for (int t = 0; t < n; ++t) g[base + static_cast<std::size_t>(t) * stride[axis]] = out[static_cast<std::size_t>(t)];
            }
    }
    return g;
}

}  // namespace

SurfaceDistances surface_distances(const LabelVolume& a, const LabelVolume& b) {
    require(a.dims() == b.dims(), "surface distances need masks of equal dims");
    if (count_nonzero(a) == 0 || count_nonzero(b) == 0)
        fail(ErrorCode::UndefinedMetric, "surface distance is undefined for an empty mask");
    const auto sa = surface_voxels(a), sb = surface_voxels(b);
    const auto da = squared_edt(sa), db = squared_edt(sb);
    double hd = 0.0, sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i]) {
            const double dist = std::sqrt(db[i]);
            hd = std::max(hd, dist);
            sum += dist;
            ++count;
        }
        if (sb[i]) {
            const double dist = std::sqrt(da[i]);
            hd = std::max(hd, dist);
            sum += dist;
            ++count;
        }
    }
    return {hd, sum / static_cast<double>(count)};
}

double wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "paired samples must have equal length");
    std::vector<double> diff;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dlt = x[i] - y[i];
        require(std::isfinite(dlt), "paired samples must be finite");
        if (dlt != 0.0) diff.push_back(dlt);
    }
    if (diff.empty()) fail(ErrorCode::DegenerateTest, "all paired differences are zero");
    const std::size_t n = diff.size();
    require(n >= 5, "signed-rank test needs at least 5 non-zero differences, got " + std::to_string(n));

    // Doubled mid-ranks keep everything integral.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(diff[i]) < std::abs(diff[j]); });
    std::vector<long> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
        const long r2 = static_cast<long>(i + 1 + j + 1);  // twice the mean of ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    long w2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (diff[i] > 0) w2 += rank2[i];
    }

    if (n <= 25) {
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        long reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            reach += rank2[i];
            for (long s = reach; s >= rank2[i]; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - rank2[i])];
        }
        double le = 0.0, ge = 0.0;
        for (long s = 0; s <= total2; ++s) {
            if (s <= w2) le += count[static_cast<std::size_t>(s)];
            if (s >= w2) ge += count[static_cast<std::size_t>(s)];
        }
        const double all = std::ldexp(1.0, static_cast<int>(n));
        return std::min(1.0, 2.0 * std::min(le, ge) / all);
    }

    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double w = static_cast<double>(w2) / 2.0;
    const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

double percentile_sorted(std::span<const double> sorted, double p) {
    require(!sorted.empty(), "percentile of an empty sample");
    require(p >= 0.0 && p <= 100.0, "percentile must be in [0, 100]");
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

Summary summarize(std::span<const double> values) {
    require(!values.empty(), "cannot summarise an empty sample");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    Summary out;
    out.count = s.size();
    out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    if (s.size() > 1) {
        double ss = 0.0;
        for (double v : s) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(s.size() - 1));
    }
    out.min = s.front();
    out.max = s.back();
    out.median = percentile_sorted(s, 50.0);
    out.p10 = percentile_sorted(s, 10.0);
    out.p90 = percentile_sorted(s, 90.0);
    return out;
}

}  // namespace cseg
