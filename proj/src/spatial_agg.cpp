#include "cseg/spatial_agg.hpp"

#include <algorithm>
#include <cmath>

#include "cseg/metrics.hpp"
#include "cseg/parallel.hpp"

namespace cseg {

std::array<double, kStatCount> channel_stats(std::span<const double> values) {
    require(!values.empty(), "statistics of an empty sample");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    std::array<double, kStatCount> out{};
    const auto n = static_cast<double>(s.size());
    if (s.front() == s.back()) {
        out[0] = s.front();
    } else {
        double mean = 0.0;
        for (double v : s) mean += v;
        mean /= n;
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (double v : s) {
            const double d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        out[0] = mean;
        out[1] = m2;
        if (s.size() >= 4 && m2 > 0.0) {
            out[2] = m3 / std::pow(m2, 1.5);
            out[3] = m4 / (m2 * m2);
        }
    }
    for (int k = 0; k < 8; ++k) out[4 + static_cast<std::size_t>(k)] = percentile_sorted(s, 20.0 + 10.0 * k);
    return out;
}

FeatureVector superpixel_features(const Superpixel& sp, const HuVolume& ct, const ProbVolume& interior,
                                  const ProbVolume& boundary) {
    require(!sp.voxels.empty(), "superpixel has no voxels");
    require(ct.dims() == interior.dims() && ct.dims() == boundary.dims(), "feature channels must share dims");
    const auto e = ct.dims();
    const auto n = sp.voxels.size();
    std::vector<double> a(n), b(n), c(n);
    double mx = 0.0, my = 0.0, mz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = sp.voxels[i];
        require(v < ct.size(), "superpixel voxel outside the region");
        a[i] = ct[v];
        b[i] = interior[v];
        c[i] = boundary[v];
        const auto p = ct.coord(v);
        mx += p.x;
        my += p.y;
        mz += p.z;
    }
    FeatureVector f{};
    std::size_t k = 0;
    for (const auto* ch : {&a, &b, &c})
        for (double s : channel_stats(*ch)) f[k++] = s;
    const double dn = static_cast<double>(n);
    f[k++] = (mx / dn + 0.5) / e.x;
    f[k++] = (my / dn + 0.5) / e.y;
    f[k++] = (mz / dn + 0.5) / e.z;
    return f;
}

std::vector<int> label_superpixels(std::span<const Superpixel> proposals, const LabelVolume& gt_crop) {
    std::vector<int> labels;
    labels.reserve(proposals.size());
    for (const auto& s : proposals) {
        std::size_t inside = 0;
        for (auto v : s.voxels) inside += gt_crop[v] ? 1 : 0;
        labels.push_back(2 * inside >= s.voxels.size() ? 1 : 0);
    }
    return labels;
}

std::vector<double> score_superpixels(const forest::ForestModel& model, std::span<const FeatureVector> features) {
    std::vector<double> out(features.size());
    parallel_for(features.size(), [&](std::size_t i) {
        std::array<float, kFeatureCount> x{};
        std::copy(features[i].begin(), features[i].end(), x.begin());
        out[i] = model.probability(x);
    });
    return out;
}

LabelVolume predict_segmentation(std::span<const Superpixel> proposals, std::span<const double> scores,
                                 double threshold, const BBox3& region, const Dims& full_dims,
                                 const Spacing& spacing) {
    require(proposals.size() == scores.size(), "one score per proposal is required");
    require(region.valid_for(full_dims), "segmentation region outside the volume");
    LabelVolume part(region.extent(), spacing);
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        if (!(scores[i] >= threshold)) continue;
        for (auto v : proposals[i].voxels) part[v] = 1;
    }
    LabelVolume full(full_dims, spacing);
    paste(full, part, region);
    return full;
}

std::vector<double> threshold_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 19; ++i) g.push_back(i / 20.0);
    return g;
}

double calibrate_threshold(const std::function<double(double)>& mean_dsc) {
    double best_t = 0.0, best = -1.0;
    for (double t : threshold_grid()) {
        const double d = mean_dsc(t);
        if (d > best) {
            best = d;
            best_t = t;
        }
    }
    return best_t;
}

double calibrate_threshold(std::span<const ScoredCase> cases) {
    require(!cases.empty(), "calibration needs at least one case");
    for (const auto& c : cases) {
        require(c.gt && count_nonzero(*c.gt) > 0, "calibration cases need a non-empty ground truth");
        require(c.proposals.size() == c.scores.size(), "one score per proposal is required");
    }
    return calibrate_threshold([&](double t) {
        double sum = 0.0;
        for (const auto& c : cases) {
            const auto mask = predict_segmentation(c.proposals, c.scores, t, c.region, c.gt->dims(), c.gt->spacing());
            sum += overlap_metrics(mask, *c.gt).dsc;
        }
        return sum / static_cast<double>(cases.size());
    });
}

}  // namespace cseg
