#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cseg/spatial_agg.hpp"
#include "support.hpp"

using namespace cseg;

namespace {

// Sort-based statistics oracle in long double.
std::array<double, kStatCount> ref_stats(std::vector<double> v) {
    std::array<double, kStatCount> out{};
    const auto n = static_cast<long double>(v.size());
    long double mean = 0;
    for (double x : v) mean += x;
    mean /= n;
    long double m2 = 0, m3 = 0, m4 = 0;
    for (double x : v) {
        const long double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    out[0] = static_cast<double>(mean);
    out[1] = static_cast<double>(m2);
    if (v.size() >= 4 && m2 > 0) {
        out[2] = static_cast<double>(m3 / std::pow(m2, 1.5L));
        out[3] = static_cast<double>(m4 / (m2 * m2));
    }
    std::sort(v.begin(), v.end());
    for (int k = 0; k < 8; ++k) {
        const double pos = (20.0 + 10.0 * k) / 100.0 * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        out[4 + k] = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    }
    return out;
}

Superpixel slab(const Dims& e, int z, int x0, int x1) {
    Superpixel s;
    s.z = z;
    for (int y = 0; y < e.y; ++y)
        for (int x = x0; x < x1; ++x)
            s.voxels.push_back(static_cast<std::uint32_t>(x + e.x * (y + e.y * z)));
    return s;
}

}  // namespace

TEST_SUITE("spatial_agg") {

TEST_CASE("constant channel statistics") {
    const std::vector<double> v(17, 3.25);
    const auto s = channel_stats(v);
    CHECK(s[0] == 3.25);
    CHECK(s[1] == 0.0);
    CHECK(s[2] == 0.0);
    CHECK(s[3] == 0.0);
    for (int k = 4; k < 12; ++k) CHECK(s[static_cast<std::size_t>(k)] == 3.25);
}

TEST_CASE("fewer than four values have zero higher moments") {
    const std::vector<double> v{1.0, 2.0, 7.0};
    const auto s = channel_stats(v);
    CHECK(s[1] > 0.0);
    CHECK(s[2] == 0.0);
    CHECK(s[3] == 0.0);
    CHECK(channel_stats(std::vector<double>{4.0})[8] == 4.0);
    CHECK_THROWS_AS(channel_stats(std::vector<double>{}), Error);
}

TEST_CASE("statistics match the sort-based oracle") {
    std::mt19937_64 rng(3);
    std::gamma_distribution<double> g(2.0, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(100);
        for (auto& x : v) x = g(rng);
        const auto s = channel_stats(v);
        const auto r = ref_stats(v);
        for (std::size_t k = 0; k < kStatCount; ++k) CHECK(s[k] == doctest::Approx(r[k]).epsilon(1e-9));
    }
}

TEST_CASE("features are invariant to voxel order") {
    const Dims e{8, 7, 3};
    const auto ct = test::random_hu(e, 1);
    const auto pi = test::random_prob(e, 2), pb = test::random_prob(e, 3);
    auto sp = slab(e, 1, 2, 6);
    const auto f = superpixel_features(sp, ct, pi, pb);
    CHECK(f.size() == 39);
    std::mt19937_64 rng(4);
    std::shuffle(sp.voxels.begin(), sp.voxels.end(), rng);
    const auto g = superpixel_features(sp, ct, pi, pb);
    for (std::size_t k = 0; k < f.size(); ++k) CHECK(g[k] == doctest::Approx(f[k]).epsilon(1e-12));
    for (std::size_t k = 36; k < 39; ++k) {
        CHECK(f[k] >= 0.0);
        CHECK(f[k] <= 1.0);
    }
}

TEST_CASE("centred superpixel has coordinates one half") {
    const Dims e{9, 5, 3};
    const HuVolume ct(e, {});
    const ProbVolume p(e, {}, 0.5f);
    Superpixel sp;
    sp.z = 1;
    sp.voxels = {static_cast<std::uint32_t>(4 + 9 * (2 + 5 * 1))};
    const auto f = superpixel_features(sp, ct, p, p);
    CHECK(f[36] == doctest::Approx(0.5));
    CHECK(f[37] == doctest::Approx(0.5));
    CHECK(f[38] == doctest::Approx(0.5));
    const auto slab_f = superpixel_features(slab(e, 1, 0, 9), ct, p, p);
    CHECK(slab_f[36] == doctest::Approx(0.5));
    CHECK_THROWS_AS(superpixel_features(Superpixel{}, ct, p, p), Error);
}

TEST_CASE("feature channels are laid out CT, interior, boundary") {
    const Dims e{4, 4, 1};
    const HuVolume ct(e, {}, std::int16_t{40});
    const ProbVolume pi(e, {}, 0.75f), pb(e, {}, 0.125f);
    const auto f = superpixel_features(slab(e, 0, 0, 4), ct, pi, pb);
    CHECK(f[0] == 40.0);
    CHECK(f[12] == 0.75);
    CHECK(f[24] == 0.125);
}

TEST_CASE("superpixel labels use the half-overlap rule") {
    const Dims e{4, 1, 1};
    LabelVolume gt(e, {});
    gt(0, 0, 0) = gt(1, 0, 0) = 1;
    std::vector<Superpixel> sps(3);
    sps[0].voxels = {0, 1};  // inside
    sps[1].voxels = {2, 3};  // disjoint
    sps[2].voxels = {1, 2};  // exactly half
    CHECK(label_superpixels(sps, gt) == std::vector<int>{1, 0, 1});
}

TEST_CASE("segmentation at the extreme thresholds") {
    const Dims full{10, 10, 4};
    const BBox3 region{{2, 3, 1}, {8, 9, 3}, ""};
    const auto e = region.extent();
    std::vector<Superpixel> sps{slab(e, 0, 0, 3), slab(e, 0, 3, 6), slab(e, 1, 0, 6)};
    const std::vector<double> scores{0.2, 0.6, 0.9};
    const auto all = predict_segmentation(sps, scores, 0.0, region, full, {});
    CHECK(count_nonzero(all) == region.volume());
    CHECK(all(2, 3, 1) == 1);
    CHECK(all(1, 3, 1) == 0);
    CHECK(count_nonzero(predict_segmentation(sps, scores, 1.0 + 1e-9, region, full, {})) == 0);
    const auto mid = predict_segmentation(sps, scores, 0.6, region, full, {});
    CHECK(count_nonzero(mid) == 3 * 6 + 36);
}

TEST_CASE("segmentation shrinks as the threshold rises") {
    const Dims e{6, 6, 2};
    const BBox3 region{{0, 0, 0}, e, ""};
    std::vector<Superpixel> sps;
    std::vector<double> scores;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int z = 0; z < 2; ++z)
        for (int x = 0; x < 6; ++x) {
            sps.push_back(slab(e, z, x, x + 1));
            scores.push_back(u(rng));
        }
    LabelVolume prev = predict_segmentation(sps, scores, 0.0, region, e, {});
    for (double t : threshold_grid()) {
        const auto cur = predict_segmentation(sps, scores, t, region, e, {});
        for (std::size_t i = 0; i < cur.size(); ++i) CHECK((cur[i] == 0 || prev[i] != 0));
        prev = cur;
    }
}

TEST_CASE("threshold grid and calibration ties") {
    const auto g = threshold_grid();
    REQUIRE(g.size() == 19);
    CHECK(g.front() == doctest::Approx(0.05));
    CHECK(g.back() == doctest::Approx(0.95));
    // Flat on [0.3, 0.6], lower elsewhere: the lowest maximiser wins.
    const double t = calibrate_threshold([](double x) { return x > 0.29 && x < 0.61 ? 0.8 : 0.5; });
    CHECK(t == doctest::Approx(0.30));
    const double peak = calibrate_threshold([](double x) { return -std::abs(x - 0.72); });
    CHECK(peak == doctest::Approx(0.70));
}

TEST_CASE("calibrated threshold beats one half on its training cases") {
    const Dims e{6, 6, 2};
    const BBox3 region{{0, 0, 0}, e, ""};
    LabelVolume gt(e, {});
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 3; ++x) gt(x, y, z) = 1;
    ScoredCase c;
    c.region = region;
    c.gt = &gt;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int z = 0; z < 2; ++z)
        for (int x = 0; x < 6; ++x) {
            c.proposals.push_back(slab(e, z, x, x + 1));
            c.scores.push_back(x < 3 ? 0.3 + 0.4 * u(rng) : 0.1 + 0.4 * u(rng));
        }
    const std::vector<ScoredCase> cases{c};
    const double t = calibrate_threshold(cases);
    auto dsc_at = [&](double th) {
        const auto m = predict_segmentation(c.proposals, c.scores, th, region, e, {});
        double inter = 0, a = 0, b = 0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            inter += m[i] && gt[i];
            a += m[i] != 0;
            b += gt[i] != 0;
        }
        return a + b == 0 ? 1.0 : 2 * inter / (a + b);
    };
    const auto grid = threshold_grid();
    CHECK(std::any_of(grid.begin(), grid.end(), [&](double g) { return std::abs(g - t) < 1e-12; }));
    CHECK(dsc_at(t) >= dsc_at(0.5));
    for (double g : grid) CHECK(dsc_at(t) >= dsc_at(g) - 1e-12);
}

}  // TEST_SUITE
