#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cseg/metrics.hpp"
#include "metric_reference.hpp"
#include "support.hpp"

using namespace cseg;

TEST_SUITE("metrics") {

TEST_CASE("overlap examples") {
    const Dims d{10, 1, 1};
    LabelVolume a(d, {}), b(d, {});
    for (int x = 0; x < 4; ++x) a(x, 0, 0) = 1;
    for (int x = 1; x < 7; ++x) b(x, 0, 0) = 1;
    auto m = overlap_metrics(a, b);
    CHECK(m.dsc == doctest::Approx(0.6));
    CHECK(m.jaccard == doctest::Approx(3.0 / 7.0));
    m = overlap_metrics(a, a);
    CHECK(m.dsc == 1.0);
    CHECK(m.jaccard == 1.0);
    LabelVolume c(d, {});
    c(9, 0, 0) = 1;
    m = overlap_metrics(a, c);
    CHECK(m.dsc == 0.0);
    CHECK(m.jaccard == 0.0);
    m = overlap_metrics(LabelVolume(d, {}), LabelVolume(d, {}));
    CHECK(m.dsc == 1.0);
    CHECK(m.jaccard == 1.0);
    CHECK_THROWS_AS(overlap_metrics(a, LabelVolume({5, 2, 1}, {})), Error);
}

TEST_CASE("dsc and jaccard identity") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto a = test::random_mask({6, 5, 4}, 0.1 + 0.015 * static_cast<double>(seed), seed);
        const auto b = test::random_mask({6, 5, 4}, 0.4, seed + 100);
        const auto m = overlap_metrics(a, b);
        CHECK(std::abs(m.dsc - 2.0 * m.jaccard / (1.0 + m.jaccard)) <= 1e-12);
    }
}

TEST_CASE("surface distance examples") {
    const Dims d{12, 6, 6};
    const auto a = test::box_mask(d, {1, 1, 1}, {3, 3, 3});
    const auto b = test::box_mask(d, {4, 1, 1}, {6, 3, 3});
    const auto s = surface_distances(a, b);
    CHECK(s.hausdorff_mm == doctest::Approx(3.0));
    const auto same = surface_distances(a, a);
    CHECK(same.hausdorff_mm == 0.0);
    CHECK(same.avgdist_mm == 0.0);
    try {
        surface_distances(a, LabelVolume(d, {}));
        FAIL("expected an undefined metric");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UndefinedMetric);
    }
}

TEST_CASE("surface distances match all pairs on random 8^3 masks") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const Spacing sp{0.7 + 0.05 * static_cast<double>(seed), 1.1, 2.5};
        auto a = test::random_mask({8, 8, 8}, 0.15, seed);
        auto b = test::random_mask({8, 8, 8}, 0.3, seed + 50);
        a = LabelVolume(a.dims(), sp, a.data());
        b = LabelVolume(b.dims(), sp, b.data());
        const auto got = surface_distances(a, b);
        const auto ref = test::ref_surface(a, b);
        CHECK(got.hausdorff_mm == doctest::Approx(ref.hausdorff_mm).epsilon(1e-9));
        CHECK(got.avgdist_mm == doctest::Approx(ref.avgdist_mm).epsilon(1e-9));
        CHECK(got.hausdorff_mm >= got.avgdist_mm);
        CHECK(got.avgdist_mm >= 0.0);
    }
}

TEST_CASE("surface voxels of a cube") {
    const auto m = test::box_mask({6, 6, 6}, {1, 1, 1}, {5, 5, 5});
    CHECK(count_nonzero(surface_voxels(m)) == 64 - 8);
    const auto full = test::box_mask({3, 3, 3}, {0, 0, 0}, {3, 3, 3});
    CHECK(count_nonzero(surface_voxels(full)) == 26);
}

TEST_CASE("wilcoxon with every difference on one side") {
    std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8}, y;
    for (double v : x) y.push_back(v + 0.5);
    CHECK(wilcoxon_signed_rank(x, y) == doctest::Approx(2.0 / 256.0));
    CHECK(wilcoxon_signed_rank(y, x) == doctest::Approx(2.0 / 256.0));
}

TEST_CASE("wilcoxon matches 2^n enumeration") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(10), y(10), d(10);
        for (std::size_t i = 0; i < 10; ++i) {
            x[i] = n(rng);
            y[i] = x[i] + 0.3 * n(rng) + (trial % 3 == 0 ? 0.4 : 0.0);
            if (trial % 4 == 1 && i < 4) y[i] = x[i] + (i < 2 ? 0.5 : -0.5);  // tied magnitudes
            d[i] = x[i] - y[i];
        }
        const double p = wilcoxon_signed_rank(x, y);
        CHECK(p == doctest::Approx(test::ref_wilcoxon(d)).epsilon(1e-12));
        CHECK(wilcoxon_signed_rank(y, x) == doctest::Approx(p).epsilon(1e-12));
    }
}

TEST_CASE("wilcoxon large-sample approximation") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(60), y(60);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = n(rng);
        y[i] = x[i] + n(rng);
    }
    const double p = wilcoxon_signed_rank(x, y);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    // Normal approximation with continuity correction, recomputed here.
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) d.push_back(x[i] - y[i]);
    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(d[i]) < std::abs(d[j]); });
    double w = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (d[order[r]] > 0) w += static_cast<double>(r + 1);
    const double nn = static_cast<double>(d.size());
    const double mu = nn * (nn + 1) / 4.0, sigma = std::sqrt(nn * (nn + 1) * (2 * nn + 1) / 24.0);
    const double z = (std::abs(w - mu) - 0.5) / sigma;
    CHECK(p == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-9));
}

TEST_CASE("wilcoxon errors") {
    const std::vector<double> x{1, 2, 3, 4, 5, 6};
    try {
        wilcoxon_signed_rank(x, x);
        FAIL("expected a degenerate test");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateTest);
    }
    const std::vector<double> y{1, 2, 3, 4.5, 5.5, 6.5};
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, y), Error);
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, std::vector<double>{1, 2}), Error);
}

TEST_CASE("summary examples") {
    const std::vector<double> one{5.0};
    auto s = summarize(one);
    CHECK(s.mean == 5.0);
    CHECK(s.std == 0.0);
    CHECK(s.min == 5.0);
    CHECK(s.max == 5.0);
    const std::vector<double> five{3, 1, 5, 2, 4};
    s = summarize(five);
    CHECK(s.median == 3.0);
    CHECK(s.mean == 3.0);
    CHECK(s.std == doctest::Approx(std::sqrt(2.5)));
    CHECK(s.p10 == doctest::Approx(1.4));
    CHECK_THROWS_AS(summarize(std::vector<double>{}), Error);
}

TEST_CASE("summary matches the sort-based oracle on 1000 values") {
    std::mt19937_64 rng(11);
    std::lognormal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(1000);
    for (auto& x : v) x = g(rng);
    const auto s = summarize(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    long double mean = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    long double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    auto pct = [&](double p) {
        const double pos = p / 100.0 * 999.0;
        const auto lo = static_cast<std::size_t>(pos);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
    };
    CHECK(s.count == 1000);
    CHECK(s.mean == doctest::Approx(static_cast<double>(mean)).epsilon(1e-12));
    CHECK(s.std == doctest::Approx(std::sqrt(static_cast<double>(ss / 999.0))).epsilon(1e-12));
    CHECK(s.median == doctest::Approx(0.5 * (sorted[499] + sorted[500])).epsilon(1e-12));
    CHECK(s.p10 == doctest::Approx(pct(10)).epsilon(1e-12));
    CHECK(s.p90 == doctest::Approx(pct(90)).epsilon(1e-12));
    CHECK(s.min == sorted.front());
    CHECK(s.max == sorted.back());
}

}  // TEST_SUITE
