#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cseg/regforest.hpp"
#include "support.hpp"

using namespace cseg;

namespace {

double brute_clamped_mean(const HuVolume& v, const Index3& lo, const Index3& hi) {
    const auto d = v.dims();
    double s = 0.0;
    for (int z = lo.z; z <= hi.z; ++z)
        for (int y = lo.y; y <= hi.y; ++y)
            for (int x = lo.x; x <= hi.x; ++x)
                s += v(std::clamp(x, 0, d.x - 1), std::clamp(y, 0, d.y - 1), std::clamp(z, 0, d.z - 1));
    return s / ((hi.x - lo.x + 1.0) * (hi.y - lo.y + 1.0) * (hi.z - lo.z + 1.0));
}

// Content moved by t voxels; uncovered voxels take `fill`.
HuVolume translate(const HuVolume& v, Index3 t, std::int16_t fill) {
    HuVolume out(v.dims(), v.spacing(), fill);
    const auto d = v.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                if (v.contains(x - t.x, y - t.y, z - t.z)) out(x, y, z) = v(x - t.x, y - t.y, z - t.z);
    return out;
}

Case small_phantom(std::uint64_t seed) {
    PhantomConfig pc;
    pc.dims = {40, 40, 40};
    pc.organ_center_lo = 16.0;
    pc.organ_center_hi = 24.0;
    pc.organ_semi_axis_lo = 5.0;
    pc.organ_semi_axis_hi = 8.0;
    pc.distractor_count = 4;
    pc.seed = seed;
    return generate_phantom(pc);
}

Case standard_phantom(std::uint64_t seed) {
    PhantomConfig pc;
    pc.seed = seed;
    return generate_phantom(pc);
}

LocalizerConfig quick_config() {
    LocalizerConfig cfg;
    cfg.samples_per_case = 300;
    cfg.seed = 5;
    return cfg;
}

double voxel_error(const Vec3& a, const Vec3& b, const Spacing& s) {
    double e = 0.0;
    for (int k = 0; k < 3; ++k) e += ((a[k] - b[k]) / s[k]) * ((a[k] - b[k]) / s[k]);
    return std::sqrt(e);
}

}  // namespace

TEST_SUITE("regforest") {

TEST_CASE("integral volume matches brute force including clamped reads") {
    const auto v = test::random_hu({7, 6, 5}, 3);
    const IntegralVolume iv(v);
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> c(-4, 10);
    for (int trial = 0; trial < 300; ++trial) {
        Index3 lo{c(rng), c(rng), c(rng)}, hi{c(rng), c(rng), c(rng)};
        for (int a = 0; a < 3; ++a)
            if (lo[a] > hi[a]) std::swap(lo[a], hi[a]);
        CHECK(iv.clamped_mean(lo, hi) == doctest::Approx(brute_clamped_mean(v, lo, hi)).epsilon(1e-9));
    }
}

TEST_CASE("constant volume gives zero features") {
    const HuVolume v({20, 20, 20}, {}, std::int16_t{55});
    const auto cfg = PatchFeatureConfig::random(32, 12.0, 1);
    cfg.validate();
    for (const auto& x : {Index3{0, 0, 0}, Index3{10, 10, 10}, Index3{19, 3, 7}})
        for (float f : patch_features(v, x, cfg)) CHECK(f == 0.0f);
}

TEST_CASE("probe across a 100 HU step") {
    HuVolume v({30, 10, 10}, {});
    for (int z = 0; z < 10; ++z)
        for (int y = 0; y < 10; ++y)
            for (int x = 15; x < 30; ++x) v(x, y, z) = 100;
    PatchFeatureConfig cfg;
    for (int i = 0; i < 16; ++i) cfg.probes.push_back(Probe{{6, 0, 0}, {3, 3, 3}, {-6, 0, 0}, {3, 3, 3}});
    cfg.max_radius_mm = 10.0;
    cfg.validate();
    CHECK(patch_features(v, {15, 5, 5}, cfg)[0] == doctest::Approx(100.0));
    for (auto& p : cfg.probes) std::swap(p.offset_a, p.offset_b);
    CHECK(patch_features(v, {15, 5, 5}, cfg)[0] == doctest::Approx(-100.0));
}

TEST_CASE("features follow translated content") {
    const auto v = test::random_hu({32, 32, 32}, 6);
    const Index3 t{3, -2, 4};
    const auto moved = translate(v, t, 0);
    const auto cfg = PatchFeatureConfig::random(24, 8.0, 2);
    for (const auto& x : {Index3{12, 14, 11}, Index3{16, 16, 16}, Index3{10, 20, 12}}) {
        const auto a = patch_features(v, x, cfg);
        const auto b = patch_features(moved, {x.x + t.x, x.y + t.y, x.z + t.z}, cfg);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
    }
}

TEST_CASE("probe config validation") {
    CHECK_THROWS_AS(PatchFeatureConfig::random(8, 20.0, 1), Error);
    auto cfg = PatchFeatureConfig::random(16, 10.0, 1);
    cfg.probes[0].offset_a = {20, 0, 0};
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("single case is recovered") {
    const Case c = standard_phantom(1);
    const std::vector<const Case*> cases{&c};
    LocalizerConfig cfg;
    cfg.seed = 5;
    const auto model = train_localizer(cases, cfg);
    const auto r = predict_bbox(model, c.ct);
    CHECK(r.box.valid_for(c.ct.dims()));
    const auto truth = box_center_mm(tight_box(c.gt_interior), c.ct.spacing());
    CHECK(voxel_error(r.diagnostics.chosen.center, truth, c.ct.spacing()) <= 2.0);
    CHECK(r.diagnostics.accepted > 0);
    CHECK(r.diagnostics.votes > 0);
}

TEST_CASE("training is deterministic per seed") {
    const Case a = small_phantom(2), b = small_phantom(3);
    const std::vector<const Case*> cases{&a, &b};
    const auto m1 = train_localizer(cases, quick_config());
    const auto m2 = train_localizer(cases, quick_config());
    CHECK(encode_localizer(m1) == encode_localizer(m2));
    CHECK(encode_localizer(decode_localizer(encode_localizer(m1))) == encode_localizer(m1));
    auto other = quick_config();
    other.seed = 6;
    CHECK(encode_localizer(train_localizer(cases, other)) != encode_localizer(m1));
}

TEST_CASE("empty ground truth is skipped with a warning") {
    Case a = small_phantom(4), empty = small_phantom(5);
    std::fill(empty.gt_interior.data().begin(), empty.gt_interior.data().end(), 0);
    const std::vector<const Case*> cases{&a, &empty};
    const auto m = train_localizer(cases, quick_config());
    CHECK(m.warnings.size() == 1);
    const std::vector<const Case*> none{&empty};
    CHECK_THROWS_AS(train_localizer(none, quick_config()), Error);
}

TEST_CASE("centres on 50 training cases and under translation") {
    PhantomConfig pc;
    pc.seed = 100;
    const auto corpus = generate_corpus(pc, 50);
    std::vector<const Case*> cases;
    for (const auto& c : corpus) cases.push_back(&c);
    LocalizerConfig cfg;
    cfg.seed = 5;
    const auto model = train_localizer(cases, cfg);
    std::vector<double> errors;
    for (const auto& c : corpus) {
        const auto r = predict_bbox(model, c.ct);
        CHECK(r.box.valid_for(c.ct.dims()));
        errors.push_back(voxel_error(r.diagnostics.chosen.center,
                                     box_center_mm(tight_box(c.gt_interior), c.ct.spacing()), c.ct.spacing()));
    }
    std::nth_element(errors.begin(), errors.begin() + errors.size() / 2, errors.end());
    CHECK(errors[errors.size() / 2] <= 5.0);

    // A shift by a multiple of the grid stride moves the predicted centre
    // by the same amount.
    for (const Index3 t : {Index3{4, -4, 0}, Index3{8, 4, -4}}) {
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& c = corpus[i];
            const auto& sp = c.ct.spacing();
            const auto moved = translate(c.ct, t, -1000);
            const auto a = predict_bbox(model, c.ct).diagnostics.chosen.center;
            const auto b = predict_bbox(model, moved).diagnostics.chosen.center;
            const Vec3 shifted{a[0] + t.x * sp.x, a[1] + t.y * sp.y, a[2] + t.z * sp.z};
            CHECK(voxel_error(b, shifted, sp) <= 2.0);
        }
    }
}

}  // TEST_SUITE
