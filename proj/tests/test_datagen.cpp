#include <doctest.h>

#include <algorithm>
#include <set>

#include "cseg/datagen.hpp"

using namespace cseg;

namespace {

// Direct scan: mask voxels with a 6-neighbour outside the mask or grid.
LabelVolume shell_oracle(const LabelVolume& m) {
    const auto& d = m.dims();
    LabelVolume out(d, m.spacing());
    auto at = [&](int x, int y, int z) { return m.contains(x, y, z) && m(x, y, z); };
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                if (m(x, y, z) && !(at(x - 1, y, z) && at(x + 1, y, z) && at(x, y - 1, z) && at(x, y + 1, z) &&
                                    at(x, y, z - 1) && at(x, y, z + 1)))
                    out(x, y, z) = 1;
    return out;
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("noise-free organ stays in its HU range") {
    PhantomConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.distractor_count = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        cfg.seed = seed;
        const auto c = generate_phantom(cfg);
        std::size_t n = 0;
        for (std::size_t i = 0; i < c.ct.size(); ++i) {
            if (!c.gt_interior[i]) continue;
            ++n;
            CHECK(c.ct[i] >= cfg.organ_hu_lo);
            CHECK(c.ct[i] <= cfg.organ_hu_hi);
        }
        CHECK(n > 0);
    }
}

TEST_CASE("generation is deterministic") {
    PhantomConfig cfg;
    cfg.seed = 42;
    const auto a = generate_phantom(cfg);
    const auto b = generate_phantom(cfg);
    CHECK(a.ct == b.ct);
    CHECK(a.gt_interior == b.gt_interior);
    CHECK(a.gt_boundary == b.gt_boundary);
    cfg.seed = 43;
    CHECK_FALSE(generate_phantom(cfg).ct == a.ct);
}

TEST_CASE("boundary is the 6-neighbour inner shell") {
    PhantomConfig cfg;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        cfg.seed = seed;
        const auto c = generate_phantom(cfg);
        CHECK(c.gt_boundary == shell_oracle(c.gt_interior));
        CHECK(c.gt_interior.dims() == c.ct.dims());
    }
}

TEST_CASE("organ volume fraction over 100 seeds") {
    PhantomConfig cfg;
    const auto total = static_cast<double>(voxel_count(cfg.dims));
    double lo = 1.0, hi = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        cfg.seed = seed;
        const auto f = static_cast<double>(count_nonzero(generate_phantom(cfg).gt_interior)) / total;
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    CHECK(lo >= 0.001);
    CHECK(hi <= 0.10);
}

TEST_CASE("invalid phantom configs") {
    PhantomConfig cfg;
    cfg.organ_semi_axis_lo = 1.0;
    CHECK_THROWS_AS(generate_phantom(cfg), Error);
    cfg = {};
    cfg.noise_sigma = -1.0;
    CHECK_THROWS_AS(generate_phantom(cfg), Error);
    cfg = {};
    cfg.dims = {16, 16, 16};  // the default organ cannot fit
    CHECK_THROWS_AS(generate_phantom(cfg), Error);
}

TEST_CASE("fold sizes") {
    std::vector<std::string> ids;
    for (int i = 0; i < 82; ++i) ids.push_back(corpus_case_id(static_cast<std::size_t>(i)));
    auto folds = split_folds(ids, 4, 1);
    std::vector<std::size_t> sizes;
    for (const auto& f : folds) sizes.push_back(f.size());
    std::sort(sizes.rbegin(), sizes.rend());
    CHECK(sizes == std::vector<std::size_t>{21, 21, 20, 20});

    ids.resize(8);
    for (const auto& f : split_folds(ids, 4, 1)) CHECK(f.size() == 2);
}

TEST_CASE("folds partition the ids and are deterministic") {
    std::vector<std::string> ids;
    for (int i = 0; i < 37; ++i) ids.push_back(corpus_case_id(static_cast<std::size_t>(i)));
    for (int k = 2; k <= 6; ++k) {
        const auto folds = split_folds(ids, k, 9);
        std::multiset<std::string> seen;
        for (const auto& f : folds) seen.insert(f.begin(), f.end());
        CHECK(seen == std::multiset<std::string>(ids.begin(), ids.end()));
        CHECK(folds == split_folds(ids, k, 9));
    }
    CHECK_FALSE(split_folds(ids, 4, 1) == split_folds(ids, 4, 2));
}

TEST_CASE("fold errors") {
    std::vector<std::string> ids{"a", "b", "c"};
    CHECK_THROWS_AS(split_folds(ids, 4, 0), Error);
    CHECK_THROWS_AS(split_folds(ids, 1, 0), Error);
}

}
