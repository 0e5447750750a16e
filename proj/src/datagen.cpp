#include "cseg/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "cseg/seed.hpp"

namespace cseg {

void PhantomConfig::validate() const {
    require(dims.x >= 8 && dims.y >= 8 && dims.z >= 8, "phantom dims must be >= 8");
    require(spacing.x > 0 && spacing.y > 0 && spacing.z > 0, "phantom spacing must be > 0");
    require(organ_semi_axis_lo >= 2.0 && organ_semi_axis_hi >= organ_semi_axis_lo,
            "organ semi-axes must be >= 2 voxels and ordered");
    require(organ_center_hi >= organ_center_lo, "organ center range inverted");
    require(lobe_amplitude >= 0.0 && lobe_amplitude < 0.5, "lobe amplitude must be in [0, 0.5)");
    require(organ_hu_hi >= organ_hu_lo && distractor_hu_hi >= distractor_hu_lo, "HU ranges inverted");
    require(distractor_count >= 0 && distractor_radius_lo > 0 &&
                distractor_radius_hi >= distractor_radius_lo,
            "bad distractor settings");
    require(noise_sigma >= 0.0, "noise sigma must be >= 0");
    require(body_fraction > 0.0 && body_fraction <= 0.5, "body fraction must be in (0, 0.5]");
    const double reach = organ_semi_axis_hi * (1.0 + lobe_amplitude) + 1.0;
    for (int a = 0; a < 3; ++a) {
        require(organ_center_lo - reach >= 0.0 && organ_center_hi + reach <= dims[a] - 1.0,
                "organ cannot fit inside the phantom dims");
    }
}

namespace {

using Vec3 = std::array<double, 3>;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (;;) {
        Vec3 v{n(rng), n(rng), n(rng)};
        const double len = std::sqrt(dot(v, v));
        if (len > 1e-6) return {v[0] / len, v[1] / len, v[2] / len};
    }
}

// Rows of a rotation matrix built from three Euler angles.
std::array<Vec3, 3> rotation(double a, double b, double c) {
    const double ca = std::cos(a), sa = std::sin(a);
    const double cb = std::cos(b), sb = std::sin(b);
    const double cc = std::cos(c), sc = std::sin(c);
    return {Vec3{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
            Vec3{sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
            Vec3{-sb, cb * sc, cb * cc}};
}

struct Lobes {
    std::array<Vec3, 3> dir;
    std::array<double, 3> freq;
    std::array<double, 3> phase;

    // In [-1, 1].
    double operator()(const Vec3& unit) const {
        double g = 0.0;
        for (int k = 0; k < 3; ++k) g += std::sin(freq[k] * dot(dir[k], unit) + phase[k]);
        return g / 3.0;
    }
};

}  // namespace

LabelVolume inner_boundary(const LabelVolume& mask) {
    LabelVolume out = like<std::uint8_t>(mask);
    const auto& d = mask.dims();
    constexpr int offs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!mask(x, y, z)) continue;
                for (const auto& o : offs) {
                    const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                    if (!mask.contains(nx, ny, nz) || !mask(nx, ny, nz)) {
                        out(x, y, z) = 1;
                        break;
                    }
                }
            }
    return out;
}

Case generate_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    const auto& d = cfg.dims;
    Case c;
    c.id = "phantom_" + std::to_string(cfg.seed);
    c.ct = HuVolume(d, cfg.spacing, static_cast<std::int16_t>(cfg.air_hu));
    c.gt_interior = LabelVolume(d, cfg.spacing, 0);

    const Vec3 body_center{(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
    const Vec3 body_axes{cfg.body_fraction * d.x, cfg.body_fraction * d.y, cfg.body_fraction * d.z};
    auto in_body = [&](double x, double y, double z) {
        const double u = (x - body_center[0]) / body_axes[0];
        const double v = (y - body_center[1]) / body_axes[1];
        const double w = (z - body_center[2]) / body_axes[2];
        return u * u + v * v + w * w <= 1.0;
    };

    // Organ geometry.
    const Vec3 center{uniform(cfg.organ_center_lo, cfg.organ_center_hi),
                      uniform(cfg.organ_center_lo, cfg.organ_center_hi),
                      uniform(cfg.organ_center_lo, cfg.organ_center_hi)};
    const Vec3 axes{uniform(cfg.organ_semi_axis_lo, cfg.organ_semi_axis_hi),
                    uniform(cfg.organ_semi_axis_lo, cfg.organ_semi_axis_hi),
                    uniform(cfg.organ_semi_axis_lo, cfg.organ_semi_axis_hi)};
    const double pi = std::numbers::pi;
    const auto rot = rotation(uniform(0, 2 * pi), uniform(0, 2 * pi), uniform(0, 2 * pi));
    Lobes lobes;
    for (int k = 0; k < 3; ++k) {
        lobes.dir[static_cast<std::size_t>(k)] = random_unit(rng);
        lobes.freq[static_cast<std::size_t>(k)] = uniform(2.0, 4.0);
        lobes.phase[static_cast<std::size_t>(k)] = uniform(0.0, 2 * pi);
    }
    const auto organ_hu = static_cast<std::int16_t>(uniform_int(cfg.organ_hu_lo, cfg.organ_hu_hi));

    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (in_body(x, y, z)) c.ct(x, y, z) = static_cast<std::int16_t>(cfg.body_hu);
                const Vec3 p{x - center[0], y - center[1], z - center[2]};
                Vec3 q;
                for (int a = 0; a < 3; ++a) q[static_cast<std::size_t>(a)] = dot(rot[static_cast<std::size_t>(a)], p) / axes[static_cast<std::size_t>(a)];
                const double rho = std::sqrt(dot(q, q));
                if (rho < 1e-9) {
                    c.gt_interior(x, y, z) = 1;
                    continue;
                }
                const Vec3 dir{q[0] / rho, q[1] / rho, q[2] / rho};
                if (rho <= 1.0 + cfg.lobe_amplitude * lobes(dir)) c.gt_interior(x, y, z) = 1;
            }

    // Distance-to-organ test for distractor placement, via the organ's box.
    const BBox3 organ_box = tight_box(c.gt_interior);
    auto clear_of_organ = [&](const Vec3& ctr, double radius) {
        const double reach = radius + cfg.distractor_gap;
        const int x0 = std::max(0, static_cast<int>(std::floor(ctr[0] - reach)));
        const int x1 = std::min(d.x - 1, static_cast<int>(std::ceil(ctr[0] + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(ctr[1] - reach)));
        const int y1 = std::min(d.y - 1, static_cast<int>(std::ceil(ctr[1] + reach)));
        const int z0 = std::max(0, static_cast<int>(std::floor(ctr[2] - reach)));
        const int z1 = std::min(d.z - 1, static_cast<int>(std::ceil(ctr[2] + reach)));
        if (x1 < organ_box.lo.x || x0 >= organ_box.hi.x || y1 < organ_box.lo.y || y0 >= organ_box.hi.y ||
            z1 < organ_box.lo.z || z0 >= organ_box.hi.z)
            return true;
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x - ctr[0], dy = y - ctr[1], dz = z - ctr[2];
                    if (dx * dx + dy * dy + dz * dz <= reach * reach && c.gt_interior(x, y, z)) return false;
                }
        return true;
    };

    for (int i = 0; i < cfg.distractor_count; ++i) {
        const double radius = uniform(cfg.distractor_radius_lo, cfg.distractor_radius_hi);
        const auto hu = static_cast<std::int16_t>(uniform_int(cfg.distractor_hu_lo, cfg.distractor_hu_hi));
        for (int attempt = 0; attempt < 200; ++attempt) {
            const Vec3 ctr{uniform(0, d.x - 1), uniform(0, d.y - 1), uniform(0, d.z - 1)};
            if (!in_body(ctr[0], ctr[1], ctr[2]) || !clear_of_organ(ctr, radius)) continue;
            const int r = static_cast<int>(std::ceil(radius));
            for (int z = static_cast<int>(ctr[2]) - r; z <= static_cast<int>(ctr[2]) + r + 1; ++z)
                for (int y = static_cast<int>(ctr[1]) - r; y <= static_cast<int>(ctr[1]) + r + 1; ++y)
                    for (int x = static_cast<int>(ctr[0]) - r; x <= static_cast<int>(ctr[0]) + r + 1; ++x) {
                        if (!c.ct.contains(x, y, z) || !in_body(x, y, z)) continue;
                        const double dx = x - ctr[0], dy = y - ctr[1], dz = z - ctr[2];
                        if (dx * dx + dy * dy + dz * dz <= radius * radius) c.ct(x, y, z) = hu;
                    }
            break;
        }
    }

    for (std::size_t i = 0; i < c.ct.size(); ++i)
        if (c.gt_interior[i]) c.ct[i] = organ_hu;

    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (auto& v : c.ct.data()) {
            const double n = std::round(static_cast<double>(v) + noise(rng));
            v = static_cast<std::int16_t>(std::clamp(n, -32768.0, 32767.0));
        }
    }
    c.gt_boundary = inner_boundary(c.gt_interior);
    return c;
}

std::uint64_t corpus_case_seed(std::uint64_t base_seed, std::size_t index) {
    return derive_seed(base_seed, static_cast<std::uint64_t>(index));
}

std::string corpus_case_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", index);
    return buf;
}

std::vector<Case> generate_corpus(const PhantomConfig& cfg, std::size_t count) {
    std::vector<Case> cases(count);
    for (std::size_t i = 0; i < count; ++i) {
        PhantomConfig c = cfg;
        c.seed = corpus_case_seed(cfg.seed, i);
        cases[i] = generate_phantom(c);
        cases[i].id = corpus_case_id(i);
    }
    return cases;
}

std::vector<std::vector<std::string>> split_folds(const std::vector<std::string>& ids, int k,
                                                  std::uint64_t seed) {
    require(k >= 2, "fold count must be >= 2");
    require(static_cast<std::size_t>(k) <= ids.size(), "more folds than cases");
    std::vector<std::string> order = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < order.size(); ++i) folds[i % folds.size()].push_back(order[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

}  // namespace cseg
