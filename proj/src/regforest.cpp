#include "cseg/regforest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "cseg/binary_io.hpp"
#include "cseg/parallel.hpp"
#include "cseg/seed.hpp"

namespace cseg {

PatchFeatureConfig PatchFeatureConfig::random(int count, double max_radius_mm, std::uint64_t seed) {
    require(count >= 16, "the localizer needs at least 16 probes");
    require(max_radius_mm >= 6.0, "probe radius must be >= 6 mm");
    PatchFeatureConfig cfg;
    cfg.max_radius_mm = max_radius_mm;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> size(2.0, 12.0), unit(-1.0, 1.0);
    auto cuboid = [&](Vec3& off, Vec3& sz) {
        for (int a = 0; a < 3; ++a) {
            sz[a] = size(rng);
            off[a] = unit(rng) * (max_radius_mm - sz[a] / 2.0);
        }
    };
    for (int i = 0; i < count; ++i) {
        Probe p;
        cuboid(p.offset_a, p.size_a);
        cuboid(p.offset_b, p.size_b);
        cfg.probes.push_back(p);
    }
    return cfg;
}

void PatchFeatureConfig::validate() const {
    require(probes.size() >= 16, "the localizer needs at least 16 probes");
    for (const auto& p : probes)
        for (int a = 0; a < 3; ++a) {
            require(p.size_a[a] > 0 && p.size_b[a] > 0, "probe sizes must be positive");
            require(std::abs(p.offset_a[a]) + p.size_a[a] / 2 <= max_radius_mm + 1e-9 &&
                        std::abs(p.offset_b[a]) + p.size_b[a] / 2 <= max_radius_mm + 1e-9,
                    "probe exceeds the context radius");
        }
}

IntegralVolume::IntegralVolume(const HuVolume& vol) : dims_(vol.dims()), spacing_(vol.spacing()) {
    const auto nx = static_cast<std::size_t>(dims_.x) + 1, ny = static_cast<std::size_t>(dims_.y) + 1;
    table_.assign(nx * ny * (static_cast<std::size_t>(dims_.z) + 1), 0.0);
    auto at = [&](int x, int y, int z) -> double& {
        return table_[static_cast<std::size_t>(x) + nx * (static_cast<std::size_t>(y) + ny * static_cast<std::size_t>(z))];
    };
    for (int z = 1; z <= dims_.z; ++z)
        for (int y = 1; y <= dims_.y; ++y)
            for (int x = 1; x <= dims_.x; ++x)
                at(x, y, z) = vol(x - 1, y - 1, z - 1) + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) -
                              at(x - 1, y - 1, z) - at(x - 1, y, z - 1) - at(x, y - 1, z - 1) +
                              at(x - 1, y - 1, z - 1);
}

double IntegralVolume::box_sum(int x0, int y0, int z0, int x1, int y1, int z1) const {
    // inclusive voxel bounds, already inside the grid
    const auto nx = static_cast<std::size_t>(dims_.x) + 1, ny = static_cast<std::size_t>(dims_.y) + 1;
    auto at = [&](int x, int y, int z) {
        return table_[static_cast<std::size_t>(x) + nx * (static_cast<std::size_t>(y) + ny * static_cast<std::size_t>(z))];
    };
    ++x1;
    ++y1;
    ++z1;
    return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0) +
           at(x1, y0, z0) - at(x0, y0, z0);
}

namespace {

// A clamped 1D range [a, b] over n voxels as (first, last, multiplicity)
// runs of in-grid voxels.
struct Run {
    int first, last;
    double weight;
};

std::vector<Run> clamped_runs(int a, int b, int n) {
    std::vector<Run> runs;
    if (n == 1) {
        runs.push_back({0, 0, static_cast<double>(b - a + 1)});
        return runs;
    }
    const int low = a <= 0 ? std::min(b, 0) - a + 1 : 0;
    const int high = b >= n - 1 ? b - std::max(a, n - 1) + 1 : 0;
    if (low > 0) runs.push_back({0, 0, static_cast<double>(low)});
    const int i0 = std::max(a, 1), i1 = std::min(b, n - 2);
    if (i0 <= i1) runs.push_back({i0, i1, 1.0});
    if (high > 0) runs.push_back({n - 1, n - 1, static_cast<double>(high)});
    return runs;
}

}  // namespace

double IntegralVolume::clamped_mean(const Index3& lo, const Index3& hi) const {
    const auto rx = clamped_runs(lo.x, hi.x, dims_.x);
    const auto ry = clamped_runs(lo.y, hi.y, dims_.y);
    const auto rz = clamped_runs(lo.z, hi.z, dims_.z);
    double sum = 0.0;
    for (const auto& a : rx)
        for (const auto& b : ry)
            for (const auto& c : rz)
                sum += a.weight * b.weight * c.weight * box_sum(a.first, b.first, c.first, a.last, b.last, c.last);
    const double count = static_cast<double>(hi.x - lo.x + 1) * (hi.y - lo.y + 1) * (hi.z - lo.z + 1);
    return sum / count;
}

namespace {

double cuboid_mean(const IntegralVolume& iv, const Index3& x, const Vec3& off, const Vec3& size) {
    Index3 lo, hi;
    for (int a = 0; a < 3; ++a) {
        const double s = iv.spacing()[a];
        const int c = x[a] + static_cast<int>(std::lround(off[a] / s));
        const int h = std::max(0, static_cast<int>(std::lround(size[a] / (2.0 * s))));
        lo[a] = c - h;
        hi[a] = c + h;
    }
    return iv.clamped_mean(lo, hi);
}

Vec3 voxel_mm(const Index3& p, const Spacing& s) { return {p.x * s.x, p.y * s.y, p.z * s.z}; }

Index3 nearest_voxel(const Vec3& mm, const Spacing& s, const Dims& d) {
    Index3 p;
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(static_cast<int>(std::lround(mm[a] / s[a])), 0, d[a] - 1);
    return p;
}

double distance(const Vec3& a, const Vec3& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

std::vector<float> patch_features(const IntegralVolume& iv, const Index3& x, const PatchFeatureConfig& cfg) {
    std::vector<float> f(cfg.probes.size());
    for (std::size_t i = 0; i < cfg.probes.size(); ++i) {
        const auto& p = cfg.probes[i];
        f[i] = static_cast<float>(cuboid_mean(iv, x, p.offset_a, p.size_a) - cuboid_mean(iv, x, p.offset_b, p.size_b));
    }
    return f;
}

std::vector<float> patch_features(const HuVolume& vol, const Index3& x, const PatchFeatureConfig& cfg) {
    return patch_features(IntegralVolume(vol), x, cfg);
}

void LocalizerConfig::validate() const {
    require(probe_count >= 16, "the localizer needs at least 16 probes");
    require(samples_per_case >= 1, "samples per case must be >= 1");
    require(grid_stride >= 1, "grid stride must be >= 1");
    require(accept_radius_mm > 0 && nms_radius_mm >= 0, "localizer radii must be positive");
    require(accept_threshold >= 0 && accept_threshold <= 1, "acceptance threshold must be in [0, 1]");
}

Vec3 box_center_mm(const BBox3& box, const Spacing& s) {
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = 0.5 * (box.lo[a] + box.hi[a] - 1) * s[a];
    return c;
}

LocalizerModel train_localizer(const std::vector<const Case*>& cases, const LocalizerConfig& cfg) {
    cfg.validate();
    LocalizerModel m;
    m.cfg = cfg;
    m.features = PatchFeatureConfig::random(cfg.probe_count, cfg.max_radius_mm, derive_seed(cfg.seed, 1));

    struct Draw {
        std::size_t case_index;
        Index3 voxel;
    };
    std::vector<const Case*> usable;
    for (const auto* c : cases) {
        if (count_nonzero(c->gt_interior) == 0) {
            m.warnings.push_back("skipping case '" + c->id + "': empty ground truth");
            continue;
        }
        usable.push_back(c);
    }
    require(!usable.empty(), "the localizer needs at least one case with a non-empty ground truth");

    const auto per = static_cast<std::size_t>(cfg.samples_per_case);
    const std::size_t rows = usable.size() * per;
    forest::FeatureMatrix x(rows, m.features.probes.size()), y(rows, 9);
    std::vector<Draw> draws(rows);
    std::vector<Vec3> centers(usable.size());
    std::vector<IntegralVolume> integrals;
    integrals.reserve(usable.size());
    for (const auto* c : usable) integrals.emplace_back(c->ct);

    parallel_for(usable.size(), [&](std::size_t ci) {
        const auto& c = *usable[ci];
        const auto& s = c.ct.spacing();
        const auto& d = c.ct.dims();
        const auto box = tight_box(c.gt_interior);
        const Vec3 center = box_center_mm(box, s);
        centers[ci] = center;
        std::mt19937_64 rng(derive_seed(cfg.seed, 100 + ci));
        for (std::size_t k = 0; k < per; ++k) {
            Index3 v;
            for (int a = 0; a < 3; ++a) v[a] = std::uniform_int_distribution<int>(0, d[a] - 1)(rng);
            const auto row = ci * per + k;
            draws[row] = {ci, v};
            const auto f = patch_features(integrals[ci], v, m.features);
            std::copy(f.begin(), f.end(), x.row(row).begin());
            const auto pos = voxel_mm(v, s);
            auto t = y.row(row);
            for (int a = 0; a < 3; ++a) {
                t[static_cast<std::size_t>(a)] = static_cast<float>(center[a] - pos[a]);
                t[3 + static_cast<std::size_t>(a)] = static_cast<float>(box.lo[a] * s[a] - center[a]);
                t[6 + static_cast<std::size_t>(a)] = static_cast<float>((box.hi[a] - 1) * s[a] - center[a]);
            }
        }
    });

    auto ropt = cfg.regression;
    ropt.seed = derive_seed(cfg.seed, 2);
    auto reg = forest::train_regression_forest(x, y, ropt);
    m.regressor = std::move(reg.model);

    // Votes from out-of-bag predictions, labelled by their distance to the
    // true centre, described by the appearance at the voted centre.
    forest::FeatureMatrix cx(rows, m.features.probes.size());
    std::vector<int> labels(rows);
    parallel_for(rows, [&](std::size_t row) {
        const auto& dr = draws[row];
        const auto& c = *usable[dr.case_index];
        std::vector<double> pred;
        if (reg.oob_trees[row] > 0) {
            pred = reg.oob_prediction[row];
        } else {
            pred = m.regressor.predict(x.row(row));
        }
        const auto pos = voxel_mm(dr.voxel, c.ct.spacing());
        const Vec3 voted{pos[0] + pred[0], pos[1] + pred[1], pos[2] + pred[2]};
        labels[row] = distance(voted, centers[dr.case_index]) <= cfg.accept_radius_mm ? 1 : 0;
        const auto f = patch_features(integrals[dr.case_index], nearest_voxel(voted, c.ct.spacing(), c.ct.dims()), m.features);
        std::copy(f.begin(), f.end(), cx.row(row).begin());
    });
    const bool both = std::any_of(labels.begin(), labels.end(), [](int l) { return l == 1; }) &&
                      std::any_of(labels.begin(), labels.end(), [](int l) { return l == 0; });
    if (!both) {
        m.accept_all = true;
        m.warnings.push_back("all training votes share one label; every vote will be accepted");
    } else {
        auto copt = cfg.classifier;
        copt.seed = derive_seed(cfg.seed, 3);
        m.classifier = forest::train_forest(cx, labels, copt).model;
    }
    return m;
}

BoxResult predict_bbox(const LocalizerModel& model, const HuVolume& vol) {
    const auto& cfg = model.cfg;
    const auto& s = vol.spacing();
    const auto& d = vol.dims();
    const IntegralVolume iv(vol);

    std::vector<Index3> grid;
    for (int z = 0; z < d.z; z += cfg.grid_stride)
        for (int y = 0; y < d.y; y += cfg.grid_stride)
            for (int x = 0; x < d.x; x += cfg.grid_stride) grid.push_back({x, y, z});

    std::vector<BoxPrediction> votes(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        const auto f = patch_features(iv, grid[i], model.features);
        const auto p = model.regressor.predict(f);
        const auto pos = voxel_mm(grid[i], s);
        auto& v = votes[i];
        for (std::size_t a = 0; a < 3; ++a) {
            v.center[a] = pos[a] + p[a];
            v.lower[a] = p[3 + a];
            v.upper[a] = p[6 + a];
        }
        if (model.accept_all) {
            v.score = 1.0;
        } else {
            v.score = model.classifier.probability(patch_features(iv, nearest_voxel(v.center, s, d), model.features));
        }
    });

    std::vector<std::size_t> accepted;
    for (std::size_t i = 0; i < votes.size(); ++i)
        if (votes[i].score >= cfg.accept_threshold) accepted.push_back(i);
    BoxResult out;
    out.diagnostics.grid_points = grid.size();
    out.diagnostics.accepted = accepted.size();
    if (accepted.empty()) fail(ErrorCode::NoCandidate, "the localizer accepted no vote");

    auto ranked = accepted;
    std::stable_sort(ranked.begin(), ranked.end(), [&](auto a, auto b) { return votes[a].score > votes[b].score; });
    std::vector<std::size_t> kept;
    for (auto i : ranked) {
        const bool far = std::all_of(kept.begin(), kept.end(), [&](auto k) {
            return distance(votes[i].center, votes[k].center) > cfg.nms_radius_mm;
        });
        if (far) kept.push_back(i);
    }
    out.diagnostics.candidates = kept.size();

    std::size_t best = kept.front(), best_votes = 0;
    double best_score = -1.0;
    for (auto k : kept) {
        const auto& v = votes[k];
        std::size_t count = 0;
        double sum = 0.0;
        for (auto i : accepted) {
            bool inside = true;
            for (std::size_t a = 0; a < 3; ++a)
                inside = inside && votes[i].center[a] >= v.center[a] + v.lower[a] &&
                         votes[i].center[a] <= v.center[a] + v.upper[a];
            if (inside) {
                ++count;
                sum += votes[i].score;
            }
        }
        if (count > best_votes || (count == best_votes && sum > best_score)) {
            best = k;
            best_votes = count;
            best_score = sum;
        }
    }
    // The winning box is summarised by the componentwise median of the
    // accepted votes it contains (centre and both corner offsets).
    const auto& rep = votes[best];
    std::array<std::vector<double>, 9> parts;
    for (auto i : accepted) {
        bool inside = true;
        for (std::size_t a = 0; a < 3; ++a)
            inside = inside && votes[i].center[a] >= rep.center[a] + rep.lower[a] &&
                     votes[i].center[a] <= rep.center[a] + rep.upper[a];
        if (!inside) continue;
        for (std::size_t a = 0; a < 3; ++a) {
            parts[a].push_back(votes[i].center[a]);
            parts[3 + a].push_back(votes[i].lower[a]);
            parts[6 + a].push_back(votes[i].upper[a]);
        }
    }
    BoxPrediction v = rep;
    if (!parts[0].empty()) {
        auto median = [](std::vector<double>& x) {
            std::sort(x.begin(), x.end());
            const auto n = x.size();
            return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
        };
        for (std::size_t a = 0; a < 3; ++a) {
            v.center[a] = median(parts[a]);
            v.lower[a] = median(parts[3 + a]);
            v.upper[a] = median(parts[6 + a]);
        }
    }
    out.diagnostics.votes = best_votes;
    out.diagnostics.vote_score = best_score;
    out.diagnostics.chosen = v;

    BBox3 box;
    box.source = "regforest";
    for (std::size_t a = 0; a < 3; ++a) {
        const int ai = static_cast<int>(a);
        const double lo_mm = v.center[a] + std::min(v.lower[a], v.upper[a]);
        const double hi_mm = v.center[a] + std::max(v.lower[a], v.upper[a]);
        int lo = std::clamp(static_cast<int>(std::lround(lo_mm / s[ai])), 0, d[ai] - 1);
        int hi = std::clamp(static_cast<int>(std::lround(hi_mm / s[ai])), 0, d[ai] - 1) + 1;
        if (hi <= lo) hi = lo + 1;
        box.lo[ai] = lo;
        box.hi[ai] = hi;
    }
    out.box = box;
    return out;
}

namespace {

void put_forest_options(BinaryWriter& w, const forest::ForestOptions& o) {
    w.put<std::int32_t>(o.trees);
    w.put<std::int32_t>(o.max_depth);
    w.put<std::int32_t>(o.min_samples_leaf);
    w.put<std::int32_t>(o.features_per_node);
    w.put<std::uint8_t>(o.bootstrap ? 1 : 0);
    w.put<std::uint64_t>(o.seed);
}

forest::ForestOptions get_forest_options(BinaryReader& r) {
    forest::ForestOptions o;
    o.trees = r.get_in<std::int32_t>(1, 1 << 16, "tree count");
    o.max_depth = r.get_in<std::int32_t>(0, 1 << 16, "max depth");
    o.min_samples_leaf = r.get_in<std::int32_t>(1, 1 << 30, "min samples per leaf");
    o.features_per_node = r.get_in<std::int32_t>(0, 1 << 16, "features per node");
    o.bootstrap = r.get_in<std::uint8_t>(0, 1, "bootstrap flag") != 0;
    o.seed = r.get<std::uint64_t>();
    return o;
}

void put_blob(BinaryWriter& w, const std::vector<char>& b) {
    w.put<std::uint64_t>(b.size());
    w.bytes(b.data(), b.size());
}

std::vector<char> get_blob(BinaryReader& r) {
    const auto n = r.get<std::uint64_t>();
    if (n > (1ULL << 34)) fail(ErrorCode::FormatError, "embedded block too large at byte " + std::to_string(r.offset()));
    std::vector<char> b(static_cast<std::size_t>(n));
    r.read(b.data(), b.size());
    return b;
}

double get_finite(BinaryReader& r, const char* what) {
    const auto at = r.offset();
    const double v = r.get<double>();
    if (!std::isfinite(v)) fail(ErrorCode::FormatError, std::string("non-finite ") + what + " at byte " + std::to_string(at));
    return v;
}

}  // namespace

// "CSLB", u32 version, config, probes, regression forest, accept flag,
// classifier forest.
std::vector<char> encode_localizer(const LocalizerModel& m) {
    BinaryWriter w;
    w.tag("CSLB");
    w.put<std::uint32_t>(1);
    const auto& c = m.cfg;
    w.put<std::int32_t>(c.probe_count);
    w.put<double>(c.max_radius_mm);
    w.put<std::int32_t>(c.samples_per_case);
    put_forest_options(w, c.regression);
    put_forest_options(w, c.classifier);
    w.put<double>(c.accept_radius_mm);
    w.put<std::int32_t>(c.grid_stride);
    w.put<double>(c.accept_threshold);
    w.put<double>(c.nms_radius_mm);
    w.put<std::uint64_t>(c.seed);
    w.put<double>(m.features.max_radius_mm);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.features.probes.size()));
    for (const auto& p : m.features.probes)
        for (const auto* v : {&p.offset_a, &p.size_a, &p.offset_b, &p.size_b})
            for (double x : *v) w.put<double>(x);
    put_blob(w, forest::encode_forest(m.regressor));
    w.put<std::uint8_t>(m.accept_all ? 1 : 0);
    if (!m.accept_all) put_blob(w, forest::encode_forest(m.classifier));
    return w.buffer();
}

LocalizerModel decode_localizer(std::vector<char> bytes) {
    BinaryReader r(std::move(bytes));
    r.expect_tag("CSLB");
    r.get_in<std::uint32_t>(1, 1, "localizer version");
    LocalizerModel m;
    auto& c = m.cfg;
    c.probe_count = r.get_in<std::int32_t>(16, 1 << 16, "probe count");
    c.max_radius_mm = get_finite(r, "probe radius");
    c.samples_per_case = r.get_in<std::int32_t>(1, 1 << 30, "samples per case");
    c.regression = get_forest_options(r);
    c.classifier = get_forest_options(r);
    c.accept_radius_mm = get_finite(r, "accept radius");
    c.grid_stride = r.get_in<std::int32_t>(1, 1 << 16, "grid stride");
    c.accept_threshold = get_finite(r, "accept threshold");
    c.nms_radius_mm = get_finite(r, "suppression radius");
    c.seed = r.get<std::uint64_t>();
    m.features.max_radius_mm = get_finite(r, "probe radius");
    const auto probes = r.get_in<std::uint32_t>(16, 1 << 16, "probe count");
    for (std::uint32_t i = 0; i < probes; ++i) {
        Probe p;
        for (auto* v : {&p.offset_a, &p.size_a, &p.offset_b, &p.size_b})
            for (double& x : *v) x = get_finite(r, "probe geometry");
        m.features.probes.push_back(p);
    }
    try {
        m.features.validate();
        c.validate();
    } catch (const Error& e) {
        fail(ErrorCode::FormatError, std::string("invalid localizer: ") + e.what());
    }
    m.regressor = forest::decode_forest(get_blob(r));
    if (m.regressor.mode != forest::ForestMode::Regression || m.regressor.output_count != 9 ||
        m.regressor.feature_count != probes)
        fail(ErrorCode::FormatError, "localizer regression forest has the wrong shape");
    m.accept_all = r.get_in<std::uint8_t>(0, 1, "accept flag") != 0;
    if (!m.accept_all) {
        m.classifier = forest::decode_forest(get_blob(r));
        if (m.classifier.mode != forest::ForestMode::Classification || m.classifier.feature_count != probes)
            fail(ErrorCode::FormatError, "localizer classifier has the wrong shape");
    }
    if (!r.at_end()) fail(ErrorCode::FormatError, "trailing bytes after localizer at byte " + std::to_string(r.offset()));
    return m;
}

void save_localizer(const std::string& path, const LocalizerModel& model) {
    write_file_bytes(path, encode_localizer(model));
}

LocalizerModel load_localizer(const std::string& path) { return decode_localizer(read_file_bytes(path)); }

}  // namespace cseg
