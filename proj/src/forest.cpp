#include "cseg/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cseg/binary_io.hpp"
#include "cseg/error.hpp"
#include "cseg/parallel.hpp"
#include "cseg/seed.hpp"

namespace cseg::forest {

const std::vector<float>& Tree::leaf(std::span<const float> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const auto& n = nodes[i];
        i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[i].value;
}

std::vector<double> ForestModel::predict(std::span<const float> x) const {
    require(x.size() == feature_count, "feature vector length does not match the forest");
    std::vector<double> out(output_count, 0.0);
    for (const auto& t : trees) {
        const auto& v = t.leaf(x);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += v[k];
    }
    if (!trees.empty())
        for (auto& v : out) v /= static_cast<double>(trees.size());
    return out;
}

double ForestModel::probability(std::span<const float> x) const {
    require(mode == ForestMode::Classification && output_count >= 2, "probability needs a classification forest");
    return predict(x)[1];
}

void ForestModel::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::FormatError, "invalid forest: " + what); };
    if (feature_count == 0 || feature_count >= kLeaf) bad("feature count");
    if (output_count == 0) bad("output count");
    if (mode == ForestMode::Classification && output_count < 2) bad("classification forest needs two classes");
    for (std::size_t t = 0; t < trees.size(); ++t) {
        const auto& nodes = trees[t].nodes;
        if (nodes.empty()) bad("tree " + std::to_string(t) + " is empty");
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const auto& n = nodes[i];
            const std::string where = "tree " + std::to_string(t) + " node " + std::to_string(i);
            if (n.is_leaf()) {
                if (n.value.size() != output_count) bad(where + " leaf payload size");
                for (float v : n.value)
                    if (!std::isfinite(v)) bad(where + " non-finite leaf value");
                continue;
            }
            if (n.feature >= feature_count) bad(where + " feature index");
            if (!std::isfinite(n.threshold)) bad(where + " non-finite threshold");
            if (n.left <= i || n.right <= i || n.left >= nodes.size() || n.right >= nodes.size() || n.left == n.right)
                bad(where + " child links");
        }
    }
}

void FeatureMatrix::push_row(std::span<const float> r) {
    if (rows == 0 && cols == 0) cols = r.size();
    require(r.size() == cols, "row length does not match the matrix");
    values.insert(values.end(), r.begin(), r.end());
    ++rows;
}

void FeatureMatrix::push_row(std::span<const double> r) {
    std::vector<float> f(r.begin(), r.end());
    push_row(std::span<const float>(f));
}

namespace {

// Target access shared by both modes: classification keeps one class index
// per row, regression one row of outputs.
struct Targets {
    ForestMode mode;
    std::size_t outputs;
    std::span<const int> labels;
    const FeatureMatrix* y = nullptr;
};

struct Builder {
    const FeatureMatrix& x;
    const Targets& tg;
    const ForestOptions& opt;
    std::size_t mtry;
    std::mt19937_64 rng;
    Tree tree;

    std::vector<std::uint32_t> features;
    std::vector<std::pair<float, std::uint32_t>> sorted;
    std::vector<double> left_acc, total_acc;

    Builder(const FeatureMatrix& xx, const Targets& t, const ForestOptions& o, std::size_t m, std::uint64_t seed)
        : x(xx), tg(t), opt(o), mtry(m), rng(seed), features(xx.cols) {
        std::iota(features.begin(), features.end(), 0u);
        left_acc.resize(tg.outputs);
        total_acc.resize(tg.outputs);
    }

    void accumulate(std::vector<double>& acc, std::uint32_t row, double sign) const {
        if (tg.mode == ForestMode::Classification) {
            acc[static_cast<std::size_t>(tg.labels[row])] += sign;
        } else {
            const auto r = tg.y->row(row);
            for (std::size_t k = 0; k < tg.outputs; ++k) acc[k] += sign * r[k];
        }
    }

    // Larger is better: sum of squared class counts over the side size
    // (Gini) or squared output sums over the side size (variance).
    static double side_score(const std::vector<double>& acc, double n) {
        double s = 0.0;
        for (double a : acc) s += a * a;
        return s / n;
    }

    bool pure(std::span<const std::uint32_t> rows) const {
        if (tg.mode == ForestMode::Classification) {
            const int first = tg.labels[rows[0]];
            return std::all_of(rows.begin(), rows.end(), [&](auto r) { return tg.labels[r] == first; });
        }
        const auto first = tg.y->row(rows[0]);
        return std::all_of(rows.begin(), rows.end(), [&](auto r) {
            const auto v = tg.y->row(r);
            return std::equal(v.begin(), v.end(), first.begin());
        });
    }

    std::uint32_t make_leaf(std::span<const std::uint32_t> rows) {
        std::vector<double> acc(tg.outputs, 0.0);
        for (auto r : rows) accumulate(acc, r, 1.0);
        Node n;
        n.value.resize(tg.outputs);
        for (std::size_t k = 0; k < tg.outputs; ++k)
            n.value[k] = static_cast<float>(acc[k] / static_cast<double>(rows.size()));
        tree.nodes.push_back(std::move(n));
        return static_cast<std::uint32_t>(tree.nodes.size() - 1);
    }

    struct Split {
        bool found = false;
        std::uint32_t feature = 0;
        float threshold = 0.0f;
        double score = -1.0;
    };

    void evaluate_feature(std::span<const std::uint32_t> rows, std::uint32_t f, Split& best) {
        sorted.clear();
        for (auto r : rows) sorted.emplace_back(x(r, f), r);
        std::sort(sorted.begin(), sorted.end());
        if (sorted.front().first == sorted.back().first) return;
        std::fill(left_acc.begin(), left_acc.end(), 0.0);
        const auto n = sorted.size();
        const auto min_leaf = static_cast<std::size_t>(std::max(1, opt.min_samples_leaf));
        for (std::size_t i = 0; i + 1 < n; ++i) {
            accumulate(left_acc, sorted[i].second, 1.0);
            const std::size_t nl = i + 1, nr = n - nl;
            if (sorted[i].first == sorted[i + 1].first || nl < min_leaf || nr < min_leaf) continue;
            double right_score = 0.0;
            for (std::size_t k = 0; k < tg.outputs; ++k) {
                const double rv = total_acc[k] - left_acc[k];
                right_score += rv * rv;
            }
            const double score = side_score(left_acc, static_cast<double>(nl)) + right_score / static_cast<double>(nr);
            if (score > best.score) {
                const float a = sorted[i].first, b = sorted[i + 1].first;
                float t = a + (b - a) * 0.5f;
                if (!(t >= a && t < b)) t = a;
                best = {true, f, t, score};
            }
        }
    }

    std::uint32_t build(std::span<std::uint32_t> rows, int depth) {
        const auto min_leaf = static_cast<std::size_t>(std::max(1, opt.min_samples_leaf));
        if (rows.size() < 2 * min_leaf || (opt.max_depth > 0 && depth >= opt.max_depth) || pure(rows))
            return make_leaf(rows);

        std::fill(total_acc.begin(), total_acc.end(), 0.0);
        for (auto r : rows) accumulate(total_acc, r, 1.0);

        // Draw features without replacement; keep drawing past mtry until a
        // valid split exists.
        Split best;
        for (std::size_t j = 0; j < features.size(); ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, features.size() - 1);
            std::swap(features[j], features[pick(rng)]);
            if (j >= mtry && best.found) break;
            evaluate_feature(rows, features[j], best);
        }
        if (!best.found) return make_leaf(rows);

        const auto mid = std::stable_partition(rows.begin(), rows.end(),
                                               [&](auto r) { return x(r, best.feature) <= best.threshold; });
        const auto split_at = static_cast<std::size_t>(mid - rows.begin());

        const auto self = static_cast<std::uint32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes[self].feature = static_cast<std::uint16_t>(best.feature);
        tree.nodes[self].threshold = best.threshold;
        const auto l = build(rows.subspan(0, split_at), depth + 1);
        const auto r = build(rows.subspan(split_at), depth + 1);
        tree.nodes[self].left = l;
        tree.nodes[self].right = r;
        return self;
    }
};

ForestFit fit(const FeatureMatrix& x, const Targets& tg, const ForestOptions& opt) {
    require(opt.trees >= 1, "forest needs at least one tree");
    require(x.rows >= 1 && x.cols >= 1, "forest needs a non-empty feature matrix");
    require(x.cols < kLeaf, "too many features");
    std::size_t mtry = static_cast<std::size_t>(opt.features_per_node);
    if (mtry == 0) {
        mtry = tg.mode == ForestMode::Classification
                   ? static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(x.cols))))
                   : x.cols / 3;
    }
    mtry = std::clamp<std::size_t>(mtry, 1, x.cols);

    const auto T = static_cast<std::size_t>(opt.trees);
    const std::size_t n = x.rows;
    ForestFit out;
    out.model.mode = tg.mode;
    out.model.feature_count = static_cast<std::uint32_t>(x.cols);
    out.model.output_count = static_cast<std::uint32_t>(tg.outputs);
    out.model.seed = opt.seed;
    out.model.trees.resize(T);
    std::vector<std::vector<std::uint8_t>> in_bag(T);

    parallel_for(T, [&](std::size_t t) {
        const auto seed = derive_seed(opt.seed, t);
        std::mt19937_64 rng(seed);
        std::vector<std::uint32_t> rows(n);
        in_bag[t].assign(n, 0);
        if (opt.bootstrap) {
            std::uniform_int_distribution<std::uint32_t> draw(0, static_cast<std::uint32_t>(n - 1));
            for (auto& r : rows) r = draw(rng);
        } else {
            std::iota(rows.begin(), rows.end(), 0u);
        }
        for (auto r : rows) in_bag[t][r] = 1;
        std::sort(rows.begin(), rows.end());
        Builder b(x, tg, opt, mtry, rng());
        b.build(rows, 0);
        out.model.trees[t] = std::move(b.tree);
    });

    out.oob_prediction.assign(n, {});
    out.oob_trees.assign(n, 0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < n; ++i) {
            if (in_bag[t][i]) continue;
            auto& acc = out.oob_prediction[i];
            if (acc.empty()) acc.assign(tg.outputs, 0.0);
            const auto& v = out.model.trees[t].leaf(x.row(i));
            for (std::size_t k = 0; k < tg.outputs; ++k) acc[k] += v[k];
            ++out.oob_trees[i];
        }
    double score = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.oob_trees[i]) continue;
        auto& acc = out.oob_prediction[i];
        for (auto& v : acc) v /= out.oob_trees[i];
        ++counted;
        if (tg.mode == ForestMode::Classification) {
            const auto arg = static_cast<int>(std::max_element(acc.begin(), acc.end()) - acc.begin());
            score += arg == tg.labels[i] ? 1.0 : 0.0;
        } else {
            double se = 0.0;
            const auto r = tg.y->row(i);
            for (std::size_t k = 0; k < tg.outputs; ++k) se += (acc[k] - r[k]) * (acc[k] - r[k]);
            score += se / static_cast<double>(tg.outputs);
        }
    }
    out.oob_score = counted ? score / static_cast<double>(counted) : 0.0;
    return out;
}

}  // namespace

ForestFit train_forest(const FeatureMatrix& x, std::span<const int> labels, const ForestOptions& opt) {
    require(labels.size() == x.rows, "label count does not match the feature rows");
    int max_label = -1;
    for (int l : labels) {
        require(l >= 0, "class labels must be >= 0");
        max_label = std::max(max_label, l);
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(max_label + 1), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    const auto present = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; });
    if (present < 2) fail(ErrorCode::InvalidTrainingSet, "classification forest needs at least two classes");
    return fit(x, Targets{ForestMode::Classification, std::max<std::size_t>(2, counts.size()), labels}, opt);
}

ForestFit train_regression_forest(const FeatureMatrix& x, const FeatureMatrix& y, const ForestOptions& opt) {
    require(y.rows == x.rows && y.cols >= 1, "regression targets do not match the feature rows");
    return fit(x, Targets{ForestMode::Regression, y.cols, {}, &y}, opt);
}

std::vector<char> encode_forest(const ForestModel& model) {
    model.validate();
    BinaryWriter w;
    w.tag("CSFR");
    w.put<std::uint32_t>(1);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(model.mode));
    w.put<std::uint32_t>(model.feature_count);
    w.put<std::uint32_t>(model.output_count);
    w.put<std::uint64_t>(model.seed);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.trees.size()));
    for (const auto& t : model.trees) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.nodes.size()));
        for (const auto& n : t.nodes) {
            w.put<std::uint16_t>(n.feature);
            w.put<float>(n.threshold);
            w.put<std::uint32_t>(n.left);
            w.put<std::uint32_t>(n.right);
            if (n.is_leaf()) w.put_array(n.value);
        }
    }
    return w.buffer();
}

ForestModel decode_forest(std::vector<char> bytes) {
    BinaryReader r(std::move(bytes));
    r.expect_tag("CSFR");
    r.get_in<std::uint32_t>(1, 1, "forest version");
    ForestModel m;
    m.mode = static_cast<ForestMode>(r.get_in<std::uint8_t>(0, 1, "forest mode"));
    m.feature_count = r.get_in<std::uint32_t>(1, kLeaf - 1, "feature count");
    m.output_count = r.get_in<std::uint32_t>(1, 1u << 16, "output count");
    m.seed = r.get<std::uint64_t>();
    const auto trees = r.get_in<std::uint32_t>(0, 1u << 16, "tree count");
    for (std::uint32_t t = 0; t < trees; ++t) {
        Tree tree;
        const auto count = r.get_in<std::uint32_t>(1, 1u << 26, "node count");
        for (std::uint32_t i = 0; i < count; ++i) {
            Node n;
            n.feature = r.get<std::uint16_t>();
            n.threshold = r.get_finite_f32("split threshold");
            n.left = r.get<std::uint32_t>();
            n.right = r.get<std::uint32_t>();
            if (n.is_leaf()) {
                n.value.resize(m.output_count);
                for (auto& v : n.value) v = r.get_finite_f32("leaf value");
            }
            tree.nodes.push_back(std::move(n));
        }
        m.trees.push_back(std::move(tree));
    }
    if (!r.at_end()) fail(ErrorCode::FormatError, "trailing bytes after forest at byte " + std::to_string(r.offset()));
    m.validate();
    return m;
}

void save_forest(const std::string& path, const ForestModel& model) { write_file_bytes(path, encode_forest(model)); }

ForestModel load_forest(const std::string& path) { return decode_forest(read_file_bytes(path)); }

}  // namespace cseg::forest
