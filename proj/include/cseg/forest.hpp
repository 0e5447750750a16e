#pragma once

// Random forests with axis-aligned splits: Gini classification forests for
// superpixel labelling and multi-output regression forests for the box
// localizer. Both share one node layout and one binary container.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cseg::forest {

enum class ForestMode : std::uint8_t { Classification = 0, Regression = 1 };

inline constexpr std::uint16_t kLeaf = 0xFFFF;

struct Node {
    std::uint16_t feature = kLeaf;  // kLeaf marks a leaf
    float threshold = 0.0f;         // go left iff x[feature] <= threshold
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::vector<float> value;  // leaves: class frequencies or output means

    bool is_leaf() const { return feature == kLeaf; }
    friend bool operator==(const Node&, const Node&) = default;
};

struct Tree {
    std::vector<Node> nodes;  // nodes[0] is the root; children follow parents

    const std::vector<float>& leaf(std::span<const float> x) const;
    friend bool operator==(const Tree&, const Tree&) = default;
};

struct ForestModel {
    ForestMode mode = ForestMode::Classification;
    std::uint32_t feature_count = 0;
    std::uint32_t output_count = 0;  // classes, or regression outputs
    std::uint64_t seed = 0;
    std::vector<Tree> trees;

    // Mean of the leaf payloads reached by x.
    std::vector<double> predict(std::span<const float> x) const;
    // Classification only: mean frequency of class 1.
    double probability(std::span<const float> x) const;

    // Throws FormatError when a feature index, child link or payload is
    // inconsistent with the header fields.
    void validate() const;

    friend bool operator==(const ForestModel&, const ForestModel&) = default;
};

// Row-major float matrix.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

    std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    float operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    void push_row(std::span<const float> r);
    void push_row(std::span<const double> r);
};

struct ForestOptions {
    int trees = 50;
    int max_depth = 0;         // 0: unlimited
    int min_samples_leaf = 1;
    int features_per_node = 0;  // 0: sqrt(F) for classification, F/3 for regression
    bool bootstrap = true;
    std::uint64_t seed = 0;
};

struct ForestFit {
    ForestModel model;
    // Out-of-bag mean prediction per training row (empty when no tree left
    // the row out) and the number of trees that did.
    std::vector<std::vector<double>> oob_prediction;
    std::vector<int> oob_trees;
    // Classification: accuracy of the OOB argmax. Regression: mean squared
    // error averaged over outputs. Computed over rows with oob_trees > 0.
    double oob_score = 0.0;
};

// Labels are class indices 0..K-1. Throws InvalidTrainingSet unless at least
// two classes are present.
ForestFit train_forest(const FeatureMatrix& x, std::span<const int> labels, const ForestOptions& opt);

// Multi-output regression minimising summed per-output variance.
ForestFit train_regression_forest(const FeatureMatrix& x, const FeatureMatrix& y, const ForestOptions& opt);

// Container: "CSFR", u32 version, u8 mode, u32 feature count, u32 output
// count, u64 seed, u32 tree count; per tree u32 node count and per node
// u16 feature, f32 threshold, u32 left, u32 right, then output_count f32 for
// leaves.
std::vector<char> encode_forest(const ForestModel& model);
ForestModel decode_forest(std::vector<char> bytes);
void save_forest(const std::string& path, const ForestModel& model);
ForestModel load_forest(const std::string& path);

}  // namespace cseg::forest
