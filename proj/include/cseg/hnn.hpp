#pragma once

// Holistically-nested network: a small fully convolutional network whose
// stages (cumulative strides 1, 2, 4, ...) each feed a deeply supervised
// side output, plus a learned weighted fusion of the side activations.
// The same architecture is trained for interior maps and boundary maps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg::hnn {

struct StageConfig {
    int channels = 8;
    int depth = 2;  // number of 3x3 conv + centred softplus layers
};

struct NetConfig {
    // Stage m (0-based) runs at stride 2^m; stages after the first start
    // with 2x2 average pooling. Activations are softplus(x) - log 2.
    std::vector<StageConfig> stages{{6, 2}, {12, 2}, {16, 2}};
    int kernel_size = 3;
    std::vector<double> alpha{1.0, 1.0, 1.0};  // side-loss weights

    double learning_rate = 1e-2;
    double momentum = 0.9;
    int epochs = 10;
    int batch_size = 8;
    std::uint64_t seed = 1;

    int stage_count() const { return static_cast<int>(stages.size()); }
    int max_stride() const { return 1 << (stage_count() - 1); }
    void validate() const;
};

struct LossConfig {
    double beta = 0.5;  // weight of the positive class, |Y-| / |Y| over the training set
};

inline constexpr double kLogEpsilon = 1e-7;

template <typename T>
struct Conv {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    std::vector<T> weight;  // out x (in * k * k), row-major
    std::vector<T> bias;    // out
};

// W = stage convolutions, w = side-output 1x1 classifiers, h = fusion weights.
template <typename T>
struct BasicParams {
    std::vector<std::vector<Conv<T>>> stages;
    std::vector<Conv<T>> side;
    std::vector<T> fuse_weight;
    T fuse_bias{};

    int stage_count() const { return static_cast<int>(stages.size()); }
    int max_stride() const { return 1 << (stage_count() - 1); }

    // Visits every tensor in checkpoint order: each stage conv (weight,
    // bias), each side conv (weight, bias), fusion weights, fusion bias.
    template <typename F>
    void for_each_tensor(F&& fn) {
        for (auto& st : stages)
            for (auto& c : st) {
                fn(std::span<T>(c.weight));
                fn(std::span<T>(c.bias));
            }
        for (auto& c : side) {
            fn(std::span<T>(c.weight));
            fn(std::span<T>(c.bias));
        }
        fn(std::span<T>(fuse_weight));
        fn(std::span<T>(&fuse_bias, 1));
    }
    template <typename F>
    void for_each_tensor(F&& fn) const {
        const_cast<BasicParams*>(this)->for_each_tensor([&](std::span<T> s) { fn(std::span<const T>(s)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&](std::span<const T> s) { n += s.size(); });
        return n;
    }

    friend bool operator==(const BasicParams& a, const BasicParams& b) {
        std::vector<T> fa, fb;
        a.for_each_tensor([&](std::span<const T> s) { fa.insert(fa.end(), s.begin(), s.end()); });
        b.for_each_tensor([&](std::span<const T> s) { fb.insert(fb.end(), s.begin(), s.end()); });
        return fa == fb;
    }
};

using HnnParams = BasicParams<float>;

// Same shapes as cfg, all zeros.
template <typename T = float>
BasicParams<T> zero_params(const NetConfig& cfg);

// He-normal conv weights, small side classifiers, fusion weights 1/M.
HnnParams init_params(const NetConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
BasicParams<To> convert_params(const BasicParams<From>& p);

// Flat views in checkpoint order.
template <typename T>
std::vector<T> flatten(const BasicParams<T>& p);
template <typename T>
void unflatten(BasicParams<T>& p, std::span<const T> flat);

struct SidePrediction {
    Image<float> fused;                     // sigma(fused_activation)
    Image<float> fused_activation;          // sum_m h_m * A_m + bias
    std::vector<Image<float>> sides;        // sigma(A_m), input resolution
    std::vector<Image<float>> activations;  // A_m, input resolution
};

struct Sample {
    Image<std::uint8_t> image;
    Image<std::uint8_t> gt;
};

// beta = negatives / total over every mask pooled; throws InvalidTrainingSet
// when the corpus has no positive pixel.
double compute_beta(std::span<const Image<std::uint8_t>> masks);

// Class-balanced cross-entropy summed over pixels; probabilities are clamped
// to [eps, 1 - eps].
double side_loss(const Image<float>& pred, const Image<std::uint8_t>& gt, double beta);
double side_loss(const Image<double>& pred, const Image<std::uint8_t>& gt, double beta);

// Input intensities are scaled to [0, 1]. Sizes not divisible by the largest
// stride are reflect-padded and the outputs cropped back.
SidePrediction forward(const HnnParams& params, const Image<std::uint8_t>& image);

// sum_m alpha_m * l_side^(m) + l_fuse.
double total_objective(const HnnParams& params, const Sample& sample, const NetConfig& cfg,
                       const LossConfig& loss);

// Objective and its exact gradient by back propagation. grad must have the
// shapes of params; it is overwritten.
template <typename T>
double objective_and_gradient(const BasicParams<T>& params, const Sample& sample, const NetConfig& cfg,
                              const LossConfig& loss, BasicParams<T>* grad);

struct TrainResult {
    HnnParams params;
    std::vector<double> epoch_losses;  // mean normalised loss per epoch
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

// Mini-batch SGD with momentum. The step uses the objective divided by
// 2*beta*(1-beta)*|Y|, which makes the learning rate independent of image
// size and class balance. Deterministic for a fixed cfg.seed regardless of
// the worker count.
TrainResult train(const NetConfig& cfg, const LossConfig& loss, const std::vector<Sample>& dataset,
                  const EpochCallback& on_epoch = {});

// As train, continuing from the given parameters.
TrainResult train_from(HnnParams params, const NetConfig& cfg, const LossConfig& loss,
                       const std::vector<Sample>& dataset, const EpochCallback& on_epoch = {});

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t weight_coords = 0;  // W
    std::size_t side_coords = 0;    // w
    std::size_t fuse_coords = 0;    // h and fusion bias
};

// Central finite differences (step 1e-3, f64) against the analytic gradient
// on `coordinates` random parameter coordinates covering W, w and h. The
// relative error is |numeric - analytic| / max(|numeric|, |analytic|, 1e-6).
GradCheckResult grad_check(const HnnParams& params, const Sample& sample, const NetConfig& cfg,
                           const LossConfig& loss, std::size_t coordinates = 256, std::uint64_t seed = 7,
                           double step = 1e-3);
GradCheckResult grad_check(const BasicParams<double>& params, const Sample& sample, const NetConfig& cfg,
                           const LossConfig& loss, std::size_t coordinates = 256, std::uint64_t seed = 7,
                           double step = 1e-3);

// Checkpoint: "CSHN", u32 version, NetConfig, then f32 tensors in
// for_each_tensor order.
void save_checkpoint(const std::string& path, const NetConfig& cfg, const HnnParams& params);
struct Checkpoint {
    NetConfig cfg;
    HnnParams params;
};
Checkpoint load_checkpoint(const std::string& path);
std::vector<char> encode_checkpoint(const NetConfig& cfg, const HnnParams& params);
Checkpoint decode_checkpoint(std::vector<char> bytes);

}  // namespace cseg::hnn
