#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cseg/hnn.hpp"
#include "hnn_reference.hpp"

using namespace cseg;
using namespace cseg::hnn;

namespace {

NetConfig tiny_net(int stages = 3) {
    NetConfig cfg;
    cfg.stages.clear();
    cfg.alpha.clear();
    for (int m = 0; m < stages; ++m) {
        cfg.stages.push_back({3 + m, 1 + (m % 2)});
        cfg.alpha.push_back(1.0);
    }
    return cfg;
}

Sample random_sample(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> px(0, 255);
    Sample s{Image<std::uint8_t>(w, h), Image<std::uint8_t>(w, h)};
    for (auto& v : s.image.data) v = static_cast<std::uint8_t>(px(rng));
    for (auto& v : s.gt.data) v = px(rng) < 90 ? 1 : 0;
    return s;
}

// A disc in the middle of a noisy image.
Sample disc_sample(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 12.0);
    Sample s{Image<std::uint8_t>(n, n), Image<std::uint8_t>(n, n)};
    const double c = (n - 1) / 2.0, r = n / 4.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const bool in = (x - c) * (x - c) + (y - c) * (y - c) <= r * r;
            s.gt(x, y) = in ? 1 : 0;
            s.image(x, y) = static_cast<std::uint8_t>(std::clamp((in ? 170.0 : 90.0) + noise(rng), 0.0, 255.0));
        }
    return s;
}

BasicParams<double> random_params(const NetConfig& cfg, std::uint64_t seed) {
    auto p = convert_params<double>(init_params(cfg, seed));
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& c : p.side) {
        for (auto& v : c.bias) v = n(rng);
        for (auto& v : c.weight) v += n(rng);
    }
    for (auto& h : p.fuse_weight) h += n(rng);
    p.fuse_bias = n(rng);
    return p;
}

double mask_dsc(const Image<float>& prob, const Image<std::uint8_t>& gt) {
    double inter = 0, a = 0, b = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
        const bool p = prob.data[j] >= 0.5f;
        inter += p && gt.data[j];
        a += p;
        b += gt.data[j] != 0;
    }
    return 2 * inter / (a + b);
}

}  // namespace

TEST_SUITE("hnn") {

TEST_CASE("beta definition") {
    Image<std::uint8_t> m(10, 1);
    for (int i = 0; i < 3; ++i) m.data[static_cast<std::size_t>(i)] = 1;
    std::vector<Image<std::uint8_t>> one{m};
    CHECK(compute_beta(one) == doctest::Approx(0.7).epsilon(1e-15));

    Image<std::uint8_t> pos(10, 10);
    for (int i = 0; i < 10; ++i) pos.data[static_cast<std::size_t>(i)] = 1;
    std::vector<Image<std::uint8_t>> two{pos, Image<std::uint8_t>(10, 10)};
    CHECK(compute_beta(two) == doctest::Approx(190.0 / 200.0));
    std::vector<Image<std::uint8_t>> corpus{pos};
    CHECK(compute_beta(corpus) == doctest::Approx(0.9));

    std::vector<Image<std::uint8_t>> none{Image<std::uint8_t>(4, 4)};
    CHECK_THROWS_AS(compute_beta(none), Error);
}

TEST_CASE("pooled beta differs from the mean of per-slice betas") {
    // Slice A: 2x2 with one positive; slice B: 4x4 with one positive.
    Image<std::uint8_t> a(2, 2), b(4, 4);
    a.data[0] = 1;
    b.data[0] = 1;
    std::vector<Image<std::uint8_t>> both{a, b};
    const double pooled = compute_beta(both);
    const double mean_of_slices = (3.0 / 4.0 + 15.0 / 16.0) / 2.0;
    CHECK(pooled == doctest::Approx(18.0 / 20.0));
    CHECK(std::abs(pooled - mean_of_slices) > 1e-3);
}

TEST_CASE("side loss examples") {
    Image<float> p(1, 1, 0.5f);
    Image<std::uint8_t> g(1, 1, 1);
    CHECK(side_loss(p, g, 0.7) == doctest::Approx(0.7 * std::log(2.0)).epsilon(1e-12));

    Image<float> exact(3, 3, 0.0f);
    Image<std::uint8_t> gt(3, 3, 0);
    exact.data[4] = 1.0f;
    gt.data[4] = 1;
    CHECK(side_loss(exact, gt, 0.5) <= 9 * -std::log(1.0 - kLogEpsilon) + 1e-12);
    CHECK_THROWS_AS(side_loss(Image<float>(2, 2), Image<std::uint8_t>(2, 3), 0.5), Error);
}

TEST_CASE("side loss matches the scalar-loop oracle on random 4x4 maps") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        Image<double> p(4, 4);
        Image<std::uint8_t> g(4, 4);
        std::vector<double> pv;
        for (std::size_t j = 0; j < 16; ++j) {
            p.data[j] = t % 10 == 0 && j % 5 == 0 ? (j % 2 ? 0.0 : 1.0) : u(rng);
            g.data[j] = u(rng) < 0.4 ? 1 : 0;
            pv.push_back(p.data[j]);
        }
        const double beta = 0.05 + 0.9 * u(rng);
        CHECK(std::abs(side_loss(p, g, beta) - test::ref_balanced_loss(pv, g.data, beta)) <= 1e-12);
    }
}

TEST_CASE("side loss is invariant under pixel permutation") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<double> p(5, 5);
    Image<std::uint8_t> g(5, 5);
    for (std::size_t j = 0; j < 25; ++j) {
        p.data[j] = u(rng);
        g.data[j] = u(rng) < 0.3;
    }
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Image<double> q(5, 5);
    Image<std::uint8_t> h(5, 5);
    for (std::size_t j = 0; j < 25; ++j) {
        q.data[j] = p.data[perm[j]];
        h.data[j] = g.data[perm[j]];
    }
    CHECK(side_loss(p, g, 0.8) == doctest::Approx(side_loss(q, h, 0.8)).epsilon(1e-12));
}

TEST_CASE("zero network predicts one half everywhere") {
    const auto cfg = tiny_net();
    const auto p = zero_params<float>(cfg);
    const auto s = random_sample(13, 11, 3);
    const auto f = forward(p, s.image);
    CHECK(f.fused.width == 13);
    CHECK(f.fused.height == 11);
    REQUIRE(f.sides.size() == 3);
    for (float v : f.fused.data) CHECK(v == 0.5f);
    for (const auto& side : f.sides) {
        CHECK(side.width == 13);
        for (float v : side.data) CHECK(v == 0.5f);
    }
}

TEST_CASE("forward matches the straight-loop reference") {
    for (int stages : {2, 3, 4}) {
        const auto cfg = tiny_net(stages);
        const auto p = random_params(cfg, 10 + static_cast<std::uint64_t>(stages));
        for (auto [w, h] : {std::pair{16, 16}, std::pair{13, 9}, std::pair{7, 20}}) {
            const auto s = random_sample(w, h, static_cast<std::uint64_t>(w * h));
            const auto ref = test::ref_forward(p, s.image);
            const auto got = forward(convert_params<float>(p), s.image);
            double err = 0.0;
            for (std::size_t j = 0; j < ref.fused_act.size(); ++j) {
                err = std::max(err, std::abs(ref.fused_act[j] - got.fused_activation.data[j]));
                for (int m = 0; m < stages; ++m)
                    err = std::max(err, std::abs(ref.side_act[static_cast<std::size_t>(m)][j] -
                                                 got.activations[static_cast<std::size_t>(m)].data[j]));
            }
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("fused map is the sigmoid of the weighted side activations") {
    const auto cfg = tiny_net();
    const auto p = convert_params<float>(random_params(cfg, 4));
    const auto f = forward(p, random_sample(16, 16, 4).image);
    for (std::size_t j = 0; j < f.fused.size(); ++j) {
        double a = p.fuse_bias;
        for (std::size_t m = 0; m < 3; ++m) a += p.fuse_weight[m] * f.activations[m].data[j];
        CHECK(std::abs(f.fused.data[j] - 1.0 / (1.0 + std::exp(-a))) < 1e-6);
        CHECK(f.fused.data[j] >= 0.0f);
        CHECK(f.fused.data[j] <= 1.0f);
    }
}

TEST_CASE("raising a fusion weight raises the fused map where that side is positive") {
    const auto cfg = tiny_net();
    auto p = convert_params<float>(random_params(cfg, 5));
    const auto img = random_sample(16, 16, 5).image;
    const auto before = forward(p, img);
    p.fuse_weight[1] += 0.25f;
    const auto after = forward(p, img);
    for (std::size_t j = 0; j < before.fused.size(); ++j) {
        const float a = before.activations[1].data[j];
        if (a > 1e-3f) CHECK(after.fused.data[j] > before.fused.data[j]);
        if (a < -1e-3f) CHECK(after.fused.data[j] < before.fused.data[j]);
    }
}

TEST_CASE("objective matches the reference on random 4x4 cases") {
    auto cfg = tiny_net(2);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int t = 0; t < 100; ++t) {
        cfg.alpha = {u(rng), u(rng)};
        const double beta = 0.1 + 0.4 * u(rng);
        const auto p = random_params(cfg, 100 + static_cast<std::uint64_t>(t));
        const auto s = random_sample(4, 4, 200 + static_cast<std::uint64_t>(t));
        const double got = objective_and_gradient<double>(p, s, cfg, {beta}, nullptr);
        const double ref = test::ref_objective(p, s, cfg.alpha, beta);
        CHECK(std::abs(got - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
    }
}

TEST_CASE("objective composes forward and side loss") {
    const auto cfg = tiny_net();
    const auto p = convert_params<float>(random_params(cfg, 6));
    const auto s = random_sample(16, 16, 6);
    const LossConfig loss{0.7};
    const auto f = forward(p, s.image);
    double expect = side_loss(f.fused, s.gt, loss.beta);
    for (std::size_t m = 0; m < 3; ++m) expect += cfg.alpha[m] * side_loss(f.sides[m], s.gt, loss.beta);
    CHECK(std::abs(total_objective(p, s, cfg, loss) - expect) <= 1e-10 * expect);
}

TEST_CASE("zero side weights leave the fusion loss") {
    auto cfg = tiny_net();
    cfg.alpha = {0.0, 0.0, 0.0};
    const auto p = convert_params<float>(random_params(cfg, 7));
    const auto s = random_sample(16, 16, 7);
    const auto f = forward(p, s.image);
    CHECK(total_objective(p, s, cfg, {0.6}) == doctest::Approx(side_loss(f.fused, s.gt, 0.6)).epsilon(1e-10));
}

TEST_CASE("single stage with unit fusion equals its side loss") {
    NetConfig cfg;
    cfg.stages = {{3, 1}};
    cfg.alpha = {0.0};
    auto p = convert_params<float>(random_params(tiny_net(2), 9));
    p.stages.resize(1);
    p.side.resize(1);
    p.side[0].in_channels = p.stages[0].back().out_channels;
    p.side[0].weight.resize(static_cast<std::size_t>(p.side[0].in_channels));
    p.fuse_weight = {1.0f};
    p.fuse_bias = 0.0f;
    const auto s = random_sample(9, 9, 9);
    const auto f = forward(p, s.image);
    CHECK(total_objective(p, s, cfg, {0.6}) == doctest::Approx(side_loss(f.sides[0], s.gt, 0.6)).epsilon(1e-10));
}

TEST_CASE("gradient check on a 16x16 sample") {
    const auto cfg = tiny_net();
    const auto p = random_params(cfg, 11);
    const auto s = random_sample(16, 16, 11);
    const auto r = grad_check(p, s, cfg, {0.7}, 256);
    CHECK(r.coordinates >= 200);
    CHECK(r.weight_coords > 0);
    CHECK(r.side_coords > 0);
    CHECK(r.fuse_coords == 4);
    CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("stationary point of the zero network") {
    // With zero weights every activation is 0, so only the bias and fusion
    // gradients can be non-zero; a symmetric gt with beta = 1/2 cancels the
    // bias gradients as well.
    const auto cfg = tiny_net();
    const auto p = zero_params<double>(cfg);
    Sample s{Image<std::uint8_t>(8, 8, 0), Image<std::uint8_t>(8, 8, 0)};
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) s.gt(x, y) = 1;
    BasicParams<double> g;
    objective_and_gradient<double>(p, s, cfg, {0.5}, &g);
    double max_abs = 0.0;
    for (double v : flatten(g)) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs < 1e-12);
    const auto r = grad_check(p, s, cfg, {0.5}, 64);
    CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("fusion-weight gradients have the closed form") {
    const auto cfg = tiny_net();
    const auto p = random_params(cfg, 12);
    const auto s = random_sample(12, 12, 12);
    const double beta = 0.65;
    BasicParams<double> g;
    objective_and_gradient<double>(p, s, cfg, {beta}, &g);
    const auto ref = test::ref_forward(p, s.image);
    for (std::size_t m = 0; m < 3; ++m) {
        double expect = 0.0;
        for (std::size_t j = 0; j < ref.fused_act.size(); ++j) {
            const double q = test::ref_sigmoid(ref.fused_act[j]);
            const double dl = s.gt.data[j] ? -beta * (1.0 - q) : (1.0 - beta) * q;
            expect += dl * ref.side_act[m][j];
        }
        CHECK(g.fuse_weight[m] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("training is deterministic and lowers the loss in the first epoch") {
    NetConfig cfg = tiny_net();
    cfg.epochs = 3;
    cfg.batch_size = 1;
    cfg.seed = 5;
    const std::vector<Sample> data{disc_sample(32, 1)};
    const LossConfig loss{compute_beta(std::vector<Image<std::uint8_t>>{data[0].gt})};
    const auto a = train(cfg, loss, data);
    const auto b = train(cfg, loss, data);
    CHECK(a.params == b.params);
    CHECK(a.epoch_losses == b.epoch_losses);
    const auto init = init_params(cfg, cfg.seed);
    const double before = total_objective(init, data[0], cfg, loss);
    auto one = cfg;
    one.epochs = 1;
    const double after = total_objective(train(one, loss, data).params, data[0], cfg, loss);
    CHECK(after < before);
}

TEST_CASE("single-sample overfit") {
    NetConfig cfg;
    cfg.epochs = 500;
    cfg.batch_size = 1;
    cfg.seed = 3;
    const std::vector<Sample> data{disc_sample(32, 2)};
    const LossConfig loss{compute_beta(std::vector<Image<std::uint8_t>>{data[0].gt})};
    const auto r = train(cfg, loss, data);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    CHECK(mask_dsc(forward(r.params, data[0].image).fused, data[0].gt) >= 0.95);
}

TEST_CASE("training rejects bad inputs") {
    NetConfig cfg = tiny_net();
    CHECK_THROWS_AS(train(cfg, {0.5}, {}), Error);
    CHECK_THROWS_AS(train(cfg, {1.0}, {disc_sample(8, 1)}), Error);
    cfg.stages = {{4, 1}};
    cfg.alpha = {1.0};
    CHECK_THROWS_AS(cfg.validate(), Error);
    Sample bad{Image<std::uint8_t>(4, 4), Image<std::uint8_t>(4, 5)};
    CHECK_THROWS_AS(total_objective(init_params(tiny_net(), 1), bad, tiny_net(), {0.5}), Error);
}

TEST_CASE("divergence is reported with the epoch") {
    NetConfig cfg = tiny_net();
    cfg.learning_rate = 1e30;
    cfg.momentum = 0.0;
    cfg.epochs = 5;
    cfg.batch_size = 1;
    try {
        train(cfg, {0.5}, {disc_sample(16, 3)});
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NumericFailure);
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip") {
    const auto cfg = tiny_net();
    const auto p = init_params(cfg, 77);
    const auto bytes = encode_checkpoint(cfg, p);
    const auto back = decode_checkpoint(bytes);
    CHECK(back.params == p);
    CHECK(back.cfg.stage_count() == cfg.stage_count());
    CHECK(back.cfg.alpha == cfg.alpha);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), Error);
    auto cut = bytes;
    cut.resize(cut.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(cut), Error);
}

}
