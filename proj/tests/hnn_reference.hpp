#pragma once

// Straight-loop reference for the network forward pass and the
// class-balanced objective, written without any code from the library's
// implementation.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cseg/hnn.hpp"

namespace cseg::test {

struct RefMap {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;
    RefMap(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_ * h_ * w_), 0.0) {}
    double& at(int ch, int y, int x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
    double at(int ch, int y, int x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
};

inline int ref_reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
}

inline RefMap ref_conv_act(const hnn::Conv<double>& cv, const RefMap& in) {
    RefMap out(cv.out_channels, in.h, in.w);
    const int k = cv.kernel, r = k / 2;
    for (int o = 0; o < cv.out_channels; ++o)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                double s = cv.bias[static_cast<std::size_t>(o)];
                for (int i = 0; i < cv.in_channels; ++i)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || xx < 0 || yy >= in.h || xx >= in.w) continue;
                            s += cv.weight[static_cast<std::size_t>(((o * cv.in_channels + i) * k + dy + r) * k + dx + r)] *
                                 in.at(i, yy, xx);
                        }
                out.at(o, y, x) = std::log(1.0 + std::exp(s)) - std::log(2.0);
            }
    return out;
}

inline RefMap ref_pool(const RefMap& in) {
    RefMap out(in.c, in.h / 2, in.w / 2);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(c, y, x) = (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) + in.at(c, 2 * y + 1, 2 * x) +
                                   in.at(c, 2 * y + 1, 2 * x + 1)) / 4.0;
    return out;
}

// Bilinear sample of a low-resolution plane at output pixel (y, x) for an
// integer factor, pixel centres aligned and edges clamped.
inline double ref_bilinear(const std::vector<double>& low, int lh, int lw, int f, int y, int x) {
    auto coord = [&](int o, int n) { return std::clamp((o + 0.5) / f - 0.5, 0.0, n - 1.0); };
    const double sy = coord(y, lh), sx = coord(x, lw);
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, lh - 1), x1 = std::min(x0 + 1, lw - 1);
    const double ty = sy - y0, tx = sx - x0;
    auto L = [&](int yy, int xx) { return low[static_cast<std::size_t>(yy * lw + xx)]; };
    return (1 - ty) * ((1 - tx) * L(y0, x0) + tx * L(y0, x1)) + ty * ((1 - tx) * L(y1, x0) + tx * L(y1, x1));
}

struct RefForward {
    std::vector<std::vector<double>> side_act;  // per stage, h0*w0
    std::vector<double> fused_act;
};

inline RefForward ref_forward(const hnn::BasicParams<double>& p, const Image<std::uint8_t>& img) {
    const int M = p.stage_count();
    const int f = 1 << (M - 1);
    const int h = (img.height + f - 1) / f * f, w = (img.width + f - 1) / f * f;
    RefMap x(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            x.at(0, y, xx) = img(ref_reflect(xx, img.width), ref_reflect(y, img.height)) / 255.0;
    RefForward out;
    RefMap cur = x;
    for (int m = 0; m < M; ++m) {
        if (m > 0) cur = ref_pool(cur);
        for (const auto& cv : p.stages[static_cast<std::size_t>(m)]) cur = ref_conv_act(cv, cur);
        const auto& sc = p.side[static_cast<std::size_t>(m)];
        std::vector<double> low(static_cast<std::size_t>(cur.h * cur.w));
        for (int y = 0; y < cur.h; ++y)
            for (int xx = 0; xx < cur.w; ++xx) {
                double s = sc.bias[0];
                for (int c = 0; c < cur.c; ++c) s += sc.weight[static_cast<std::size_t>(c)] * cur.at(c, y, xx);
                low[static_cast<std::size_t>(y * cur.w + xx)] = s;
            }
        std::vector<double> up(static_cast<std::size_t>(img.height * img.width));
        for (int y = 0; y < img.height; ++y)
            for (int xx = 0; xx < img.width; ++xx)
                up[static_cast<std::size_t>(y * img.width + xx)] = ref_bilinear(low, cur.h, cur.w, 1 << m, y, xx);
        out.side_act.push_back(std::move(up));
    }
    out.fused_act.assign(static_cast<std::size_t>(img.height * img.width), p.fuse_bias);
    for (int m = 0; m < M; ++m)
        for (std::size_t j = 0; j < out.fused_act.size(); ++j)
            out.fused_act[j] += p.fuse_weight[static_cast<std::size_t>(m)] * out.side_act[static_cast<std::size_t>(m)][j];
    return out;
}

inline double ref_sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// -beta * sum_{Y+} log p - (1 - beta) * sum_{Y-} log(1 - p), p clamped.
inline double ref_balanced_loss(const std::vector<double>& prob, const std::vector<std::uint8_t>& gt, double beta) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t j = 0; j < prob.size(); ++j) {
        double p = prob[j];
        if (p < 1e-7) p = 1e-7;
        if (p > 1.0 - 1e-7) p = 1.0 - 1e-7;
        if (gt[j] != 0)
            pos += std::log(p);
        else
            neg += std::log(1.0 - p);
    }
    return -beta * pos - (1.0 - beta) * neg;
}

inline double ref_objective(const hnn::BasicParams<double>& p, const hnn::Sample& s, const std::vector<double>& alpha,
                            double beta) {
    const auto f = ref_forward(p, s.image);
    double total = 0.0;
    for (std::size_t m = 0; m < f.side_act.size(); ++m) {
        std::vector<double> prob;
        for (double a : f.side_act[m]) prob.push_back(ref_sigmoid(a));
        total += alpha[m] * ref_balanced_loss(prob, s.gt.data, beta);
    }
    std::vector<double> prob;
    for (double a : f.fused_act) prob.push_back(ref_sigmoid(a));
    return total + ref_balanced_loss(prob, s.gt.data, beta);
}

}  // namespace cseg::test
