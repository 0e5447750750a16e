#include "cseg/hnn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cseg/binary_io.hpp"
#include "cseg/parallel.hpp"

namespace cseg::hnn {

void NetConfig::validate() const {
    require(stage_count() >= 2 && stage_count() <= 5, "stage count must be in [2, 5]");
    require(kernel_size >= 1 && kernel_size % 2 == 1, "kernel size must be odd");
    require(alpha.size() == stages.size(), "one alpha per stage required");
    for (double a : alpha) require(a > 0.0, "alpha must be > 0");
    for (const auto& s : stages) require(s.channels >= 1 && s.depth >= 1, "stage channels/depth must be >= 1");
    require(learning_rate > 0.0 && momentum >= 0.0 && momentum < 1.0, "bad optimiser settings");
    require(epochs >= 0 && batch_size >= 1, "bad epoch/batch settings");
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
// Eigen's vectorised paths peel to the buffer alignment, so every buffer it
// reads gets a fixed alignment to keep rounding identical between runs.
template <typename T>
using AVec = std::vector<T, Eigen::aligned_allocator<T>>;

// Planar (channel, row, column) feature map.
template <typename T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    AVec<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    T* ch(int i) { return v.data() + static_cast<std::size_t>(i) * plane(); }
    const T* ch(int i) const { return v.data() + static_cast<std::size_t>(i) * plane(); }
};

template <typename T>
void im2col(const Tensor<T>& in, int k, AVec<T>& cols) {
    const int pad = k / 2;
    const std::size_t hw = in.plane();
    cols.assign(static_cast<std::size_t>(in.c) * k * k * hw, T(0));
    for (int ci = 0; ci < in.c; ++ci) {
        const T* src = in.ch(ci);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = cols.data() + (static_cast<std::size_t>((ci * k + ky) * k + kx)) * hw;
                const int dy = ky - pad, dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(in.w, in.w - dx);
                for (int y = 0; y < in.h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= in.h) continue;
                    T* drow = dst + static_cast<std::size_t>(y) * in.w;
                    const T* srow = src + static_cast<std::size_t>(sy) * in.w;
                    for (int x = x0; x < x1; ++x) drow[x] = srow[x + dx];
                }
            }
    }
}

template <typename T>
void col2im_add(const AVec<T>& cols, int k, Tensor<T>& out) {
    const int pad = k / 2;
    const std::size_t hw = out.plane();
    for (int ci = 0; ci < out.c; ++ci) {
        T* dstc = out.ch(ci);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = cols.data() + (static_cast<std::size_t>((ci * k + ky) * k + kx)) * hw;
                const int dy = ky - pad, dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(out.w, out.w - dx);
                for (int y = 0; y < out.h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= out.h) continue;
                    const T* srow = src + static_cast<std::size_t>(y) * out.w;
                    T* drow = dstc + static_cast<std::size_t>(sy) * out.w;
                    for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
                }
            }
    }
}

// Bilinear (half-pixel centres, edge clamped) interpolation weights along one axis.
template <typename T>
struct AxisInterp {
    std::vector<int> i0, i1;
    std::vector<T> lam;

    AxisInterp(int low, int factor, int count) : i0(count), i1(count), lam(count) {
        for (int o = 0; o < count; ++o) {
            double src = (o + 0.5) / factor - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(low - 1));
            const int a = static_cast<int>(std::floor(src));
            i0[o] = a;
            i1[o] = std::min(a + 1, low - 1);
            lam[o] = static_cast<T>(src - a);
        }
    }
};

template <typename T>
void upsample(const T* low, int lh, int lw, int factor, int oh, int ow, T* out) {
    if (factor == 1) {
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) out[static_cast<std::size_t>(y) * ow + x] = low[static_cast<std::size_t>(y) * lw + x];
        return;
    }
    const AxisInterp<T> ay(lh, factor, oh), ax(lw, factor, ow);
    for (int y = 0; y < oh; ++y) {
        const T* r0 = low + static_cast<std::size_t>(ay.i0[y]) * lw;
        const T* r1 = low + static_cast<std::size_t>(ay.i1[y]) * lw;
        const T ly = ay.lam[y];
        for (int x = 0; x < ow; ++x) {
            const T lx = ax.lam[x];
            const T top = r0[ax.i0[x]] * (T(1) - lx) + r0[ax.i1[x]] * lx;
            const T bot = r1[ax.i0[x]] * (T(1) - lx) + r1[ax.i1[x]] * lx;
            out[static_cast<std::size_t>(y) * ow + x] = top * (T(1) - ly) + bot * ly;
        }
    }
}

// Adjoint of upsample: accumulates into low.
template <typename T>
void upsample_adjoint(const T* grad, int lh, int lw, int factor, int oh, int ow, T* low) {
    if (factor == 1) {
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) low[static_cast<std::size_t>(y) * lw + x] += grad[static_cast<std::size_t>(y) * ow + x];
        return;
    }
    const AxisInterp<T> ay(lh, factor, oh), ax(lw, factor, ow);
    for (int y = 0; y < oh; ++y) {
        T* r0 = low + static_cast<std::size_t>(ay.i0[y]) * lw;
        T* r1 = low + static_cast<std::size_t>(ay.i1[y]) * lw;
        const T ly = ay.lam[y];
        for (int x = 0; x < ow; ++x) {
            const T g = grad[static_cast<std::size_t>(y) * ow + x];
            const T lx = ax.lam[x];
            const T gt = g * (T(1) - ly), gb = g * ly;
            r0[ax.i0[x]] += gt * (T(1) - lx);
            r0[ax.i1[x]] += gt * lx;
            r1[ax.i0[x]] += gb * (T(1) - lx);
            r1[ax.i1[x]] += gb * lx;
        }
    }
}

// Reflect-101 index for padding past the end.
int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i >= n || i < 0) i = i >= n ? 2 * (n - 1) - i : -i;
    return i;
}

template <typename T>
T sigmoid(T a) {
    return T(1) / (T(1) + std::exp(-a));
}

// Zero-centred softplus, softplus(x) - log 2. Smooth to every order, so
// central differences stay accurate; centring keeps deep activations from
// drifting upward, which bounds the curvature along weight directions.
constexpr double kLog2 = 0.69314718055994530942;

template <typename T>
T softplus(T x) {
    return (x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x))) - T(kLog2);
}

// Derivative expressed through the output y: 1 - exp(-(y + log 2)).
template <typename T>
T softplus_grad_from_output(T y) {
    return -std::expm1(-(y + T(kLog2)));
}

template <typename T>
struct ForwardState {
    int h0 = 0, w0 = 0, h = 0, w = 0;
    Tensor<T> input;
    // Per stage: per conv layer the im2col matrix and post-activation output.
    std::vector<std::vector<AVec<T>>> cols;
    std::vector<std::vector<Tensor<T>>> outs;
    std::vector<Tensor<T>> pooled;              // per stage input after pooling
    std::vector<std::vector<T>> side_low;       // 1x1 side activations at stage resolution
    std::vector<std::vector<T>> act;            // cropped, input resolution
    std::vector<T> fused_act;
};

template <typename T>
void conv_forward(const Conv<T>& conv, const Tensor<T>& in, AVec<T>& cols, Tensor<T>& out) {
    const int k = conv.kernel;
    out = Tensor<T>(conv.out_channels, in.h, in.w);
    const auto hw = static_cast<Eigen::Index>(in.plane());
    const auto rows = static_cast<Eigen::Index>(conv.in_channels) * k * k;
    const RowMat<T> W = CMapMat<T>(conv.weight.data(), conv.out_channels, rows);
    MapMat<T> O(out.v.data(), conv.out_channels, hw);
    if (k == 1) {
        CMapMat<T> X(in.v.data(), rows, hw);
        O.noalias() = W * X;
    } else {
        im2col(in, k, cols);
        CMapMat<T> X(cols.data(), rows, hw);
        O.noalias() = W * X;
    }
    for (int c = 0; c < conv.out_channels; ++c) {
        T* o = out.ch(c);
        const T b = conv.bias[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < out.plane(); ++j) o[j] = softplus(o[j] + b);
    }
}

// 2x2 average pooling, stride 2.
template <typename T>
void avgpool(const Tensor<T>& in, Tensor<T>& out) {
    out = Tensor<T>(in.c, in.h / 2, in.w / 2);
    for (int c = 0; c < in.c; ++c) {
        const T* src = in.ch(c);
        T* dst = out.ch(c);
        for (int y = 0; y < out.h; ++y) {
            const T* r0 = src + static_cast<std::size_t>(2 * y) * in.w;
            const T* r1 = r0 + in.w;
            for (int x = 0; x < out.w; ++x)
                dst[y * out.w + x] = T(0.25) * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
        }
    }
}

template <typename T>
void avgpool_adjoint(const Tensor<T>& grad, Tensor<T>& out) {
    for (int c = 0; c < grad.c; ++c) {
        const T* src = grad.ch(c);
        T* dst = out.ch(c);
        for (int y = 0; y < grad.h; ++y) {
            T* r0 = dst + static_cast<std::size_t>(2 * y) * out.w;
            T* r1 = r0 + out.w;
            for (int x = 0; x < grad.w; ++x) {
                const T g = T(0.25) * src[y * grad.w + x];
                r0[2 * x] += g;
                r0[2 * x + 1] += g;
                r1[2 * x] += g;
                r1[2 * x + 1] += g;
            }
        }
    }
}

template <typename T>
void run_forward(const BasicParams<T>& p, const Image<std::uint8_t>& image, ForwardState<T>& st) {
    const int M = p.stage_count();
    require(M >= 1 && static_cast<int>(p.side.size()) == M && static_cast<int>(p.fuse_weight.size()) == M,
            "inconsistent network parameters");
    require(image.width >= 1 && image.height >= 1, "empty input image");
    const int stride = p.max_stride();
    st.h0 = image.height;
    st.w0 = image.width;
    st.h = (image.height + stride - 1) / stride * stride;
    st.w = (image.width + stride - 1) / stride * stride;
    st.input = Tensor<T>(1, st.h, st.w);
    for (int y = 0; y < st.h; ++y) {
        const int sy = reflect(y, image.height);
        for (int x = 0; x < st.w; ++x)
            st.input.v[static_cast<std::size_t>(y) * st.w + x] =
                static_cast<T>(image(reflect(x, image.width), sy)) / T(255);
    }

    st.cols.assign(static_cast<std::size_t>(M), {});
    st.outs.assign(static_cast<std::size_t>(M), {});
    st.pooled.assign(static_cast<std::size_t>(M), {});
    st.side_low.assign(static_cast<std::size_t>(M), {});
    st.act.assign(static_cast<std::size_t>(M), {});
    const std::size_t n0 = static_cast<std::size_t>(st.h0) * st.w0;

    for (int m = 0; m < M; ++m) {
        const auto mi = static_cast<std::size_t>(m);
        const Tensor<T>* x = &st.input;
        if (m > 0) {
            avgpool(st.outs[mi - 1].back(), st.pooled[mi]);
            x = &st.pooled[mi];
        }
        const auto& layers = p.stages[mi];
        st.cols[mi].resize(layers.size());
        st.outs[mi].resize(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            require(layers[l].in_channels == x->c, "conv input channel mismatch");
            conv_forward(layers[l], *x, st.cols[mi][l], st.outs[mi][l]);
            x = &st.outs[mi][l];
        }
        // Side output: 1x1 classifier then fixed bilinear upsampling.
        const auto& sc = p.side[mi];
        require(sc.in_channels == x->c && sc.out_channels == 1, "side classifier shape mismatch");
        auto& low = st.side_low[mi];
        low.assign(x->plane(), sc.bias[0]);
        for (int c = 0; c < x->c; ++c) {
            const T wc = sc.weight[static_cast<std::size_t>(c)];
            const T* f = x->ch(c);
            for (std::size_t j = 0; j < low.size(); ++j) low[j] += wc * f[j];
        }
        st.act[mi].assign(n0, T(0));
        upsample(low.data(), x->h, x->w, 1 << m, st.h0, st.w0, st.act[mi].data());
    }
    st.fused_act.assign(n0, p.fuse_bias);
    for (int m = 0; m < M; ++m) {
        const T hm = p.fuse_weight[static_cast<std::size_t>(m)];
        const auto& a = st.act[static_cast<std::size_t>(m)];
        for (std::size_t j = 0; j < n0; ++j) st.fused_act[j] += hm * a[j];
    }
}

// Class-balanced cross-entropy over activations; optionally writes dl/da.
template <typename T>
double balanced_loss(const std::vector<T>& act, const Image<std::uint8_t>& gt, double beta, std::vector<T>* dact) {
    double loss = 0.0;
    if (dact) dact->assign(act.size(), T(0));
    for (std::size_t j = 0; j < act.size(); ++j) {
        const T p = sigmoid(act[j]);
        const double pd = static_cast<double>(p);
        const bool inside = pd > kLogEpsilon && pd < 1.0 - kLogEpsilon;
        const double pc = std::clamp(pd, kLogEpsilon, 1.0 - kLogEpsilon);
        if (gt.data[j]) {
            loss -= beta * std::log(pc);
            if (dact && inside) (*dact)[j] = static_cast<T>(-beta * (1.0 - pd));
        } else {
            loss -= (1.0 - beta) * std::log(1.0 - pc);
            if (dact && inside) (*dact)[j] = static_cast<T>((1.0 - beta) * pd);
        }
    }
    return loss;
}

template <typename T>
void conv_backward(const Conv<T>& conv, const Tensor<T>& in, const AVec<T>& cols, const Tensor<T>& dout,
                   Conv<T>& gconv, Tensor<T>* din) {
    const int k = conv.kernel;
    const auto hw = static_cast<Eigen::Index>(in.plane());
    const auto rows = static_cast<Eigen::Index>(conv.in_channels) * k * k;
    CMapMat<T> D(dout.v.data(), conv.out_channels, hw);
    CMapMat<T> X(k == 1 ? in.v.data() : cols.data(), rows, hw);
    MapMat<T> GW(gconv.weight.data(), conv.out_channels, rows);
    const RowMat<T> G = D * X.transpose();
    GW += G;
    for (int c = 0; c < conv.out_channels; ++c) gconv.bias[static_cast<std::size_t>(c)] += D.row(c).sum();
    if (!din) return;
    const RowMat<T> W = CMapMat<T>(conv.weight.data(), conv.out_channels, rows);
    *din = Tensor<T>(in.c, in.h, in.w);
    if (k == 1) {
        MapMat<T> DI(din->v.data(), rows, hw);
        DI.noalias() = W.transpose() * D;
    } else {
        AVec<T> dcols(static_cast<std::size_t>(rows * hw));
        MapMat<T> DC(dcols.data(), rows, hw);
        DC.noalias() = W.transpose() * D;
        col2im_add(dcols, k, *din);
    }
}

template <typename T>
void run_backward(const BasicParams<T>& p, const ForwardState<T>& st, const std::vector<std::vector<T>>& dact,
                  BasicParams<T>& g) {
    const int M = p.stage_count();
    Tensor<T> carry;  // gradient flowing into stage m's output from stage m+1
    for (int m = M - 1; m >= 0; --m) {
        const auto mi = static_cast<std::size_t>(m);
        const Tensor<T>& feat = st.outs[mi].back();
        std::vector<T> dlow(feat.plane(), T(0));
        upsample_adjoint(dact[mi].data(), feat.h, feat.w, 1 << m, st.h0, st.w0, dlow.data());

        auto& gs = g.side[mi];
        const auto& sc = p.side[mi];
        Tensor<T> dfeat(feat.c, feat.h, feat.w);
        T dbias = 0;
        for (T d : dlow) dbias += d;
        gs.bias[0] += dbias;
        for (int c = 0; c < feat.c; ++c) {
            const T* f = feat.ch(c);
            T* df = dfeat.ch(c);
            const T wc = sc.weight[static_cast<std::size_t>(c)];
            T acc = 0;
            for (std::size_t j = 0; j < dlow.size(); ++j) {
                acc += dlow[j] * f[j];
                df[j] = wc * dlow[j];
            }
            gs.weight[static_cast<std::size_t>(c)] += acc;
        }
        if (m < M - 1)
            for (std::size_t j = 0; j < dfeat.v.size(); ++j) dfeat.v[j] += carry.v[j];

        Tensor<T> grad = std::move(dfeat);
        const auto& layers = p.stages[mi];
        for (std::size_t li = layers.size(); li-- > 0;) {
            const Tensor<T>& out = st.outs[mi][li];
            for (std::size_t j = 0; j < grad.v.size(); ++j) grad.v[j] *= softplus_grad_from_output(out.v[j]);
            const Tensor<T>& in = li > 0 ? st.outs[mi][li - 1] : (m > 0 ? st.pooled[mi] : st.input);
            const bool need_input_grad = li > 0 || m > 0;
            Tensor<T> din;
            conv_backward(layers[li], in, st.cols[mi][li], grad, g.stages[mi][li], need_input_grad ? &din : nullptr);
            grad = std::move(din);
        }
        if (m > 0) {
            const Tensor<T>& prev = st.outs[mi - 1].back();
            carry = Tensor<T>(prev.c, prev.h, prev.w);
            avgpool_adjoint(grad, carry);
        }
    }
}

void check_sample(const Sample& s) {
    require(s.image.width == s.gt.width && s.image.height == s.gt.height && s.image.size() == s.gt.size(),
            "image and ground truth shapes differ");
}

template <typename T>
void check_finite(const std::vector<T>& v, const char* what) {
    for (std::size_t j = 0; j < v.size(); ++j)
        if (!std::isfinite(static_cast<double>(v[j])))
            fail(ErrorCode::NumericFailure, std::string("non-finite ") + what + " at pixel " + std::to_string(j));
}

template <typename T>
double objective_impl(const BasicParams<T>& p, const Sample& s, const NetConfig& cfg, const LossConfig& loss,
                      BasicParams<T>* grad) {
    check_sample(s);
    const int M = p.stage_count();
    require(static_cast<int>(cfg.alpha.size()) == M, "alpha count does not match stage count");
    ForwardState<T> st;
    run_forward(p, s.image, st);
    check_finite(st.fused_act, "fused activation");

    std::vector<std::vector<T>> dside(static_cast<std::size_t>(M));
    double total = 0.0;
    for (int m = 0; m < M; ++m) {
        const auto mi = static_cast<std::size_t>(m);
        check_finite(st.act[mi], "side activation");
        total += cfg.alpha[mi] * balanced_loss(st.act[mi], s.gt, loss.beta, grad ? &dside[mi] : nullptr);
    }
    std::vector<T> dfuse;
    total += balanced_loss(st.fused_act, s.gt, loss.beta, grad ? &dfuse : nullptr);
    if (!grad) return total;

    *grad = p;
    grad->for_each_tensor([](std::span<T> t) { std::fill(t.begin(), t.end(), T(0)); });

    std::vector<std::vector<T>> dact(static_cast<std::size_t>(M));
    T dbias = 0;
    for (T d : dfuse) dbias += d;
    grad->fuse_bias = dbias;
    for (int m = 0; m < M; ++m) {
        const auto mi = static_cast<std::size_t>(m);
        const T a = static_cast<T>(cfg.alpha[mi]);
        const T hm = p.fuse_weight[mi];
        const auto& act = st.act[mi];
        auto& d = dact[mi];
        d.resize(act.size());
        T dh = 0;
        for (std::size_t j = 0; j < act.size(); ++j) {
            d[j] = a * dside[mi][j] + hm * dfuse[j];
            dh += dfuse[j] * act[j];
        }
        grad->fuse_weight[mi] = dh;
    }
    run_backward(p, st, dact, *grad);
    return total;
}

Image<float> to_image(const std::vector<float>& v, int w, int h) {
    Image<float> img(w, h);
    img.data = v;
    return img;
}

template <typename T>
double side_loss_impl(const Image<T>& pred, const Image<std::uint8_t>& gt, double beta) {
    require(pred.width == gt.width && pred.height == gt.height && pred.size() == gt.size(),
            "prediction and ground truth shapes differ");
    double loss = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
        const double p = std::clamp(static_cast<double>(pred.data[j]), kLogEpsilon, 1.0 - kLogEpsilon);
        loss -= gt.data[j] ? beta * std::log(p) : (1.0 - beta) * std::log(1.0 - p);
    }
    return loss;
}

}  // namespace

template <typename T>
BasicParams<T> zero_params(const NetConfig& cfg) {
    BasicParams<T> p;
    int in = 1;
    const int k = cfg.kernel_size;
    for (const auto& s : cfg.stages) {
        std::vector<Conv<T>> layers;
        for (int l = 0; l < s.depth; ++l) {
            Conv<T> c;
            c.in_channels = in;
            c.out_channels = s.channels;
            c.kernel = k;
            c.weight.assign(static_cast<std::size_t>(s.channels) * in * k * k, T(0));
            c.bias.assign(static_cast<std::size_t>(s.channels), T(0));
            layers.push_back(std::move(c));
            in = s.channels;
        }
        p.stages.push_back(std::move(layers));
        Conv<T> side;
        side.in_channels = s.channels;
        side.out_channels = 1;
        side.kernel = 1;
        side.weight.assign(static_cast<std::size_t>(s.channels), T(0));
        side.bias.assign(1, T(0));
        p.side.push_back(std::move(side));
    }
    p.fuse_weight.assign(cfg.stages.size(), T(0));
    p.fuse_bias = T(0);
    return p;
}

template BasicParams<float> zero_params<float>(const NetConfig&);
template BasicParams<double> zero_params<double>(const NetConfig&);

HnnParams init_params(const NetConfig& cfg, std::uint64_t seed) {
    HnnParams p = zero_params<float>(cfg);
    std::mt19937_64 rng(seed);
    for (auto& st : p.stages)
        for (auto& c : st) {
            std::normal_distribution<double> n(0.0, std::sqrt(2.0 / (c.in_channels * c.kernel * c.kernel)));
            for (auto& w : c.weight) w = static_cast<float>(n(rng));
        }
    for (auto& c : p.side) {
        std::normal_distribution<double> n(0.0, 0.1 / std::sqrt(static_cast<double>(c.in_channels)));
        for (auto& w : c.weight) w = static_cast<float>(n(rng));
    }
    for (auto& h : p.fuse_weight) h = 1.0f / static_cast<float>(p.fuse_weight.size());
    return p;
}

template <typename To, typename From>
BasicParams<To> convert_params(const BasicParams<From>& p) {
    BasicParams<To> out;
    auto conv = [](const Conv<From>& c) {
        Conv<To> r;
        r.in_channels = c.in_channels;
        r.out_channels = c.out_channels;
        r.kernel = c.kernel;
        r.weight.assign(c.weight.begin(), c.weight.end());
        r.bias.assign(c.bias.begin(), c.bias.end());
        return r;
    };
    for (const auto& st : p.stages) {
        std::vector<Conv<To>> layers;
        for (const auto& c : st) layers.push_back(conv(c));
        out.stages.push_back(std::move(layers));
    }
    for (const auto& c : p.side) out.side.push_back(conv(c));
    out.fuse_weight.assign(p.fuse_weight.begin(), p.fuse_weight.end());
    out.fuse_bias = static_cast<To>(p.fuse_bias);
    return out;
}

template BasicParams<double> convert_params<double, float>(const BasicParams<float>&);
template BasicParams<float> convert_params<float, double>(const BasicParams<double>&);
template BasicParams<float> convert_params<float, float>(const BasicParams<float>&);
template BasicParams<double> convert_params<double, double>(const BasicParams<double>&);

template <typename T>
std::vector<T> flatten(const BasicParams<T>& p) {
    std::vector<T> out;
    p.for_each_tensor([&](std::span<const T> s) { out.insert(out.end(), s.begin(), s.end()); });
    return out;
}

template <typename T>
void unflatten(BasicParams<T>& p, std::span<const T> flat) {
    std::size_t at = 0;
    p.for_each_tensor([&](std::span<T> s) {
        require(at + s.size() <= flat.size(), "flat parameter vector too short");
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), s.size(), s.begin());
        at += s.size();
    });
    require(at == flat.size(), "flat parameter vector too long");
}

template std::vector<float> flatten(const BasicParams<float>&);
template std::vector<double> flatten(const BasicParams<double>&);
template void unflatten(BasicParams<float>&, std::span<const float>);
template void unflatten(BasicParams<double>&, std::span<const double>);

double compute_beta(std::span<const Image<std::uint8_t>> masks) {
    std::size_t total = 0, positives = 0;
    for (const auto& m : masks) {
        total += m.size();
        positives += static_cast<std::size_t>(std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v != 0; }));
    }
    if (total == 0) fail(ErrorCode::InvalidTrainingSet, "training set has no pixels");
    if (positives == 0) fail(ErrorCode::InvalidTrainingSet, "training set has no positive pixels");
    return static_cast<double>(total - positives) / static_cast<double>(total);
}

double side_loss(const Image<float>& pred, const Image<std::uint8_t>& gt, double beta) {
    return side_loss_impl(pred, gt, beta);
}

double side_loss(const Image<double>& pred, const Image<std::uint8_t>& gt, double beta) {
    return side_loss_impl(pred, gt, beta);
}

SidePrediction forward(const HnnParams& params, const Image<std::uint8_t>& image) {
    ForwardState<float> st;
    run_forward(params, image, st);
    check_finite(st.fused_act, "fused activation");
    SidePrediction out;
    const int w = st.w0, h = st.h0;
    for (const auto& a : st.act) {
        out.activations.push_back(to_image(a, w, h));
        Image<float> s(w, h);
        for (std::size_t j = 0; j < a.size(); ++j) s.data[j] = sigmoid(a[j]);
        out.sides.push_back(std::move(s));
    }
    out.fused_activation = to_image(st.fused_act, w, h);
    out.fused = Image<float>(w, h);
    for (std::size_t j = 0; j < st.fused_act.size(); ++j) out.fused.data[j] = sigmoid(st.fused_act[j]);
    return out;
}

double total_objective(const HnnParams& params, const Sample& sample, const NetConfig& cfg, const LossConfig& loss) {
    return objective_impl<float>(params, sample, cfg, loss, nullptr);
}

template <typename T>
double objective_and_gradient(const BasicParams<T>& params, const Sample& sample, const NetConfig& cfg,
                              const LossConfig& loss, BasicParams<T>* grad) {
    return objective_impl<T>(params, sample, cfg, loss, grad);
}

template double objective_and_gradient(const BasicParams<float>&, const Sample&, const NetConfig&, const LossConfig&,
                                       BasicParams<float>*);
template double objective_and_gradient(const BasicParams<double>&, const Sample&, const NetConfig&, const LossConfig&,
                                       BasicParams<double>*);

TrainResult train(const NetConfig& cfg, const LossConfig& loss, const std::vector<Sample>& dataset,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    return train_from(init_params(cfg, cfg.seed), cfg, loss, dataset, on_epoch);
}

TrainResult train_from(HnnParams params, const NetConfig& cfg, const LossConfig& loss,
                       const std::vector<Sample>& dataset, const EpochCallback& on_epoch) {
    cfg.validate();
    require(!dataset.empty(), "empty training set");
    require(loss.beta > 0.0 && loss.beta < 1.0, "beta must be in (0, 1)");
    for (const auto& s : dataset) check_sample(s);

    TrainResult result;
    std::vector<float> flat = flatten(params);
    std::vector<float> velocity(flat.size(), 0.0f);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
    const double balance = 2.0 * loss.beta * (1.0 - loss.beta);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t count = std::min(batch, order.size() - start);
            std::vector<std::vector<float>> grads(count);
            std::vector<double> losses(count, 0.0);
            try {
                parallel_for(count, [&](std::size_t b) {
                    const Sample& s = dataset[order[start + b]];
                    HnnParams g;
                    const double norm = balance * static_cast<double>(s.gt.size());
                    losses[b] = objective_impl<float>(params, s, cfg, loss, &g) / norm;
                    grads[b] = flatten(g);
                    const auto scale = static_cast<float>(1.0 / norm);
                    for (auto& v : grads[b]) v *= scale;
                });
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NumericFailure) throw;
                fail(ErrorCode::NumericFailure,
                     "training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
            }
            // Fixed-order reduction keeps the update independent of the worker count.
            std::vector<float> sum(flat.size(), 0.0f);
            for (std::size_t b = 0; b < count; ++b) {
                for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += grads[b][i];
                epoch_loss += losses[b];
            }
            const auto lr = static_cast<float>(cfg.learning_rate);
            const auto mu = static_cast<float>(cfg.momentum);
            const float inv = 1.0f / static_cast<float>(count);
            for (std::size_t i = 0; i < flat.size(); ++i) {
                velocity[i] = mu * velocity[i] - lr * sum[i] * inv;
                flat[i] += velocity[i];
            }
            unflatten(params, std::span<const float>(flat));
        }
        epoch_loss /= static_cast<double>(dataset.size());
        if (!std::isfinite(epoch_loss))
            fail(ErrorCode::NumericFailure, "training diverged in epoch " + std::to_string(epoch + 1));
        result.epoch_losses.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch + 1, epoch_loss);
    }
    result.params = std::move(params);
    return result;
}

GradCheckResult grad_check(const HnnParams& params, const Sample& sample, const NetConfig& cfg, const LossConfig& loss,
                           std::size_t coordinates, std::uint64_t seed, double step) {
    return grad_check(convert_params<double>(params), sample, cfg, loss, coordinates, seed, step);
}

GradCheckResult grad_check(const BasicParams<double>& params, const Sample& sample, const NetConfig& cfg,
                           const LossConfig& loss, std::size_t coordinates, std::uint64_t seed, double step) {
    BasicParams<double> grad;
    objective_impl<double>(params, sample, cfg, loss, &grad);
    const std::vector<double> analytic = flatten(grad);
    std::vector<double> base = flatten(params);

    // Coordinate ranges in checkpoint order: W, then w, then h + fusion bias.
    std::size_t n_weight = 0, n_side = 0;
    for (const auto& st : params.stages)
        for (const auto& c : st) n_weight += c.weight.size() + c.bias.size();
    for (const auto& c : params.side) n_side += c.weight.size() + c.bias.size();
    const std::size_t n_fuse = base.size() - n_weight - n_side;

    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t offset, std::size_t range, std::size_t want) {
        std::vector<std::size_t> idx(range);
        std::iota(idx.begin(), idx.end(), offset);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(want, range));
        return idx;
    };
    GradCheckResult r;
    std::vector<std::size_t> chosen = pick(n_weight + n_side, n_fuse, n_fuse);
    r.fuse_coords = chosen.size();
    const std::size_t remaining = coordinates > chosen.size() ? coordinates - chosen.size() : 0;
    auto side = pick(n_weight, n_side, remaining / 4);
    r.side_coords = side.size();
    chosen.insert(chosen.end(), side.begin(), side.end());
    auto weight = pick(0, n_weight, remaining - side.size());
    r.weight_coords = weight.size();
    chosen.insert(chosen.end(), weight.begin(), weight.end());

    BasicParams<double> probe = params;
    for (std::size_t i : chosen) {
        const double orig = base[i];
        base[i] = orig + step;
        unflatten(probe, std::span<const double>(base));
        const double up = objective_impl<double>(probe, sample, cfg, loss, nullptr);
        base[i] = orig - step;
        unflatten(probe, std::span<const double>(base));
        const double down = objective_impl<double>(probe, sample, cfg, loss, nullptr);
        base[i] = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
        r.max_relative_error = std::max(r.max_relative_error, std::abs(numeric - analytic[i]) / denom);
    }
    r.coordinates = chosen.size();
    return r;
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

std::vector<char> encode_checkpoint(const NetConfig& cfg, const HnnParams& params) {
    BinaryWriter w;
    w.tag("CSHN");
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(cfg.stage_count()));
    w.put(static_cast<std::uint32_t>(cfg.kernel_size));
    for (const auto& s : cfg.stages) {
        w.put(static_cast<std::uint32_t>(s.channels));
        w.put(static_cast<std::uint32_t>(s.depth));
    }
    w.put_array(cfg.alpha);
    w.put(cfg.learning_rate);
    w.put(cfg.momentum);
    w.put(static_cast<std::uint32_t>(cfg.epochs));
    w.put(static_cast<std::uint32_t>(cfg.batch_size));
    w.put(cfg.seed);
    const auto flat = flatten(params);
    w.put(static_cast<std::uint64_t>(flat.size()));
    w.put_array(flat);
    return w.buffer();
}

Checkpoint decode_checkpoint(std::vector<char> bytes) {
    BinaryReader r(std::move(bytes));
    r.expect_tag("CSHN");
    r.get_in<std::uint32_t>(kCheckpointVersion, kCheckpointVersion, "checkpoint version");
    Checkpoint ck;
    const auto M = r.get_in<std::uint32_t>(1, 5, "stage count");
    ck.cfg.kernel_size = static_cast<int>(r.get_in<std::uint32_t>(1, 15, "kernel size"));
    ck.cfg.stages.clear();
    for (std::uint32_t m = 0; m < M; ++m) {
        StageConfig s;
        s.channels = static_cast<int>(r.get_in<std::uint32_t>(1, 4096, "stage channels"));
        s.depth = static_cast<int>(r.get_in<std::uint32_t>(1, 64, "stage depth"));
        ck.cfg.stages.push_back(s);
    }
    ck.cfg.alpha.clear();
    for (std::uint32_t m = 0; m < M; ++m) ck.cfg.alpha.push_back(r.get<double>());
    ck.cfg.learning_rate = r.get<double>();
    ck.cfg.momentum = r.get<double>();
    ck.cfg.epochs = static_cast<int>(r.get<std::uint32_t>());
    ck.cfg.batch_size = static_cast<int>(r.get<std::uint32_t>());
    ck.cfg.seed = r.get<std::uint64_t>();
    ck.params = zero_params<float>(ck.cfg);
    const auto expected = ck.params.parameter_count();
    const auto at = r.offset();
    const auto count = r.get<std::uint64_t>();
    if (count != expected)
        fail(ErrorCode::FormatError, "parameter count " + std::to_string(count) + " at byte " + std::to_string(at) +
                                         " does not match config (" + std::to_string(expected) + ")");
    std::vector<float> flat(expected);
    for (auto& v : flat) v = r.get_finite_f32("parameter");
    if (!r.at_end()) fail(ErrorCode::FormatError, "trailing bytes after byte " + std::to_string(r.offset()));
    unflatten(ck.params, std::span<const float>(flat));
    return ck;
}

void save_checkpoint(const std::string& path, const NetConfig& cfg, const HnnParams& params) {
    write_file_bytes(path, encode_checkpoint(cfg, params));
}

Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file_bytes(path));
}

}  // namespace cseg::hnn
