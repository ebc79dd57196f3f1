#include "qser/ops.hpp"
#include "qser/quat.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace qser::ops {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using Storage = std::shared_ptr<TensorStorage<T>>;

void require(bool cond, const std::string& msg)
{
    if (!cond)
        throw ShapeError(msg);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what)
{
    require(t.defined() && t.rank() == rank, std::string(op) + ": " + what + " must have rank " +
                                                 std::to_string(rank) + ", got " +
                                                 (t.defined() ? shape_str(t.shape()) : "undefined"));
}

struct Geometry {
    std::size_t channels, in_h, in_w, kh, kw, sh, sw, ph, pw, out_h, out_w;
    std::size_t rows() const { return channels * kh * kw; }
    std::size_t cols() const { return out_h * out_w; }
};

// Unfold one image [C,H,W] into [C*kh*kw, out_h*out_w].
template <typename T>
void im2col(const T* x, const Geometry& g, T* cols)
{
    const std::size_t plane = g.cols();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.sh + ki) -
                                    static_cast<std::ptrdiff_t>(g.ph);
                    T* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * g.sw + kj) -
                                        static_cast<std::ptrdiff_t>(g.pw);
                        dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w))
                                      ? T(0)
                                      : src[iw];
                    }
                }
            }
}

// Adjoint of im2col: scatter-add columns back onto the image.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* x)
{
    const std::size_t plane = g.cols();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.sh + ki) -
                                    static_cast<std::ptrdiff_t>(g.ph);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h))
                        continue;
                    T* dst = x + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
                    const T* src = row + oh * g.out_w;
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * g.sw + kj) -
                                        static_cast<std::ptrdiff_t>(g.pw);
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in_w))
                            dst[iw] += src[ow];
                    }
                }
            }
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                            const char* op)
{
    require(s > 0, std::string(op) + ": stride must be positive");
    require(in + 2 * p >= k, std::string(op) + ": kernel larger than padded input");
    return (in + 2 * p - k) / s + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Pair stride,
                 Pair padding)
{
    require_rank(x, 4, "conv2d", "input");
    require_rank(w, 4, "conv2d", "weight");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t f = w.dim(0);
    require(w.dim(1) == c, "conv2d: input has " + std::to_string(c) +
                               " channels but weight expects " + std::to_string(w.dim(1)) +
                               " (weight " + shape_str(w.shape()) + ")");
    if (b.defined())
        require(b.rank() == 1 && b.dim(0) == f, "conv2d: bias must be [" + std::to_string(f) + "]");

    Geometry g{c,
               h,
               wd,
               w.dim(2),
               w.dim(3),
               stride.h,
               stride.w,
               padding.h,
               padding.w,
               conv_out_extent(h, w.dim(2), stride.h, padding.h, "conv2d"),
               conv_out_extent(wd, w.dim(3), stride.w, padding.w, "conv2d")};

    Tensor<T> out({n, f, g.out_h, g.out_w});
    std::vector<T> cols(g.rows() * g.cols());
    CMapR<T> wm(w.data().data(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(g.rows()));
    for (std::size_t i = 0; i < n; ++i) {
        im2col(x.data().data() + i * c * h * wd, g, cols.data());
        CMapR<T> cm(cols.data(), static_cast<Eigen::Index>(g.rows()),
                    static_cast<Eigen::Index>(g.cols()));
        MapR<T> ym(out.data().data() + i * f * g.cols(), static_cast<Eigen::Index>(f),
                   static_cast<Eigen::Index>(g.cols()));
        ym.noalias() = wm * cm;
        if (b.defined())
            ym.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                b.data().data(), static_cast<Eigen::Index>(f));
    }

    Storage<T> xs = x.handle(), ws = w.handle(), bs = b.defined() ? b.handle() : nullptr,
               os = out.handle();
    detail::record<T>(out, {&x, &w, &b}, [xs, ws, bs, os, g, n, f]() {
        if (os->grad.empty())
            return;
        const std::size_t in_plane = g.channels * g.in_h * g.in_w;
        std::vector<T> cols(g.rows() * g.cols());
        CMapR<T> wm(ws->data.data(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(g.rows()));
        for (std::size_t i = 0; i < n; ++i) {
            CMapR<T> dy(os->grad.data() + i * f * g.cols(), static_cast<Eigen::Index>(f),
                        static_cast<Eigen::Index>(g.cols()));
            if (ws->requires_grad) {
                im2col(xs->data.data() + i * in_plane, g, cols.data());
                CMapR<T> cm(cols.data(), static_cast<Eigen::Index>(g.rows()),
                            static_cast<Eigen::Index>(g.cols()));
                MapR<T> dw(ws->grad_buffer().data(), static_cast<Eigen::Index>(f),
                           static_cast<Eigen::Index>(g.rows()));
                dw.noalias() += dy * cm.transpose();
            }
            if (bs && bs->requires_grad) {
                Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bs->grad_buffer().data(),
                                                                   static_cast<Eigen::Index>(f));
                db += dy.rowwise().sum();
            }
            if (xs->requires_grad) {
                MapR<T> dc(cols.data(), static_cast<Eigen::Index>(g.rows()),
                           static_cast<Eigen::Index>(g.cols()));
                dc.noalias() = wm.transpose() * dy;
                col2im(cols.data(), g, xs->grad_buffer().data() + i * in_plane);
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Pair stride,
                           Pair padding, Pair output_padding)
{
    require_rank(x, 4, "conv_transpose2d", "input");
    require_rank(w, 4, "conv_transpose2d", "weight");
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    require(w.dim(0) == cin, "conv_transpose2d: input has " + std::to_string(cin) +
                                 " channels but weight expects " + std::to_string(w.dim(0)) +
                                 " (weight " + shape_str(w.shape()) + ")");
    const std::size_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (b.defined())
        require(b.rank() == 1 && b.dim(0) == cout,
                "conv_transpose2d: bias must be [" + std::to_string(cout) + "]");
    require(stride.h > 0 && stride.w > 0, "conv_transpose2d: stride must be positive");
    require(output_padding.h < stride.h && output_padding.w < stride.w,
            "conv_transpose2d: output padding must be smaller than stride");
    const auto full_h = static_cast<std::ptrdiff_t>((h - 1) * stride.h + kh + output_padding.h) -
                        static_cast<std::ptrdiff_t>(2 * padding.h);
    const auto full_w = static_cast<std::ptrdiff_t>((wd - 1) * stride.w + kw + output_padding.w) -
                        static_cast<std::ptrdiff_t>(2 * padding.w);
    require(full_h > 0 && full_w > 0, "conv_transpose2d: output extent is not positive");
    const auto oh = static_cast<std::size_t>(full_h), ow = static_cast<std::size_t>(full_w);

    // The forward conv this op is the adjoint of: maps [cout,oh,ow] to [cin,h,wd].
    Geometry g{cout, oh, ow, kh, kw, stride.h, stride.w, padding.h, padding.w, h, wd};

    Tensor<T> out({n, cout, oh, ow});
    std::vector<T> cols(g.rows() * g.cols());
    CMapR<T> wm(w.data().data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(g.rows()));
    for (std::size_t i = 0; i < n; ++i) {
        CMapR<T> xm(x.data().data() + i * cin * h * wd, static_cast<Eigen::Index>(cin),
                    static_cast<Eigen::Index>(h * wd));
        MapR<T> cm(cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
        cm.noalias() = wm.transpose() * xm;
        T* y = out.data().data() + i * cout * oh * ow;
        col2im(cols.data(), g, y);
        if (b.defined())
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t p = 0; p < oh * ow; ++p)
                    y[c * oh * ow + p] += b.data()[c];
    }

    Storage<T> xs = x.handle(), ws = w.handle(), bs = b.defined() ? b.handle() : nullptr,
               os = out.handle();
    detail::record<T>(out, {&x, &w, &b}, [xs, ws, bs, os, g, n, cin]() {
        if (os->grad.empty())
            return;
        const std::size_t out_plane = g.channels * g.in_h * g.in_w;
        const std::size_t in_plane = cin * g.cols();
        std::vector<T> cols(g.rows() * g.cols());
        CMapR<T> wm(ws->data.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(g.rows()));
        for (std::size_t i = 0; i < n; ++i) {
            const T* dy = os->grad.data() + i * out_plane;
            im2col(dy, g, cols.data());
            CMapR<T> cm(cols.data(), static_cast<Eigen::Index>(g.rows()),
                        static_cast<Eigen::Index>(g.cols()));
            if (xs->requires_grad) {
                MapR<T> dx(xs->grad_buffer().data() + i * in_plane, static_cast<Eigen::Index>(cin),
                           static_cast<Eigen::Index>(g.cols()));
                dx.noalias() += wm * cm;
            }
            if (ws->requires_grad) {
                CMapR<T> xm(xs->data.data() + i * in_plane, static_cast<Eigen::Index>(cin),
                            static_cast<Eigen::Index>(g.cols()));
                MapR<T> dw(ws->grad_buffer().data(), static_cast<Eigen::Index>(cin),
                           static_cast<Eigen::Index>(g.rows()));
                dw.noalias() += xm * cm.transpose();
            }
            if (bs && bs->requires_grad) {
                auto& db = bs->grad_buffer();
                const std::size_t plane = g.in_h * g.in_w;
                for (std::size_t c = 0; c < g.channels; ++c) {
                    T acc = 0;
                    for (std::size_t p = 0; p < plane; ++p)
                        acc += dy[c * plane + p];
                    db[c] += acc;
                }
            }
        }
    });
    return out;
}

namespace {
thread_local BranchProbe* probe_top = nullptr;
}

BranchProbe::BranchProbe() : outer_(probe_top) { probe_top = this; }
BranchProbe::~BranchProbe() { probe_top = outer_; }
BranchProbe* BranchProbe::active() noexcept { return probe_top; }

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, Pair window, Pair stride, Pair padding)
{
    require_rank(x, 4, "maxpool2d", "input");
    require(padding.h * 2 <= window.h && padding.w * 2 <= window.w,
            "maxpool2d: padding must be at most half the window");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_out_extent(h, window.h, stride.h, padding.h, "maxpool2d");
    const std::size_t ow = conv_out_extent(w, window.w, stride.w, padding.w, "maxpool2d");
    Tensor<T> out({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
    const T* src = x.data().data();
    T* dst = out.data().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const T* xp = src + plane * h * w;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                bool found = false;
                for (std::size_t a = 0; a < window.h; ++a) {
                    const auto ih = static_cast<std::ptrdiff_t>(i * stride.h + a) -
                                    static_cast<std::ptrdiff_t>(padding.h);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h))
                        continue;
                    for (std::size_t bb = 0; bb < window.w; ++bb) {
                        const auto iw = static_cast<std::ptrdiff_t>(j * stride.w + bb) -
                                        static_cast<std::ptrdiff_t>(padding.w);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                            continue;
                        const std::size_t idx = static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
                        if (!found || xp[idx] > best) {
                            best = xp[idx];
                            best_idx = idx;
                            found = true;
                        }
                    }
                }
                const std::size_t o = (plane * oh + i) * ow + j;
                dst[o] = best;
                (*argmax)[o] = static_cast<std::uint32_t>(best_idx);
            }
    }
    if (auto* probe = BranchProbe::active())
        for (auto a : *argmax)
            probe->mix(a);
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, argmax, h, w, oh, ow]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        const std::size_t planes = os->data.size() / (oh * ow);
        for (std::size_t plane = 0; plane < planes; ++plane)
            for (std::size_t k = 0; k < oh * ow; ++k) {
                const std::size_t o = plane * oh * ow + k;
                dx[plane * h * w + (*argmax)[o]] += os->grad[o];
            }
    });
    return out;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, Pair out_size)
{
    require_rank(x, 4, "adaptive_avg_pool2d", "input");
    require(out_size.h > 0 && out_size.w > 0, "adaptive_avg_pool2d: output extent must be positive");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = out_size.h, ow = out_size.w;
    auto bounds = [](std::size_t i, std::size_t in, std::size_t out) {
        const std::size_t lo = (i * in) / out;
        const std::size_t hi = ((i + 1) * in + out - 1) / out;
        return std::pair{lo, hi};
    };
    Tensor<T> out({n, c, oh, ow});
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const T* xp = x.data().data() + plane * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            const auto [h0, h1] = bounds(i, h, oh);
            for (std::size_t j = 0; j < ow; ++j) {
                const auto [w0, w1] = bounds(j, w, ow);
                T acc = 0;
                for (std::size_t a = h0; a < h1; ++a)
                    for (std::size_t bb = w0; bb < w1; ++bb)
                        acc += xp[a * w + bb];
                out.data()[(plane * oh + i) * ow + j] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
            }
        }
    }
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, h, w, oh, ow, bounds]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        const std::size_t planes = os->data.size() / (oh * ow);
        for (std::size_t plane = 0; plane < planes; ++plane)
            for (std::size_t i = 0; i < oh; ++i) {
                const auto [h0, h1] = bounds(i, h, oh);
                for (std::size_t j = 0; j < ow; ++j) {
                    const auto [w0, w1] = bounds(j, w, ow);
                    const T g = os->grad[(plane * oh + i) * ow + j] /
                                static_cast<T>((h1 - h0) * (w1 - w0));
                    for (std::size_t a = h0; a < h1; ++a)
                        for (std::size_t bb = w0; bb < w1; ++bb)
                            dx[plane * h * w + a * w + bb] += g;
                }
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b)
{
    require_rank(x, 2, "dense", "input");
    require_rank(w, 2, "dense", "weight");
    const std::size_t n = x.dim(0), in = x.dim(1), outf = w.dim(0);
    require(w.dim(1) == in, "dense: input has " + std::to_string(in) + " features but weight is " +
                                shape_str(w.shape()));
    if (b.defined())
        require(b.rank() == 1 && b.dim(0) == outf, "dense: bias must be [" + std::to_string(outf) + "]");
    Tensor<T> out({n, outf});
    CMapR<T> xm(x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    CMapR<T> wm(w.data().data(), static_cast<Eigen::Index>(outf), static_cast<Eigen::Index>(in));
    MapR<T> ym(out.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(outf));
    ym.noalias() = xm * wm.transpose();
    if (b.defined())
        ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            b.data().data(), static_cast<Eigen::Index>(outf));

    Storage<T> xs = x.handle(), ws = w.handle(), bs = b.defined() ? b.handle() : nullptr,
               os = out.handle();
    detail::record<T>(out, {&x, &w, &b}, [xs, ws, bs, os, n, in, outf]() {
        if (os->grad.empty())
            return;
        CMapR<T> dy(os->grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(outf));
        if (xs->requires_grad) {
            CMapR<T> wm(ws->data.data(), static_cast<Eigen::Index>(outf), static_cast<Eigen::Index>(in));
            MapR<T> dx(xs->grad_buffer().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
            dx.noalias() += dy * wm;
        }
        if (ws->requires_grad) {
            CMapR<T> xm(xs->data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
            MapR<T> dw(ws->grad_buffer().data(), static_cast<Eigen::Index>(outf), static_cast<Eigen::Index>(in));
            dw.noalias() += dy.transpose() * xm;
        }
        if (bs && bs->requires_grad) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bs->grad_buffer().data(),
                                                               static_cast<Eigen::Index>(outf));
            db += dy.colwise().sum();
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x)
{
    Tensor<T> out(x.shape());
    const auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] > T(0) ? src[i] : T(0);
    if (auto* probe = BranchProbe::active())
        for (const T v : src)
            probe->mix(v > T(0));
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xs->data[i] > T(0))
                dx[i] += os->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x)
{
    Tensor<T> out(x.shape());
    const auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] >= T(0) ? T(1) / (T(1) + std::exp(-src[i]))
                                : std::exp(src[i]) / (T(1) + std::exp(src[i]));
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const T y = os->data[i];
            dx[i] += os->grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x)
{
    require(x.defined() && x.rank() >= 1, "softmax: input must have rank >= 1");
    const std::size_t k = x.shape().back();
    const std::size_t rows = x.numel() / k;
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = x.data().data() + r * k;
        T* dst = out.data().data() + r * k;
        const T mx = *std::max_element(src, src + k);
        T total = 0;
        for (std::size_t i = 0; i < k; ++i) {
            dst[i] = std::exp(src[i] - mx);
            total += dst[i];
        }
        for (std::size_t i = 0; i < k; ++i)
            dst[i] /= total;
    }
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, rows, k]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = os->data.data() + r * k;
            const T* dy = os->grad.data() + r * k;
            T dot = 0;
            for (std::size_t i = 0; i < k; ++i)
                dot += y[i] * dy[i];
            for (std::size_t i = 0; i < k; ++i)
                dx[r * k + i] += y[i] * (dy[i] - dot);
        }
    });
    return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng)
{
    if (!(rate >= 0.0 && rate < 1.0))
        throw DomainError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0)
        return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    for (auto& m : *mask)
        m = rng.uniform() < rate ? T(0) : keep_scale;
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data()[i] = x.data()[i] * (*mask)[i];
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, mask]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += os->grad[i] * (*mask)[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                    double momentum, double eps)
{
    require(x.defined() && (x.rank() == 4 || x.rank() == 2), "batchnorm: input must be [N,C,H,W] or [N,C]");
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
        require(p->defined() && p->rank() == 1 && p->dim(0) == c,
                "batchnorm: parameters must be [" + std::to_string(c) + "]");
    const std::size_t count = n * plane;

    std::vector<T> mu(c), inv_std(c);
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data().data() + (i * c + ch) * plane;
                for (std::size_t k = 0; k < plane; ++k)
                    s += p[k];
            }
            const double m = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data().data() + (i * c + ch) * plane;
                for (std::size_t k = 0; k < plane; ++k)
                    v += (p[k] - m) * (p[k] - m);
            }
            v /= static_cast<double>(count);
            mu[ch] = static_cast<T>(m);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(v + eps));
            const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
            running_mean.data()[ch] = static_cast<T>((1.0 - momentum) * running_mean.data()[ch] + momentum * m);
            running_var.data()[ch] = static_cast<T>((1.0 - momentum) * running_var.data()[ch] + momentum * unbiased);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = running_mean.data()[ch];
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.data()[ch]) + eps));
        }
    }

    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                const T xh = (x.data()[base + k] - mu[ch]) * inv_std[ch];
                (*xhat)[base + k] = xh;
                out.data()[base + k] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }

    Storage<T> xs = x.handle(), gs = gamma.handle(), bs = beta.handle(), os = out.handle();
    detail::record<T>(out, {&x, &gamma, &beta}, [xs, gs, bs, os, xhat, inv_std, n, c, plane, count, training]() {
        if (os->grad.empty())
            return;
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    sum_dy[ch] += os->grad[base + k];
                    sum_dy_xhat[ch] += os->grad[base + k] * (*xhat)[base + k];
                }
            }
        if (gs->requires_grad) {
            auto& dg = gs->grad_buffer();
            for (std::size_t ch = 0; ch < c; ++ch)
                dg[ch] += static_cast<T>(sum_dy_xhat[ch]);
        }
        if (bs->requires_grad) {
            auto& db = bs->grad_buffer();
            for (std::size_t ch = 0; ch < c; ++ch)
                db[ch] += static_cast<T>(sum_dy[ch]);
        }
        if (xs->requires_grad) {
            auto& dx = xs->grad_buffer();
            const double inv_count = 1.0 / static_cast<double>(count);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t base = (i * c + ch) * plane;
                    const double scale = static_cast<double>(gs->data[ch]) * inv_std[ch];
                    for (std::size_t k = 0; k < plane; ++k) {
                        double g = os->grad[base + k];
                        if (training)
                            g -= (sum_dy[ch] + (*xhat)[base + k] * sum_dy_xhat[ch]) * inv_count;
                        dx[base + k] += static_cast<T>(scale * g);
                    }
                }
        }
    });
    return out;
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x)
{
    require_rank(x, 4, "channel_mean", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<T> out({n, 1, x.dim(2), x.dim(3)});
    const T inv = T(1) / static_cast<T>(c);
    for (std::size_t i = 0; i < n; ++i) {
        T* dst = out.data().data() + i * plane;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* src = x.data().data() + (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k)
                dst[k] += src[k];
        }
        for (std::size_t k = 0; k < plane; ++k)
            dst[k] *= inv;
    }
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, n, c, plane, inv]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t k = 0; k < plane; ++k)
                    dx[(i * c + ch) * plane + k] += os->grad[i * plane + k] * inv;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target)
{
    require(pred.defined() && target.defined() && pred.shape() == target.shape(),
            "bce_loss: prediction and target shapes differ");
    const double eps = log_loss_epsilon;
    const std::size_t n = pred.numel();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = pred.data()[i], t = target.data()[i];
        if (std::isnan(p))
            throw NumericalError("bce_loss: prediction is NaN");
        if (p < 0.0 || p > 1.0 || t < 0.0 || t > 1.0)
            throw DomainError("bce_loss: values must lie in [0,1] (prediction " + std::to_string(p) +
                              ", target " + std::to_string(t) + ")");
        const double pc = std::clamp(p, eps, 1.0 - eps);
        if (auto* probe = BranchProbe::active())
            probe->mix(pc != p);
        total -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    }
    Tensor<T> out(Shape{1}, static_cast<T>(total / static_cast<double>(n)));
    Storage<T> ps = pred.handle(), ts = target.handle(), os = out.handle();
    detail::record<T>(out, {&pred}, [ps, ts, os, n, eps]() {
        if (os->grad.empty())
            return;
        const double g = static_cast<double>(os->grad[0]) / static_cast<double>(n);
        auto& dp = ps->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const double p = ps->data[i], t = ts->data[i];
            if (p <= eps || p >= 1.0 - eps)
                continue;
            dp[i] += static_cast<T>(g * (-t / p + (1.0 - t) / (1.0 - p)));
        }
    });
    return out;
}

template <typename T>
Tensor<T> ce_loss(const Tensor<T>& probs, std::span<const int> labels)
{
    require_rank(probs, 2, "ce_loss", "probabilities");
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    require(labels.size() == n, "ce_loss: label count does not match batch");
    const double eps = log_loss_epsilon;
    double total = 0.0;
    std::vector<int> lab(labels.begin(), labels.end());
    for (std::size_t i = 0; i < n; ++i) {
        if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= k)
            throw DomainError("ce_loss: class label " + std::to_string(lab[i]) + " out of range");
        const double p = probs.data()[i * k + static_cast<std::size_t>(lab[i])];
        if (std::isnan(p))
            throw NumericalError("ce_loss: probability is NaN");
        if (p < 0.0 || p > 1.0)
            throw DomainError("ce_loss: probability outside [0,1]");
        const double pc = std::clamp(p, eps, 1.0 - eps);
        if (auto* probe = BranchProbe::active())
            probe->mix(pc != p);
        total -= std::log(pc);
    }
    Tensor<T> out(Shape{1}, static_cast<T>(total / static_cast<double>(n)));
    Storage<T> ps = probs.handle(), os = out.handle();
    detail::record<T>(out, {&probs}, [ps, os, lab, n, k, eps]() {
        if (os->grad.empty())
            return;
        const double g = static_cast<double>(os->grad[0]) / static_cast<double>(n);
        auto& dp = ps->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = i * k + static_cast<std::size_t>(lab[i]);
            const double p = ps->data[idx];
            if (p <= eps || p >= 1.0 - eps)
                continue;
            dp[idx] += static_cast<T>(-g / p);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.defined() && b.defined() && a.shape() == b.shape(),
            "add: shapes differ (" + (a.defined() ? shape_str(a.shape()) : "?") + " vs " +
                (b.defined() ? shape_str(b.shape()) : "?") + ")");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i)
        out.data()[i] = a.data()[i] + b.data()[i];
    Storage<T> as = a.handle(), bs = b.handle(), os = out.handle();
    detail::record<T>(out, {&a, &b}, [as, bs, os]() {
        if (os->grad.empty())
            return;
        for (auto* s : {as.get(), bs.get()}) {
            if (!s->requires_grad)
                continue;
            auto& d = s->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += os->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor)
{
    Tensor<T> out(x.shape());
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data()[i] = x.data()[i] * f;
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, f]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += os->grad[i] * f;
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x)
{
    T total = 0;
    for (T v : x.data())
        total += v;
    Tensor<T> out(Shape{1}, total);
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (auto& d : dx)
            d += os->grad[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x)
{
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    require(shape_numel(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor<T> out(std::move(shape), x.values());
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += os->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x)
{
    require(x.defined() && x.rank() >= 2, "flatten: input must have a batch axis");
    return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
Tensor<T> select_channel(const Tensor<T>& x, std::size_t c)
{
    require_rank(x, 4, "select_channel", "input");
    require(c < x.dim(1), "select_channel: channel " + std::to_string(c) + " out of range");
    const std::size_t n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<T> out({n, 1, x.dim(2), x.dim(3)});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x.data().data() + (i * channels + c) * plane, plane, out.data().data() + i * plane);
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, n, channels, plane, c]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < plane; ++k)
                dx[(i * channels + c) * plane + k] += os->grad[i * plane + k];
    });
    return out;
}

template <typename T>
Tensor<T> quat_flatten(const Tensor<T>& x)
{
    require_rank(x, 4, "quat_flatten", "input");
    require(x.dim(1) % 4 == 0, "quat_flatten: channel count " + std::to_string(x.dim(1)) +
                                   " is not divisible by 4");
    const std::size_t n = x.dim(0), q = x.dim(1) / 4, plane = x.dim(2) * x.dim(3);
    const std::size_t per = x.numel() / n;
    Tensor<T> out({n, per});
    auto index = [q, plane, per](std::size_t i, std::size_t qc, std::size_t a, std::size_t p) {
        return std::pair{i * per + ((qc * 4 + a) * plane + p), i * per + (qc * plane + p) * 4 + a};
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t qc = 0; qc < q; ++qc)
            for (std::size_t a = 0; a < 4; ++a)
                for (std::size_t p = 0; p < plane; ++p) {
                    const auto [src, dst] = index(i, qc, a, p);
                    out.data()[dst] = x.data()[src];
                }
    Storage<T> xs = x.handle(), os = out.handle();
    detail::record<T>(out, {&x}, [xs, os, n, q, plane, index]() {
        if (os->grad.empty())
            return;
        auto& dx = xs->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t qc = 0; qc < q; ++qc)
                for (std::size_t a = 0; a < 4; ++a)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const auto [src, dst] = index(i, qc, a, p);
                        dx[src] += os->grad[dst];
                    }
    });
    return out;
}

template <typename T>
Tensor<T> assemble_quaternion_blocks(const Tensor<T>& w_r, const Tensor<T>& w_i,
                                     const Tensor<T>& w_j, const Tensor<T>& w_k,
                                     bool transposed_blocks)
{
    require(w_r.defined() && w_r.rank() >= 2, "assemble_quaternion_blocks: components need rank >= 2");
    for (const Tensor<T>* c : {&w_i, &w_j, &w_k})
        require(c->defined() && c->shape() == w_r.shape(),
                "assemble_quaternion_blocks: component shapes differ");
    const std::size_t rows = w_r.dim(0), cols = w_r.dim(1);
    const std::size_t tail = w_r.numel() / (rows * cols);
    Shape shape = w_r.shape();
    shape[0] *= 4;
    shape[1] *= 4;
    Tensor<T> out(shape);
    const std::array<const Tensor<T>*, 4> comps{&w_r, &w_i, &w_j, &w_k};

    // Visit every (destination, component, source, sign) tuple once.
    auto for_each_entry = [rows, cols, tail, transposed_blocks](auto&& fn) {
        for (std::size_t a = 0; a < rows; ++a)
            for (std::size_t b = 0; b < cols; ++b)
                for (int r = 0; r < 4; ++r)
                    for (int c = 0; c < 4; ++c) {
                        const auto e = quat::block_entry(transposed_blocks ? c : r, transposed_blocks ? r : c);
                        const std::size_t dst_row = 4 * a + static_cast<std::size_t>(r);
                        const std::size_t dst_col = 4 * b + static_cast<std::size_t>(c);
                        const std::size_t dst = (dst_row * 4 * cols + dst_col) * tail;
                        const std::size_t src = (a * cols + b) * tail;
                        fn(dst, static_cast<std::size_t>(e.component), src, e.sign);
                    }
    };
    for_each_entry([&](std::size_t dst, std::size_t comp, std::size_t src, int sign) {
        const T* s = comps[comp]->data().data() + src;
        T* d = out.data().data() + dst;
        for (std::size_t t = 0; t < tail; ++t)
            d[t] = sign > 0 ? s[t] : -s[t];
    });

    std::array<Storage<T>, 4> cs{w_r.handle(), w_i.handle(), w_j.handle(), w_k.handle()};
    Storage<T> os = out.handle();
    detail::record<T>(out, {&w_r, &w_i, &w_j, &w_k}, [cs, os, for_each_entry, tail]() {
        if (os->grad.empty())
            return;
        for_each_entry([&](std::size_t dst, std::size_t comp, std::size_t src, int sign) {
            if (!cs[comp]->requires_grad)
                return;
            T* g = cs[comp]->grad_buffer().data() + src;
            const T* d = os->grad.data() + dst;
            for (std::size_t t = 0; t < tail; ++t)
                g[t] += sign > 0 ? d[t] : -d[t];
        });
    });
    return out;
}

// ---------------------------------------------------------------------------

#define QSER_INSTANTIATE(T)                                                                          \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Pair, Pair);     \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Pair,  \
                                        Pair, Pair);                                                 \
    template Tensor<T> maxpool2d(const Tensor<T>&, Pair, Pair, Pair);                                \
    template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, Pair);                                  \
    template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> relu(const Tensor<T>&);                                                       \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
    template Tensor<T> softmax(const Tensor<T>&);                                                    \
    template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                                \
    template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,   \
                                 Tensor<T>&, bool, double, double);                                  \
    template Tensor<T> channel_mean(const Tensor<T>&);                                               \
    template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> ce_loss(const Tensor<T>&, std::span<const int>);                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> scale(const Tensor<T>&, double);                                              \
    template Tensor<T> sum(const Tensor<T>&);                                                        \
    template Tensor<T> mean(const Tensor<T>&);                                                       \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
    template Tensor<T> flatten(const Tensor<T>&);                                                    \
    template Tensor<T> select_channel(const Tensor<T>&, std::size_t);                                \
    template Tensor<T> quat_flatten(const Tensor<T>&);                                               \
    template Tensor<T> assemble_quaternion_blocks(const Tensor<T>&, const Tensor<T>&,                \
                                                  const Tensor<T>&, const Tensor<T>&, bool);

QSER_INSTANTIATE(float)
QSER_INSTANTIATE(double)

}  // namespace qser::ops
