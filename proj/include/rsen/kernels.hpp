#pragma once

// Tensor-level forward and backward kernels. These are pure functions on
// Tensor values; autograd.hpp wires them into the tape.

#include <cmath>
#include <cstddef>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace rsen::kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t in_h = 0, in_w = 0;
    std::size_t out_h = 0, out_w = 0;

    [[nodiscard]] std::size_t patch() const noexcept { return in_ch * kernel * kernel; }
    [[nodiscard]] std::size_t out_plane() const noexcept { return out_h * out_w; }
    [[nodiscard]] bool pointwise() const noexcept { return kernel == 1 && stride == 1 && pad == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const Shape& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                           std::size_t pad) {
    const Shape& ws = weight.shape();
    if (ws.h != ws.w) throw DimensionError("conv2d: kernel must be square, got " + ws.str());
    if (x.c != ws.c) {
        throw DimensionError("conv2d: input has " + std::to_string(x.c) + " channels, weights expect " +
                             std::to_string(ws.c));
    }
    if (x.h == 0 || x.w == 0 || x.n == 0) throw DimensionError("conv2d: empty input " + x.str());
    if (bias.numel() != ws.n) throw DimensionError("conv2d: bias length does not match out channels");
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    if (x.h + 2 * pad < ws.h || x.w + 2 * pad < ws.w) throw DimensionError("conv2d: kernel larger than padded input");
    ConvGeometry g;
    g.in_ch = ws.c;
    g.out_ch = ws.n;
    g.kernel = ws.h;
    g.stride = stride;
    g.pad = pad;
    g.in_h = x.h;
    g.in_w = x.w;
    g.out_h = (x.h + 2 * pad - g.kernel) / stride + 1;
    g.out_w = (x.w + 2 * pad - g.kernel) / stride + 1;
    return g;
}

/// Unfolds one sample (in_ch, h, w) into a (in_ch*k*k, out_h*out_w) matrix.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
    const std::size_t k = g.kernel;
    const std::size_t ow = g.out_w;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        const T* plane = src + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((c * k + ky) * k + kx) * g.out_plane();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        std::fill(dst, dst + ow, T{0});
                        continue;
                    }
                    const T* line = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? T{0} : line[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-adds columns back into one sample.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dst) {
    const std::size_t k = g.kernel;
    const std::size_t ow = g.out_w;
    std::fill(dst, dst + g.in_ch * g.in_h * g.in_w, T{0});
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        T* plane = dst + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((c * k + ky) * k + kx) * g.out_plane();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    T* line = plane + static_cast<std::size_t>(iy) * g.in_w;
                    const T* src = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) line[ix] += src[ox];
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding. weight is (out, in, k, k),
/// bias holds out elements.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
    const Shape& xs = x.shape();
    const ConvGeometry g = conv_geometry(xs, weight, bias, stride, pad);
    Tensor<T> y(Shape{xs.n, g.out_ch, g.out_h, g.out_w});
    const ConstMatrixMap<T> w(weight.data().data(), static_cast<Eigen::Index>(g.out_ch),
                              static_cast<Eigen::Index>(g.patch()));
    const auto cols_n = static_cast<Eigen::Index>(g.out_plane());
    parallel_for(xs.n, [&](std::size_t n) {
        std::vector<T> scratch;
        const T* cols_ptr = x.plane(n, 0);
        if (!g.pointwise()) {
            scratch.resize(g.patch() * g.out_plane());
            im2col(x.plane(n, 0), g, scratch.data());
            cols_ptr = scratch.data();
        }
        const ConstMatrixMap<T> cols(cols_ptr, static_cast<Eigen::Index>(g.patch()), cols_n);
        MatrixMap<T> out(y.plane(n, 0), static_cast<Eigen::Index>(g.out_ch), cols_n);
        out.noalias() = w * cols;
        for (std::size_t o = 0; o < g.out_ch; ++o) out.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    });
    return y;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

/// Gradients of conv2d given the upstream gradient dy. The weight and
/// bias reductions run per sample and are summed in sample order.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                             const Tensor<T>& dy, std::size_t stride, std::size_t pad, bool need_input = true) {
    const Shape& xs = x.shape();
    const ConvGeometry g = conv_geometry(xs, weight, bias, stride, pad);
    if (dy.shape() != Shape{xs.n, g.out_ch, g.out_h, g.out_w}) {
        throw DimensionError("conv2d_backward: upstream gradient dims " + dy.shape().str());
    }
    ConvGrads<T> grads{need_input ? Tensor<T>(xs) : Tensor<T>{}, Tensor<T>(weight.shape()), Tensor<T>(bias.shape())};
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto oc = static_cast<Eigen::Index>(g.out_ch);
    const auto cols_n = static_cast<Eigen::Index>(g.out_plane());
    const ConstMatrixMap<T> w(weight.data().data(), oc, patch);

    std::vector<RowMatrix<T>> dw_parts(xs.n);
    std::vector<std::vector<T>> db_parts(xs.n);
    parallel_for(xs.n, [&](std::size_t n) {
        std::vector<T> scratch;
        const T* cols_ptr = x.plane(n, 0);
        if (!g.pointwise()) {
            scratch.resize(g.patch() * g.out_plane());
            im2col(x.plane(n, 0), g, scratch.data());
            cols_ptr = scratch.data();
        }
        const ConstMatrixMap<T> cols(cols_ptr, patch, cols_n);
        const ConstMatrixMap<T> g_out(dy.plane(n, 0), oc, cols_n);
        dw_parts[n].noalias() = g_out * cols.transpose();
        db_parts[n].assign(g.out_ch, T{0});
        for (std::size_t o = 0; o < g.out_ch; ++o) {
            const T* row = dy.plane(n, o);
            T acc{0};
            for (std::size_t i = 0; i < g.out_plane(); ++i) acc += row[i];
            db_parts[n][o] = acc;
        }
        if (!need_input) return;
        if (g.pointwise()) {
            MatrixMap<T> dx(grads.input.plane(n, 0), patch, cols_n);
            dx.noalias() = w.transpose() * g_out;
        } else {
            RowMatrix<T> dcols = w.transpose() * g_out;
            col2im(dcols.data(), g, grads.input.plane(n, 0));
        }
    });
    MatrixMap<T> dw(grads.weight.data().data(), oc, patch);
    dw.setZero();
    for (std::size_t n = 0; n < xs.n; ++n) {
        dw += dw_parts[n];
        for (std::size_t o = 0; o < g.out_ch; ++o) grads.bias[o] += db_parts[n][o];
    }
    return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    return y;
}

/// Subgradient at exactly zero is zero.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
    return dx;
}

template <typename T>
T sigmoid_scalar(T v) {
    if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
    const T e = std::exp(v);
    return e / (T{1} + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = sigmoid_scalar(x[i]);
    return y;
}

/// Uses the forward output y: dx = dy * y * (1 - y).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    Tensor<T> dx(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
    return dx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape& s = x.shape();
    if (s.h == 0 || s.w == 0) throw DimensionError("global_avg_pool: empty spatial extent " + s.str());
    Tensor<T> y(Shape{s.n, s.c, 1, 1});
    const T inv = T{1} / static_cast<T>(s.plane());
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = x.plane(n, c);
            T acc{0};
            for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
            y(n, c, 0, 0) = acc * inv;
        }
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& in, const Tensor<T>& dy) {
    Tensor<T> dx(in);
    const T inv = T{1} / static_cast<T>(in.plane());
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t c = 0; c < in.c; ++c) {
            const T v = dy(n, c, 0, 0) * inv;
            T* p = dx.plane(n, c);
            std::fill(p, p + in.plane(), v);
        }
    }
    return dx;
}

/// out[n][c][h*r+i][w*r+j] = in[n][c*r*r + i*r + j][h][w]
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    const Shape& s = x.shape();
    if (r == 0 || s.c % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by r^2 = " +
                             std::to_string(r * r));
    }
    const std::size_t oc = s.c / (r * r);
    Tensor<T> y(Shape{s.n, oc, s.h * r, s.w * r});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < oc; ++c)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j) {
                    const T* src = x.plane(n, c * r * r + i * r + j);
                    for (std::size_t h = 0; h < s.h; ++h)
                        for (std::size_t w = 0; w < s.w; ++w) y(n, c, h * r + i, w * r + j) = src[h * s.w + w];
                }
    return y;
}

/// Inverse of pixel_shuffle.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t r) {
    const Shape& s = x.shape();
    if (r == 0 || s.h % r != 0 || s.w % r != 0) {
        throw DimensionError("space_to_depth: spatial dims " + s.str() + " not divisible by " + std::to_string(r));
    }
    const std::size_t oh = s.h / r, ow = s.w / r;
    Tensor<T> y(Shape{s.n, s.c * r * r, oh, ow});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j) {
                    T* dst = y.plane(n, c * r * r + i * r + j);
                    for (std::size_t h = 0; h < oh; ++h)
                        for (std::size_t w = 0; w < ow; ++w) dst[h * ow + w] = x(n, c, h * r + i, w * r + j);
                }
    return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("add: " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("sub: " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] - b[i];
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("mul: " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * k;
    return y;
}

/// Multiplies every (n, c) plane of x by s(n, c, 0, 0).
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
    const Shape& xs = x.shape();
    if (s.shape() != Shape{xs.n, xs.c, 1, 1}) {
        throw DimensionError("channel_scale: gate dims " + s.shape().str() + " do not match " + xs.str());
    }
    Tensor<T> y(xs);
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c) {
            const T k = s(n, c, 0, 0);
            const T* src = x.plane(n, c);
            T* dst = y.plane(n, c);
            for (std::size_t i = 0; i < xs.plane(); ++i) dst[i] = src[i] * k;
        }
    return y;
}

/// Returns (dx, ds).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_scale_backward(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& dy) {
    const Shape& xs = x.shape();
    Tensor<T> dx(xs);
    Tensor<T> ds(s.shape());
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c) {
            const T k = s(n, c, 0, 0);
            const T* src = x.plane(n, c);
            const T* g = dy.plane(n, c);
            T* d = dx.plane(n, c);
            T acc{0};
            for (std::size_t i = 0; i < xs.plane(); ++i) {
                d[i] = g[i] * k;
                acc += g[i] * src[i];
            }
            ds(n, c, 0, 0) = acc;
        }
    return {std::move(dx), std::move(ds)};
}

/// Mirror index into [0, n) without repeating the edge sample; periodic
/// beyond one reflection.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

/// Reflect-pads on the bottom and right edges only.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::size_t pad_bottom, std::size_t pad_right) {
    const Shape& s = x.shape();
    if (s.h == 0 || s.w == 0) throw DimensionError("reflect_pad: empty input " + s.str());
    Tensor<T> y(Shape{s.n, s.c, s.h + pad_bottom, s.w + pad_right});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t h = 0; h < y.shape().h; ++h) {
                const std::size_t sh = reflect_index(static_cast<std::ptrdiff_t>(h), s.h);
                for (std::size_t w = 0; w < y.shape().w; ++w)
                    y(n, c, h, w) = x(n, c, sh, reflect_index(static_cast<std::ptrdiff_t>(w), s.w));
            }
    return y;
}

/// Spatial window [top, top+h) x [left, left+w).
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    const Shape& s = x.shape();
    if (top + h > s.h || left + w > s.w) throw DimensionError("crop: window exceeds input " + s.str());
    Tensor<T> y(Shape{s.n, s.c, h, w});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t r = 0; r < h; ++r) {
                const T* src = x.plane(n, c) + (top + r) * s.w + left;
                std::copy(src, src + w, y.plane(n, c) + r * w);
            }
    return y;
}

/// Adjoint of crop: places dy into a zero tensor of the source dims.
template <typename T>
Tensor<T> crop_backward(const Shape& in, std::size_t top, std::size_t left, const Tensor<T>& dy) {
    const Shape& s = dy.shape();
    Tensor<T> dx(in);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t r = 0; r < s.h; ++r) {
                const T* src = dy.plane(n, c) + r * s.w;
                std::copy(src, src + s.w, dx.plane(n, c) + (top + r) * in.w + left);
            }
    return dx;
}

} // namespace rsen::kernels
