#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace noisegen {

// Spatial geometry of a 2-d convolution. Padding is explicit per edge because
// one critic layer needs asymmetric padding (1 before, 0 after).
struct ConvGeom {
    int in_h = 0, in_w = 0;
    int kh = 0, kw = 0;
    int stride = 1;
    int pad_t = 0, pad_l = 0, pad_b = 0, pad_r = 0;

    int out_h() const { return (in_h + pad_t + pad_b - kh) / stride + 1; }
    int out_w() const { return (in_w + pad_l + pad_r - kw) / stride + 1; }

    void validate() const {
        if (in_h <= 0 || in_w <= 0 || kh <= 0 || kw <= 0 || stride <= 0)
            throw std::invalid_argument("ConvGeom: non-positive dimension");
        int sh = in_h + pad_t + pad_b - kh;
        int sw = in_w + pad_l + pad_r - kw;
        if (sh < 0 || sw < 0) throw std::invalid_argument("ConvGeom: kernel larger than padded input");
        if (sh % stride != 0 || sw % stride != 0)
            throw std::invalid_argument("ConvGeom: stride does not tile the padded input exactly");
    }

    bool operator==(const ConvGeom& o) const {
        return in_h == o.in_h && in_w == o.in_w && kh == o.kh && kw == o.kw && stride == o.stride &&
               pad_t == o.pad_t && pad_l == o.pad_l && pad_b == o.pad_b && pad_r == o.pad_r;
    }
};

namespace convdetail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
std::vector<T>& scratch(int which) {
    thread_local std::vector<T> bufs[4];
    return bufs[which];
}

// col is row-major [Cin*kh*kw x N*OH*OW]; row (ci,ky,kx), column (n,oy,ox).
template <typename T>
void im2col(const T* x, int N, int C, const ConvGeom& g, T* col) {
    const int OH = g.out_h(), OW = g.out_w();
    const std::size_t M = static_cast<std::size_t>(N) * OH * OW;
    const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    for (int ci = 0; ci < C; ++ci) {
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                T* row = col + (static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx)) * M;
                for (int n = 0; n < N; ++n) {
                    const T* xn = x + (static_cast<std::size_t>(n) * C + ci) * plane;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * g.stride - g.pad_t + ky;
                        T* dst = row + (static_cast<std::size_t>(n) * OH + oy) * OW;
                        if (iy < 0 || iy >= g.in_h) {
                            std::fill(dst, dst + OW, T(0));
                            continue;
                        }
                        const T* xrow = xn + static_cast<std::size_t>(iy) * g.in_w;
                        const int ix0 = kx - g.pad_l;
                        int ox = 0;
                        // leading out-of-range columns
                        for (; ox < OW && ix0 + ox * g.stride < 0; ++ox) dst[ox] = T(0);
                        if (g.stride == 1) {
                            int run_end = std::min(OW, g.in_w - ix0);
                            for (; ox < run_end; ++ox) dst[ox] = xrow[ix0 + ox];
                        } else {
                            for (; ox < OW; ++ox) {
                                int ix = ix0 + ox * g.stride;
                                if (ix >= g.in_w) break;
                                dst[ox] = xrow[ix];
                            }
                        }
                        for (; ox < OW; ++ox) dst[ox] = T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into the (pre-zeroed) image.
template <typename T>
void col2im_add(const T* col, int N, int C, const ConvGeom& g, T* x) {
    const int OH = g.out_h(), OW = g.out_w();
    const std::size_t M = static_cast<std::size_t>(N) * OH * OW;
    const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    for (int ci = 0; ci < C; ++ci) {
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const T* row = col + (static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx)) * M;
                for (int n = 0; n < N; ++n) {
                    T* xn = x + (static_cast<std::size_t>(n) * C + ci) * plane;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * g.stride - g.pad_t + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        T* xrow = xn + static_cast<std::size_t>(iy) * g.in_w;
                        const T* src = row + (static_cast<std::size_t>(n) * OH + oy) * OW;
                        const int ix0 = kx - g.pad_l;
                        for (int ox = 0; ox < OW; ++ox) {
                            int ix = ix0 + ox * g.stride;
                            if (ix >= 0 && ix < g.in_w) xrow[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

// Gather [N,Cout,S] row-major into [Cout x N*S] row-major (and back).
template <typename T>
void gather_by_channel(const T* y, int N, int C, std::size_t S, T* out) {
    for (int co = 0; co < C; ++co)
        for (int n = 0; n < N; ++n)
            std::copy_n(y + (static_cast<std::size_t>(n) * C + co) * S, S,
                        out + static_cast<std::size_t>(co) * N * S + static_cast<std::size_t>(n) * S);
}

template <typename T>
void scatter_by_channel(const T* ycm, int N, int C, std::size_t S, T* y) {
    for (int co = 0; co < C; ++co)
        for (int n = 0; n < N; ++n)
            std::copy_n(ycm + static_cast<std::size_t>(co) * N * S + static_cast<std::size_t>(n) * S, S,
                        y + (static_cast<std::size_t>(n) * C + co) * S);
}

}  // namespace convdetail

// y[n,co,oy,ox] = sum_{ci,ky,kx} x[n,ci,oy*s-pt+ky,ox*s-pl+kx] * w[co,ci,ky,kx]
template <typename T>
void conv_fwd(const T* x, const T* w, T* y, int N, int Cin, int Cout, const ConvGeom& g) {
    using namespace convdetail;
    g.validate();
    const int OH = g.out_h(), OW = g.out_w();
    const std::size_t S = static_cast<std::size_t>(OH) * OW;
    const std::size_t M = static_cast<std::size_t>(N) * S;
    const std::size_t K = static_cast<std::size_t>(Cin) * g.kh * g.kw;

    auto& colbuf = scratch<T>(0);
    colbuf.resize(K * M);
    im2col(x, N, Cin, g, colbuf.data());

    auto& ybuf = scratch<T>(1);
    ybuf.resize(static_cast<std::size_t>(Cout) * M);
    CMapRM<T> W(w, Cout, static_cast<Eigen::Index>(K));
    CMapRM<T> C(colbuf.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
    MapRM<T> Y(ybuf.data(), Cout, static_cast<Eigen::Index>(M));
    Y.noalias() = W * C;

    scatter_by_channel(ybuf.data(), N, Cout, S, y);
}

// gx = adjoint of conv_fwd w.r.t. x: gx[n,ci,iy,ix] += gy[n,co,oy,ox]*w[co,ci,ky,kx]
template <typename T>
void conv_bwd_input(const T* gy, const T* w, T* gx, int N, int Cin, int Cout, const ConvGeom& g) {
    using namespace convdetail;
    g.validate();
    const int OH = g.out_h(), OW = g.out_w();
    const std::size_t S = static_cast<std::size_t>(OH) * OW;
    const std::size_t M = static_cast<std::size_t>(N) * S;
    const std::size_t K = static_cast<std::size_t>(Cin) * g.kh * g.kw;

    auto& gbuf = scratch<T>(2);
    gbuf.resize(static_cast<std::size_t>(Cout) * M);
    gather_by_channel(gy, N, Cout, S, gbuf.data());

    auto& colbuf = scratch<T>(0);
    colbuf.resize(K * M);
    CMapRM<T> W(w, Cout, static_cast<Eigen::Index>(K));
    CMapRM<T> G(gbuf.data(), Cout, static_cast<Eigen::Index>(M));
    MapRM<T> Col(colbuf.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
    Col.noalias() = W.transpose() * G;

    std::fill_n(gx, static_cast<std::size_t>(N) * Cin * g.in_h * g.in_w, T(0));
    col2im_add(colbuf.data(), N, Cin, g, gx);
}

// gw = adjoint of conv_fwd w.r.t. w: gw[co,ci,ky,kx] = sum_{n,oy,ox} gy*x
template <typename T>
void conv_bwd_weight(const T* x, const T* gy, T* gw, int N, int Cin, int Cout, const ConvGeom& g) {
    using namespace convdetail;
    g.validate();
    const int OH = g.out_h(), OW = g.out_w();
    const std::size_t S = static_cast<std::size_t>(OH) * OW;
    const std::size_t M = static_cast<std::size_t>(N) * S;
    const std::size_t K = static_cast<std::size_t>(Cin) * g.kh * g.kw;

    auto& colbuf = scratch<T>(0);
    colbuf.resize(K * M);
    im2col(x, N, Cin, g, colbuf.data());

    auto& gbuf = scratch<T>(2);
    gbuf.resize(static_cast<std::size_t>(Cout) * M);
    gather_by_channel(gy, N, Cout, S, gbuf.data());

    CMapRM<T> G(gbuf.data(), Cout, static_cast<Eigen::Index>(M));
    CMapRM<T> C(colbuf.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
    MapRM<T> GW(gw, Cout, static_cast<Eigen::Index>(K));
    GW.noalias() = G * C.transpose();
}

}  // namespace noisegen
