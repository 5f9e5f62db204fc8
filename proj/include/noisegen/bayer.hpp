#pragma once

#include <stdexcept>

#include "rng.hpp"
#include "tensor.hpp"

namespace noisegen {

// Raw-domain conventions: a mosaic is a rank-2 [H,W] tensor with RGGB phase
// (R at even row/even col); a packed patch is rank-3 [4,h,w] with channel
// order R, G1, G2, B. Values live in [0,1] for clean data; noisy data is
// stored unclamped.

inline void require_mosaic(const Tensor& m, const char* what) {
    if (m.rank() != 2) throw std::invalid_argument(std::string(what) + ": mosaic must be rank-2");
}

inline Tensor pack_bayer(const Tensor& mosaic) {
    require_mosaic(mosaic, "pack_bayer");
    const int H = mosaic.dim(0), W = mosaic.dim(1);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("pack_bayer: mosaic dimensions must be even, got " +
                                    std::to_string(H) + "x" + std::to_string(W));
    Tensor out(Shape{4, H / 2, W / 2});
    for (int r = 0; r < H / 2; ++r)
        for (int c = 0; c < W / 2; ++c) {
            out.at3(0, r, c) = mosaic.at2(2 * r, 2 * c);
            out.at3(1, r, c) = mosaic.at2(2 * r, 2 * c + 1);
            out.at3(2, r, c) = mosaic.at2(2 * r + 1, 2 * c);
            out.at3(3, r, c) = mosaic.at2(2 * r + 1, 2 * c + 1);
        }
    return out;
}

inline Tensor unpack_bayer(const Tensor& patch) {
    if (patch.rank() != 3 || patch.dim(0) != 4)
        throw std::invalid_argument("unpack_bayer: patch must be [4,h,w]");
    const int h = patch.dim(1), w = patch.dim(2);
    Tensor out(Shape{2 * h, 2 * w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            out.at2(2 * r, 2 * c) = patch.at3(0, r, c);
            out.at2(2 * r, 2 * c + 1) = patch.at3(1, r, c);
            out.at2(2 * r + 1, 2 * c) = patch.at3(2, r, c);
            out.at2(2 * r + 1, 2 * c + 1) = patch.at3(3, r, c);
        }
    return out;
}

// Horizontal flip that preserves RGGB phase: mirror, then drop the first and
// last columns so the surviving columns land back on their original CFA
// sites. Output width is W-2.
inline Tensor bayer_flip_h(const Tensor& mosaic) {
    require_mosaic(mosaic, "bayer_flip_h");
    const int H = mosaic.dim(0), W = mosaic.dim(1);
    if (W < 4) throw std::invalid_argument("bayer_flip_h: width must be >= 4");
    Tensor out(Shape{H, W - 2});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W - 2; ++x) out.at2(y, x) = mosaic.at2(y, W - 2 - x);
    return out;
}

inline Tensor bayer_flip_v(const Tensor& mosaic) {
    require_mosaic(mosaic, "bayer_flip_v");
    const int H = mosaic.dim(0), W = mosaic.dim(1);
    if (H < 4) throw std::invalid_argument("bayer_flip_v: height must be >= 4");
    Tensor out(Shape{H - 2, W});
    for (int y = 0; y < H - 2; ++y)
        for (int x = 0; x < W; ++x) out.at2(y, x) = mosaic.at2(H - 2 - y, x);
    return out;
}

struct CropResult {
    Tensor mosaic;
    int row0 = 0;
    int col0 = 0;
};

// Seeded square crop with even origin (phase-preserving).
inline CropResult random_crop(const Tensor& mosaic, int size, RngStream& rng) {
    require_mosaic(mosaic, "random_crop");
    const int H = mosaic.dim(0), W = mosaic.dim(1);
    if (size % 2 != 0) throw std::invalid_argument("random_crop: size must be even");
    if (size > H || size > W)
        throw std::invalid_argument("random_crop: size " + std::to_string(size) +
                                    " exceeds mosaic " + std::to_string(H) + "x" + std::to_string(W));
    const int max_r = (H - size) / 2;
    const int max_c = (W - size) / 2;
    CropResult res;
    res.row0 = 2 * static_cast<int>(rng.below(max_r + 1));
    res.col0 = 2 * static_cast<int>(rng.below(max_c + 1));
    res.mosaic = Tensor(Shape{size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) res.mosaic.at2(y, x) = mosaic.at2(res.row0 + y, res.col0 + x);
    return res;
}

}  // namespace noisegen
