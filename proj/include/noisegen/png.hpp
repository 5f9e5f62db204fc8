// Minimal 8-bit RGB PNG writer: stored-deflate zlib stream, hand-rolled
// CRC32/Adler32, no external codec. Enough for small preview images.
#pragma once

#include <noisegen/io.hpp>
#include <noisegen/tensor.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

namespace noisegen {

namespace pngdetail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32(const unsigned char* data, std::size_t n) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline void chunk(std::vector<unsigned char>& out, const char* type,
                  const std::vector<unsigned char>& payload) {
    be32(out, static_cast<std::uint32_t>(payload.size()));
    std::vector<unsigned char> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    be32(out, crc32(body.data(), body.size()));
}

}  // namespace pngdetail

// `rgb` is row-major, 3 bytes per pixel, size exactly 3*w*h.
inline std::vector<unsigned char> encode_png_rgb(int w, int h,
                                                 const std::vector<unsigned char>& rgb) {
    if (w < 1 || h < 1) throw std::invalid_argument("encode_png_rgb: empty image");
    if (rgb.size() != static_cast<std::size_t>(3) * w * h)
        throw std::invalid_argument("encode_png_rgb: buffer size does not match 3*w*h");

    // raw scanlines: filter byte 0 + packed RGB per row
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * static_cast<std::size_t>(w)));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);
        const std::size_t off = static_cast<std::size_t>(y) * 3 * static_cast<std::size_t>(w);
        raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(off),
                   rgb.begin() + static_cast<std::ptrdiff_t>(off + 3 * static_cast<std::size_t>(w)));
    }

    // zlib wrapper around uncompressed (stored) deflate blocks
    std::vector<unsigned char> z{0x78, 0x01};
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const std::size_t len = std::min<std::size_t>(65535, raw.size() - pos);
        z.push_back(pos + len == raw.size() ? 1 : 0);  // bfinal, btype=00
        z.push_back(static_cast<unsigned char>(len & 0xFF));
        z.push_back(static_cast<unsigned char>(len >> 8));
        z.push_back(static_cast<unsigned char>(~len & 0xFF));
        z.push_back(static_cast<unsigned char>((~len >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
                 raw.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    pngdetail::be32(z, pngdetail::adler32(raw.data(), raw.size()));

    std::vector<unsigned char> png{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<unsigned char> ihdr;
    pngdetail::be32(ihdr, static_cast<std::uint32_t>(w));
    pngdetail::be32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    pngdetail::chunk(png, "IHDR", ihdr);
    pngdetail::chunk(png, "IDAT", z);
    pngdetail::chunk(png, "IEND", {});
    return png;
}

inline void write_png_rgb(const std::filesystem::path& path, int w, int h,
                          const std::vector<unsigned char>& rgb) {
    const std::vector<unsigned char> png = encode_png_rgb(w, h, rgb);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!os) throw IoError("short write to " + path.string());
}

// RGB preview of a packed [4,h,w] patch: R = plane 0, G = mean of the two
// green planes, B = plane 3; each value mapped through offset + scale*v and
// clamped to [0,1] before 8-bit quantization.
inline std::vector<unsigned char> packed_preview_rgb(const Tensor& t, double scale = 1.0,
                                                     double offset = 0.0) {
    if (t.rank() != 3 || t.shape[0] != 4)
        throw std::invalid_argument("packed_preview_rgb: expected [4,h,w], got " +
                                    shape_str(t.shape));
    const int h = t.shape[1], w = t.shape[2];
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    std::vector<unsigned char> rgb(3 * plane);
    auto qu = [&](double v) {
        const double x = std::min(1.0, std::max(0.0, offset + scale * v));
        return static_cast<unsigned char>(std::lround(x * 255.0));
    };
    for (std::size_t i = 0; i < plane; ++i) {
        rgb[3 * i + 0] = qu(t.v[i]);
        rgb[3 * i + 1] = qu(0.5 * (static_cast<double>(t.v[plane + i]) + t.v[2 * plane + i]));
        rgb[3 * i + 2] = qu(t.v[3 * plane + i]);
    }
    return rgb;
}

}  // namespace noisegen
