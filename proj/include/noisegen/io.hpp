#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tensor.hpp"

namespace noisegen {

// Error taxonomy. CLI maps these onto process exit codes:
//   ComputeError -> 1, UsageError -> 2, IoError -> 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ComputeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

namespace detail {
inline void to_little_endian_inplace(std::vector<float>&) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    if constexpr (std::endian::native == std::endian::big) {
        throw IoError("big-endian hosts are not supported by the .f32 payload codec");
    }
}
}  // namespace detail

// Flat little-endian float32 payload, C-order. The canonical on-disk tensor format.
inline void write_f32(const std::filesystem::path& path, const float* data, size_t n) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + path.string());
        f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
        if (!f) throw IoError("short write: " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

inline void write_f32(const std::filesystem::path& path, const Tensor& t) {
    write_f32(path, t.data(), t.v.size());
}

inline std::vector<float> read_f32(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path.string());
    std::streamsize bytes = f.tellg();
    if (bytes < 0 || bytes % 4 != 0)
        throw IoError("payload size not a multiple of 4 bytes: " + path.string());
    f.seekg(0);
    std::vector<float> out(static_cast<size_t>(bytes / 4));
    f.read(reinterpret_cast<char*>(out.data()), bytes);
    if (!f) throw IoError("short read: " + path.string());
    detail::to_little_endian_inplace(out);
    return out;
}

inline Tensor read_f32_tensor(const std::filesystem::path& path, const Shape& shape) {
    std::vector<float> raw = read_f32(path);
    if (static_cast<std::int64_t>(raw.size()) != shape_numel(shape))
        throw IoError("payload " + path.string() + " has " + std::to_string(raw.size()) +
                      " floats, expected " + std::to_string(shape_numel(shape)) + " for shape " +
                      shape_str(shape));
    Tensor t;
    t.shape = shape;
    t.v = std::move(raw);
    return t;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + path.string());
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!f) throw IoError("short write: " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path.string());
    std::streamsize bytes = f.tellg();
    f.seekg(0);
    std::string s(static_cast<size_t>(bytes), '\0');
    f.read(s.data(), bytes);
    if (!f) throw IoError("short read: " + path.string());
    return s;
}

// Minimal CSV emitter: numeric cells formatted with shortest round-trip precision.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(const std::vector<std::string>& cells) {
        if (cells.size() != header_.size()) throw std::invalid_argument("CSV row width mismatch");
        rows_.push_back(cells);
    }

    std::string str() const {
        std::string out = join(header_);
        for (const auto& r : rows_) out += join(r);
        return out;
    }

    void save(const std::filesystem::path& path) const { write_text_atomic(path, str()); }

private:
    static std::string join(const std::vector<std::string>& cells) {
        std::string line;
        for (size_t i = 0; i < cells.size(); ++i) {
            line += cells[i];
            if (i + 1 < cells.size()) line += ",";
        }
        line += "\n";
        return line;
    }
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

inline std::string fmt_g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string fmt_g9(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

}  // namespace noisegen
