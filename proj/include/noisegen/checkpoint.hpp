#pragma once
// Binary checkpoint container: 8-byte magic, little-endian u64 header
// length, JSON header (kind, config hash, epoch, string table, tensor
// table), then a flat float32 payload. Writes are atomic (temp + rename)
// so an interrupted save never masquerades as a checkpoint.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "tensor.hpp"

namespace noisegen {

inline constexpr char kCheckpointMagic[8] = {'N', 'G', 'C', 'K', 'P', 'T', '0', '1'};

struct Checkpoint {
    std::string kind;         // payload discriminator, e.g. "noise_model"
    std::string config_hash;  // hash of the producing config, checked on resume
    int epoch = 0;
    std::map<std::string, std::string> strings;  // rng states and small metadata
    std::map<std::string, Tensor> tensors;
};

inline std::string config_hash_of(const nlohmann::json& j) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["kind"] = ck.kind;
    header["config_hash"] = ck.config_hash;
    header["epoch"] = ck.epoch;
    header["strings"] = nlohmann::json::object();
    for (const auto& [k, v] : ck.strings) header["strings"][k] = v;

    std::int64_t offset = 0;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : ck.tensors) {
        nlohmann::json row;
        row["name"] = name;
        row["shape"] = t.shape;
        row["offset"] = offset;
        row["count"] = t.size();
        header["tensors"].push_back(row);
        offset += t.size();
    }

    const std::string hjson = header.dump();
    std::string blob;
    blob.reserve(sizeof(kCheckpointMagic) + 8 + hjson.size() +
                 static_cast<std::size_t>(offset) * sizeof(float));
    blob.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t hlen = hjson.size();
    for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((hlen >> (8 * b)) & 0xff));
    blob += hjson;
    for (const auto& [name, t] : ck.tensors) {
        std::vector<float> payload = t.v;
        detail::to_little_endian_inplace(payload);
        blob.append(reinterpret_cast<const char*>(payload.data()),
                    payload.size() * sizeof(float));
    }
    write_text_atomic(path, blob);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string blob = read_text(path);
    const std::string where = path.string();
    if (blob.size() < sizeof(kCheckpointMagic) + 8 ||
        std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw IoError(where + ": not a checkpoint (bad magic)");
    std::uint64_t hlen = 0;
    for (int b = 0; b < 8; ++b)
        hlen |= static_cast<std::uint64_t>(
                    static_cast<unsigned char>(blob[sizeof(kCheckpointMagic) + b]))
                << (8 * b);
    const std::size_t hstart = sizeof(kCheckpointMagic) + 8;
    if (hstart + hlen > blob.size()) throw IoError(where + ": truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.substr(hstart, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(where + ": corrupt checkpoint header: " + e.what());
    }
    if (!header.contains("format_version") || header["format_version"].get<int>() != 1)
        throw IoError(where + ": unsupported checkpoint format version");

    Checkpoint ck;
    try {
        ck.kind = header.at("kind").get<std::string>();
        ck.config_hash = header.at("config_hash").get<std::string>();
        ck.epoch = header.at("epoch").get<int>();
        for (const auto& [k, v] : header.at("strings").items())
            ck.strings[k] = v.get<std::string>();

        const char* payload = blob.data() + hstart + hlen;
        const std::size_t payload_floats = (blob.size() - hstart - hlen) / sizeof(float);
        for (const auto& row : header.at("tensors")) {
            const std::string name = row.at("name").get<std::string>();
            const Shape shape = row.at("shape").get<Shape>();
            const std::int64_t offset = row.at("offset").get<std::int64_t>();
            const std::int64_t count = row.at("count").get<std::int64_t>();
            if (count != shape_numel(shape))
                throw IoError(where + ": tensor '" + name + "' count/shape mismatch");
            if (offset < 0 || static_cast<std::size_t>(offset + count) > payload_floats)
                throw IoError(where + ": tensor '" + name + "' exceeds payload");
            Tensor t(shape);
            std::memcpy(t.v.data(), payload + offset * static_cast<std::int64_t>(sizeof(float)),
                        static_cast<std::size_t>(count) * sizeof(float));
            detail::to_little_endian_inplace(t.v);  // involution: decodes on big-endian hosts
            ck.tensors[name] = std::move(t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(where + ": malformed checkpoint header: " + e.what());
    }
    return ck;
}

// Copies every tensor of a network (trainable and buffers) into the table.
// Names come from the net's own for_each_tensor, already prefixed.
template <typename Net>
void store_net_tensors(Checkpoint& ck, Net& net) {
    for_each_tensor(net, [&](const std::string& name, auto& t, bool) { ck.tensors[name] = t; });
}

// Strict inverse: every tensor of `net` must be present with its exact
// shape. Extra table entries (other nets, optimizer state) are ignored.
template <typename Net>
void restore_net_tensors(const Checkpoint& ck, Net& net) {
    for_each_tensor(net, [&](const std::string& name, auto& t, bool) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end())
            throw IoError("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape != t.shape)
            throw IoError("checkpoint tensor '" + name + "' has shape " +
                          shape_str(it->second.shape) + ", expected " + shape_str(t.shape));
        t = it->second;
    });
}

}  // namespace noisegen
