#ifndef STAINKIT_IO_WEIGHTS_HPP
#define STAINKIT_IO_WEIGHTS_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../neural/network.hpp"
#include "json.hpp"

namespace stainkit::io {

inline constexpr std::array<char, 4> kWeightsMagic{'S', 'N', 'N', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

} // namespace detail

/// "SNN1", uint32 LE header length, JSON header, then the float32 LE
/// values of every tensor listed in the header, in header order.
inline std::string encode_weights(const nn::Network<float>& net) {
    json tensors = json::array();
    std::vector<const std::vector<float>*> blobs;
    for (const auto* group : {&net.params(), &net.buffers()}) {
        for (const auto& p : *group) {
            tensors.push_back({{"name", p.name}, {"count", p.value.size()}});
            blobs.push_back(&p.value);
        }
    }
    const json header = {
        {"format_version", 1}, {"spec", to_json(net.spec())}, {"trained", net.trained()}, {"tensors", tensors}};
    const std::string text = header.dump();
    std::string out(kWeightsMagic.begin(), kWeightsMagic.end());
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (const auto* b : blobs) {
        for (float v : *b) {
            detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

inline nn::Network<float> decode_weights(const std::string& bytes, const std::string& what = "weights") {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 8 || std::memcmp(p, kWeightsMagic.data(), 4) != 0) {
        throw Error(ErrorKind::InvalidConfig, what + ": not an SNN1 weights file");
    }
    const std::size_t header_len = detail::get_u32(p + 4);
    if (bytes.size() < 8 + header_len) {
        throw Error(ErrorKind::InvalidConfig, what + ": truncated header");
    }
    const json header = parse_json(bytes.substr(8, header_len), what);
    detail::require_keys(header, {"format_version", "spec", "trained", "tensors"}, what);
    if (detail::get<int>(header, "format_version", what) != 1) {
        throw Error(ErrorKind::InvalidConfig, what + ": unsupported format_version");
    }
    nn::Network<float> net(network_spec_from_json(detail::get<json>(header, "spec", what)), 0);
    std::vector<std::vector<float>*> slots;
    std::vector<std::string> names;
    for (auto* group : {&net.params(), &net.buffers()}) {
        for (auto& t : *group) {
            slots.push_back(&t.value);
            names.push_back(t.name);
        }
    }
    const json tensors = detail::get<json>(header, "tensors", what);
    if (!tensors.is_array() || tensors.size() != slots.size()) {
        throw Error(ErrorKind::InvalidConfig, what + ": tensor list does not match the network spec");
    }
    std::size_t offset = 8 + header_len;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto name = detail::get<std::string>(tensors[i], "name", what);
        const auto count = detail::get<std::size_t>(tensors[i], "count", what);
        if (name != names[i] || count != slots[i]->size()) {
            throw Error(ErrorKind::InvalidConfig, what + ": tensor " + std::to_string(i) + " is " + name + "[" +
                                                      std::to_string(count) + "], expected " + names[i] + "[" +
                                                      std::to_string(slots[i]->size()) + "]");
        }
        if (bytes.size() < offset + 4 * count) {
            throw Error(ErrorKind::InvalidConfig, what + ": truncated tensor data");
        }
        for (std::size_t k = 0; k < count; ++k, offset += 4) {
            (*slots[i])[k] = std::bit_cast<float>(detail::get_u32(p + offset));
        }
    }
    if (offset != bytes.size()) {
        throw Error(ErrorKind::InvalidConfig, what + ": trailing bytes after tensor data");
    }
    net.set_trained(detail::get<bool>(header, "trained", what));
    return net;
}

inline void save_weights(const fs::path& path, const nn::Network<float>& net) { write_text(path, encode_weights(net)); }

inline nn::Network<float> load_weights(const fs::path& path) { return decode_weights(read_text(path), path.string()); }

} // namespace stainkit::io

#endif
