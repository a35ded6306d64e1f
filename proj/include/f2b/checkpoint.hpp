// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "f2b/model.hpp"

namespace f2b {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

// Versioned binary checkpoint:
//   magic "F2BCKPT\0" | version u16 | config fields u32 x9 |
//   blocks: [ name_len u16 | name | dtype u8 | rank u8 | dims u32 x rank | payload ]
// Every parameter (including adapter factors, prefixed lora.compression. /
// lora.generation.) is one named block; round-trips are bit-exact.

inline constexpr char kCkptMagic[8] = {'F', '2', 'B', 'C', 'K', 'P', 'T', '\0'};
inline constexpr uint16_t kCkptVersion = 1;

namespace ckpt_detail {

template <class T>
void put(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

template <class T>
T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw io_error("checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

template <class S>
constexpr uint8_t dtype_code() {
    return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace ckpt_detail

template <class S>
std::string serialize_model(const ModelState<S>& m) {
    using namespace ckpt_detail;
    std::string buf;
    buf.append(kCkptMagic, 8);
    put<uint16_t>(buf, kCkptVersion);
    const ModelConfig& c = m.cfg;
    for (int v : {c.d_model, c.n_layers, c.n_heads, c.ffn_width, c.vocab_size, c.k_vision, c.k_summary, c.max_seq_len,
                  static_cast<int>(c.attention_mode_compression)})
        put<uint32_t>(buf, static_cast<uint32_t>(v));
    for (const auto& p : m.params) {
        if (p->name.size() > 0xffff) throw io_error("parameter name too long");
        put<uint16_t>(buf, static_cast<uint16_t>(p->name.size()));
        buf.append(p->name);
        put<uint8_t>(buf, dtype_code<S>());
        put<uint8_t>(buf, static_cast<uint8_t>(p->value.rank()));
        for (int d : p->value.shape) put<uint32_t>(buf, static_cast<uint32_t>(d));
        buf.append(reinterpret_cast<const char*>(p->value.data.data()), p->value.data.size() * sizeof(S));
    }
    return buf;
}

template <class S>
void save_checkpoint(const std::string& path, const ModelState<S>& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    std::string buf = serialize_model(m);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed: " + path);
}

template <class S>
ModelState<S> deserialize_model(const std::string& buf) {
    using namespace ckpt_detail;
    if (buf.size() < 8 + 2 + 9 * 4 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
        throw io_error("not a checkpoint file (bad magic)");
    size_t off = 8;
    uint16_t version = take<uint16_t>(buf, off);
    if (version != kCkptVersion) throw io_error("unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.d_model = static_cast<int>(take<uint32_t>(buf, off));
    cfg.n_layers = static_cast<int>(take<uint32_t>(buf, off));
    cfg.n_heads = static_cast<int>(take<uint32_t>(buf, off));
    cfg.ffn_width = static_cast<int>(take<uint32_t>(buf, off));
    cfg.vocab_size = static_cast<int>(take<uint32_t>(buf, off));
    cfg.k_vision = static_cast<int>(take<uint32_t>(buf, off));
    cfg.k_summary = static_cast<int>(take<uint32_t>(buf, off));
    cfg.max_seq_len = static_cast<int>(take<uint32_t>(buf, off));
    cfg.attention_mode_compression = static_cast<AttnMode>(take<uint32_t>(buf, off));

    std::map<std::string, Tensor<S>> blocks;
    std::vector<std::string> order;
    while (off < buf.size()) {
        uint16_t nlen = take<uint16_t>(buf, off);
        if (off + nlen > buf.size()) throw io_error("checkpoint truncated");
        std::string name(buf.data() + off, nlen);
        off += nlen;
        uint8_t dtype = take<uint8_t>(buf, off);
        if (dtype != dtype_code<S>()) throw io_error("checkpoint dtype does not match requested precision");
        uint8_t rank = take<uint8_t>(buf, off);
        std::vector<int> shape;
        for (int i = 0; i < rank; ++i) shape.push_back(static_cast<int>(take<uint32_t>(buf, off)));
        Tensor<S> t(shape);
        size_t bytes = t.data.size() * sizeof(S);
        if (off + bytes > buf.size()) throw io_error("checkpoint truncated");
        std::memcpy(t.data.data(), buf.data() + off, bytes);
        off += bytes;
        if (!blocks.emplace(name, std::move(t)).second) throw io_error("duplicate checkpoint block " + name);
        order.push_back(name);
    }

    auto meta = [&](const std::string& name, double fallback, bool required) -> double {
        auto it = blocks.find(name);
        if (it == blocks.end()) {
            if (required) throw io_error("checkpoint missing block " + name);
            return fallback;
        }
        return static_cast<double>(it->second.data.at(0));
    };
    ModelOptions opts;
    opts.pipeline = static_cast<Pipeline>(static_cast<int>(meta("meta.pipeline", 0, true)));
    opts.adapter_mode = static_cast<AdapterMode>(static_cast<int>(meta("meta.adapter_mode", 0, true)));
    opts.lora_rank = static_cast<int>(meta("meta.lora_rank", 4, true));
    opts.lora_alpha = meta("meta.lora_alpha", 1.0, true);

    ModelState<S> m = init_model<S>(cfg, opts, /*seed=*/0);
    size_t used = 0;
    for (auto& p : m.params) {
        auto it = blocks.find(p->name);
        if (it == blocks.end()) throw io_error("checkpoint missing block " + p->name);
        if (it->second.shape != p->value.shape) throw io_error("checkpoint block shape mismatch for " + p->name);
        p->value = it->second;
        ++used;
    }
    if (used != blocks.size()) throw io_error("checkpoint contains blocks not used by this model");
    return m;
}

template <class S>
ModelState<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model<S>(buf);
}

}  // namespace f2b
