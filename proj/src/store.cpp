// SPDX-License-Identifier: Apache-2.0
#include "f2b/store.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace f2b {

static_assert(std::endian::native == std::endian::little, "store writer assumes a little-endian host");

namespace {

template <class T>
void put(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

template <class T>
T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw corruption_error("store truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

uint32_t crc_of(const std::string& bytes, size_t len) {
    return static_cast<uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(len)));
}

}  // namespace

StoreWriter::StoreWriter(StoreDtype dtype, int k_summary, int d) {
    if (k_summary < 0 || d <= 0) throw usage_error("bad store dimensions");
    header_.dtype = dtype;
    header_.k_summary = static_cast<uint32_t>(k_summary);
    header_.d = static_cast<uint32_t>(d);
}

void StoreWriter::add(const std::string& image_id, const std::vector<float>& payload) {
    if (finished_) throw contract_error("store writer already finished");
    if (image_id.empty() || image_id.size() > 0xffff) throw data_error("ingestion error: bad image id");
    if (payload.size() != static_cast<size_t>(header_.k_summary) * header_.d)
        throw dim_error("payload length must be k_summary * d");
    if (!seen_.emplace(image_id, true).second) throw data_error("ingestion error: duplicate id " + image_id);
    put<uint16_t>(records_, static_cast<uint16_t>(image_id.size()));
    records_.append(image_id);
    if (header_.dtype == StoreDtype::half) {
        for (float v : payload) put<uint16_t>(records_, float_to_half(v));
    } else {
        for (float v : payload) put<float>(records_, v);
    }
    ++header_.count;
}

std::string StoreWriter::finish() {
    finished_ = true;
    std::string buf;
    buf.append(kStoreMagic, 8);
    put<uint16_t>(buf, header_.version);
    put<uint8_t>(buf, static_cast<uint8_t>(header_.dtype));
    put<uint8_t>(buf, 0);  // pad
    put<uint32_t>(buf, header_.k_summary);
    put<uint32_t>(buf, header_.d);
    put<uint64_t>(buf, header_.count);
    buf += records_;
    put<uint32_t>(buf, crc_of(buf, buf.size()));
    return buf;
}

void StoreWriter::write_file(const std::string& path) {
    std::string buf = finish();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed: " + path);
}

StoreReader::StoreReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    bytes_.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes_.size() < kStoreHeaderBytes + 4 || std::memcmp(bytes_.data(), kStoreMagic, 8) != 0)
        throw io_error("not a store file (bad magic): " + path);

    size_t off = bytes_.size() - 4;
    uint32_t recorded = take<uint32_t>(bytes_, off);
    if (recorded != crc_of(bytes_, bytes_.size() - 4)) throw corruption_error("store CRC mismatch: " + path);

    off = 8;
    header_.version = take<uint16_t>(bytes_, off);
    if (header_.version != kStoreVersion) throw io_error("unsupported store version");
    uint8_t dtype = take<uint8_t>(bytes_, off);
    if (dtype > 1) throw io_error("unknown store dtype code");
    header_.dtype = static_cast<StoreDtype>(dtype);
    take<uint8_t>(bytes_, off);  // pad
    header_.k_summary = take<uint32_t>(bytes_, off);
    header_.d = take<uint32_t>(bytes_, off);
    header_.count = take<uint64_t>(bytes_, off);

    size_t payload = header_.payload_bytes();
    for (uint64_t i = 0; i < header_.count; ++i) {
        uint16_t idlen = take<uint16_t>(bytes_, off);
        if (off + idlen + payload > bytes_.size() - 4) throw corruption_error("store record overruns file");
        std::string id(bytes_.data() + off, idlen);
        off += idlen;
        if (!offsets_.emplace(id, off).second) throw corruption_error("duplicate id in store: " + id);
        ids_.push_back(std::move(id));
        off += payload;
    }
    if (off != bytes_.size() - 4) throw corruption_error("store has trailing bytes");
}

bool StoreReader::contains(const std::string& image_id) const { return offsets_.count(image_id) != 0; }

Tensor<float> StoreReader::read(const std::string& image_id) const {
    auto it = offsets_.find(image_id);
    if (it == offsets_.end()) throw lookup_error("no record for id " + image_id);
    Tensor<float> t({static_cast<int>(header_.k_summary), static_cast<int>(header_.d)});
    size_t off = it->second;
    if (header_.dtype == StoreDtype::half) {
        for (auto& v : t.data) {
            uint16_t h;
            std::memcpy(&h, bytes_.data() + off, 2);
            off += 2;
            v = half_to_float(h);
        }
    } else {
        std::memcpy(t.data.data(), bytes_.data() + off, t.data.size() * 4);
    }
    return t;
}

QuantizationReport quantization_report(const std::vector<float>& values) {
    QuantizationReport rep;
    for (float v : values) {
        if (!std::isfinite(v)) throw numeric_error("quantization report on non-finite value");
        if (std::fabs(v) > kHalfMax) {
            ++rep.overflow_count;
            continue;
        }
        float back = half_to_float(float_to_half(v));
        rep.max_abs_error = std::max(rep.max_abs_error, static_cast<double>(std::fabs(back - v)));
    }
    return rep;
}

void check_store_matches(const StoreHeader& header, const ModelConfig& cfg) {
    if (header.k_summary != static_cast<uint32_t>(cfg.k_summary) || header.d != static_cast<uint32_t>(cfg.d_model))
        throw data_error("config mismatch: store (k'=" + std::to_string(header.k_summary) + ", d=" +
                         std::to_string(header.d) + ") vs checkpoint (k'=" + std::to_string(cfg.k_summary) +
                         ", d=" + std::to_string(cfg.d_model) + ")");
}

}  // namespace f2b
