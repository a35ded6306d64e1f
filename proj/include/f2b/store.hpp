// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "f2b/half.hpp"
#include "f2b/inference.hpp"

namespace f2b {

// Offline compression store. Bit-exact little-endian layout:
//   magic "F2BSTOR\0" (8B) | version u16 = 1 | dtype u8 (0=half, 1=float32) |
//   pad u8 | k_summary u32 | d u32 | count u64 |
//   records [ id_len u16 | id bytes | payload ] | crc32 u32
// Payload is k_summary*d elements, 2 bytes each for half. One image is
// compressed once and the record serves every later query.

inline constexpr char kStoreMagic[8] = {'F', '2', 'B', 'S', 'T', 'O', 'R', '\0'};
inline constexpr uint16_t kStoreVersion = 1;
inline constexpr size_t kStoreHeaderBytes = 8 + 2 + 1 + 1 + 4 + 4 + 8;

enum class StoreDtype : uint8_t { half = 0, float32 = 1 };

struct StoreHeader {
    uint16_t version = kStoreVersion;
    StoreDtype dtype = StoreDtype::half;
    uint32_t k_summary = 0;
    uint32_t d = 0;
    uint64_t count = 0;

    size_t payload_bytes() const {
        return static_cast<size_t>(k_summary) * d * (dtype == StoreDtype::half ? 2 : 4);
    }
};

class StoreWriter {
  public:
    StoreWriter(StoreDtype dtype, int k_summary, int d);

    // Quantizes (for half stores) and appends one record; input order is
    // preserved on disk. Throws on duplicate ids.
    void add(const std::string& image_id, const std::vector<float>& payload);
    // Finalizes the byte image (header + records + crc32).
    std::string finish();
    void write_file(const std::string& path);

  private:
    StoreHeader header_;
    std::string records_;
    std::map<std::string, bool> seen_;
    bool finished_ = false;
};

class StoreReader {
  public:
    // Reads the whole file, verifies the trailing CRC32, and builds a linear
    // id index. Throws corruption_error on any mismatch.
    explicit StoreReader(const std::string& path);

    const StoreHeader& header() const { return header_; }
    const std::vector<std::string>& ids() const { return ids_; }  // input order
    bool contains(const std::string& image_id) const;
    // Dequantized payload as float32, shape [k_summary x d]; half values
    // round-trip exactly.
    Tensor<float> read(const std::string& image_id) const;

  private:
    StoreHeader header_;
    std::string bytes_;
    std::vector<std::string> ids_;
    std::map<std::string, size_t> offsets_;  // payload offsets into bytes_
};

struct QuantizationReport {
    double max_abs_error = 0.0;  // float32 -> half -> float32, over in-range values
    int64_t overflow_count = 0;  // |v| beyond the finite half range
};

QuantizationReport quantization_report(const std::vector<float>& values);

// k_summary/d of a store must match the checkpoint that reads it.
void check_store_matches(const StoreHeader& header, const ModelConfig& cfg);

inline std::string store_image_id(size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "img_%05zu", index);
    return buf;
}

// Compresses every scene once (first forward pass) and writes records in
// input order.
template <class S>
void ingest_scenes(ModelState<S>& m, const std::vector<Scene>& scenes, const std::string& path,
                   StoreDtype dtype = StoreDtype::half) {
    StoreWriter writer(dtype, m.cfg.k_summary, m.cfg.d_model);
    for (size_t i = 0; i < scenes.size(); ++i) {
        Tensor<S> summary = summary_values(m, scenes[i]);
        std::vector<float> payload(summary.data.begin(), summary.data.end());
        writer.add(store_image_id(i), payload);
    }
    writer.write_file(path);
}

}  // namespace f2b
