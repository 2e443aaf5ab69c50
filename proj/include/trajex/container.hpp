#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace trajex {

// Tensor container with the safetensors layout:
//   [u64 LE header length N][N bytes JSON header][little-endian payloads]
// Header keys map tensor name -> {"dtype", "shape", "data_offsets"} with
// offsets relative to the first payload byte; "__metadata__" holds a
// string -> string map.

enum class DType { F32, F64 };

std::string_view dtype_name(DType d) noexcept;

struct StoredArray {
    DType dtype = DType::F32;
    std::vector<std::uint64_t> shape;
    std::vector<double> data;  // widened in memory regardless of dtype

    friend bool operator==(const StoredArray&, const StoredArray&) = default;
};

struct TensorFile {
    std::map<std::string, StoredArray> arrays;
    std::map<std::string, std::string> metadata;

    friend bool operator==(const TensorFile&, const TensorFile&) = default;
};

std::string encode_tensor_file(const TensorFile& file);
// `origin` names the source in error messages.
TensorFile decode_tensor_file(std::string_view bytes, const std::string& origin = "<memory>");

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

// Sidecar JSON path used for dataset, bundle and adapter metadata.
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace trajex
