#include "trajex/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "trajex/error.hpp"

namespace trajex {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kMaxHeaderBytes = 100ull * 1024 * 1024;
constexpr const char* kMetadataKey = "__metadata__";

std::size_t dtype_width(DType d) {
    return d == DType::F32 ? 4 : 8;
}

void put_le(std::string& out, std::uint64_t value, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
    }
}

std::uint64_t get_le(std::string_view in, std::size_t pos, std::size_t bytes) {
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < bytes; ++i) {
        value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    return value;
}

[[noreturn]] void format_error(const std::string& origin, const std::string& what) {
    fail(ErrorKind::FormatError, origin + ": " + what);
}

std::uint64_t element_count(const std::vector<std::uint64_t>& shape, const std::string& origin) {
    std::uint64_t n = 1;
    for (std::uint64_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
            format_error(origin, "shape overflows");
        }
        n *= d;
    }
    return n;
}

std::uint64_t as_u64(const json& j, const std::string& origin, const std::string& what) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
        format_error(origin, what + " must be a nonnegative integer");
    }
    return j.get<std::uint64_t>();
}

}  // namespace

std::string_view dtype_name(DType d) noexcept {
    return d == DType::F32 ? "F32" : "F64";
}

std::string encode_tensor_file(const TensorFile& file) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, arr] : file.arrays) {
        if (name == kMetadataKey) {
            fail(ErrorKind::InvalidArgument, "tensor name __metadata__ is reserved");
        }
        const std::uint64_t count = element_count(arr.shape, name);
        if (count != arr.data.size()) {
            fail(ErrorKind::ShapeMismatch, "tensor '" + name + "' data length does not match shape");
        }
        const std::uint64_t end = offset + count * dtype_width(arr.dtype);
        header[name] = {{"dtype", dtype_name(arr.dtype)},
                        {"shape", arr.shape},
                        {"data_offsets", {offset, end}}};
        offset = end;
    }
    if (!file.metadata.empty()) {
        header[kMetadataKey] = file.metadata;
    }
    std::string text = header.dump();
    // Pad with spaces so the payload starts 8-byte aligned.
    text.append((8 - text.size() % 8) % 8, ' ');

    std::string out;
    out.reserve(8 + text.size() + offset);
    put_le(out, text.size(), 8);
    out += text;
    for (const auto& [name, arr] : file.arrays) {
        for (double x : arr.data) {
            if (!std::isfinite(x)) {
                fail(ErrorKind::NonFinite, "tensor '" + name + "' contains NaN or Inf");
            }
            if (arr.dtype == DType::F32) {
                const float f = static_cast<float>(x);
                if (!std::isfinite(f)) {
                    fail(ErrorKind::NonFinite, "tensor '" + name + "' overflows binary32");
                }
                put_le(out, std::bit_cast<std::uint32_t>(f), 4);
            } else {
                put_le(out, std::bit_cast<std::uint64_t>(x), 8);
            }
        }
    }
    return out;
}

TensorFile decode_tensor_file(std::string_view bytes, const std::string& origin) {
    if (bytes.size() < 8) {
        format_error(origin, "truncated: missing header length");
    }
    const std::uint64_t header_len = get_le(bytes, 0, 8);
    if (header_len > kMaxHeaderBytes || header_len > bytes.size() - 8) {
        format_error(origin, "header length " + std::to_string(header_len) + " exceeds file size");
    }
    json header;
    try {
        header = json::parse(bytes.substr(8, header_len));
    } catch (const json::exception& e) {
        format_error(origin, std::string("malformed header: ") + e.what());
    }
    if (!header.is_object()) {
        format_error(origin, "header is not a JSON object");
    }

    const std::string_view payload = bytes.substr(8 + header_len);
    TensorFile file;
    struct Range {
        std::uint64_t begin;
        std::uint64_t end;
        const std::string* name;
    };
    std::vector<Range> ranges;

    for (auto it = header.begin(); it != header.end(); ++it) {
        const std::string& name = it.key();
        const json& entry = it.value();
        if (name == kMetadataKey) {
            if (!entry.is_object()) {
                format_error(origin, "__metadata__ must be an object");
            }
            for (auto m = entry.begin(); m != entry.end(); ++m) {
                if (!m.value().is_string()) {
                    format_error(origin, "__metadata__ values must be strings");
                }
                file.metadata[m.key()] = m.value().get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            format_error(origin, "entry '" + name + "' lacks dtype/shape/data_offsets");
        }
        const json& jd = entry["dtype"];
        const json& js = entry["shape"];
        const json& jo = entry["data_offsets"];
        if (!jd.is_string()) {
            format_error(origin, "entry '" + name + "' dtype is not a string");
        }
        StoredArray arr;
        const std::string dt = jd.get<std::string>();
        if (dt == "F32") {
            arr.dtype = DType::F32;
        } else if (dt == "F64") {
            arr.dtype = DType::F64;
        } else {
            format_error(origin, "entry '" + name + "' has unknown dtype '" + dt + "'");
        }
        if (!js.is_array() || !jo.is_array() || jo.size() != 2) {
            format_error(origin, "entry '" + name + "' has malformed shape or offsets");
        }
        for (const json& d : js) {
            arr.shape.push_back(as_u64(d, origin, "shape dimension"));
        }
        const std::uint64_t begin = as_u64(jo[0], origin, "data offset");
        const std::uint64_t end = as_u64(jo[1], origin, "data offset");
        if (begin > end || end > payload.size()) {
            format_error(origin, "entry '" + name + "' data range [" + std::to_string(begin) + ", " +
                                     std::to_string(end) + ") is out of bounds");
        }
        const std::uint64_t count = element_count(arr.shape, origin);
        const std::size_t width = dtype_width(arr.dtype);
        if (count > (end - begin) / width || count * width != end - begin) {
            format_error(origin, "entry '" + name + "' byte length does not match its shape");
        }
        arr.data.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint64_t raw = get_le(payload, begin + i * width, width);
            arr.data[i] = arr.dtype == DType::F32
                              ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(raw)))
                              : std::bit_cast<double>(raw);
        }
        auto [slot, inserted] = file.arrays.emplace(name, std::move(arr));
        ranges.push_back({begin, end, &slot->first});
    }

    std::sort(ranges.begin(), ranges.end(),
              [](const Range& a, const Range& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].begin < ranges[i - 1].end) {
            format_error(origin, "data ranges of '" + *ranges[i - 1].name + "' and '" +
                                     *ranges[i].name + "' overlap");
        }
    }
    return file;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        fail(ErrorKind::IoError, "read failed for '" + path.string() + "'");
    }
    return std::move(buf).str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(ErrorKind::IoError, "write failed for '" + path.string() + "'");
    }
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
    write_file_bytes(path, encode_tensor_file(file));
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
    return decode_tensor_file(read_file_bytes(path), path.string());
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".json";
    return p;
}

}  // namespace trajex
