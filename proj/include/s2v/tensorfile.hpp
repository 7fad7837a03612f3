#pragma once

// Raw tensor container: 8-byte magic, u32 version, u32 dtype code, u64 rank,
// extents as little-endian u64, then the little-endian scalar payload.
// Round-trips must be bit-exact; readers validate the header before touching
// the payload.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v {

inline constexpr char kTensorMagic[8] = {'S', '2', 'V', 'T', 'E', 'N', 'S', '1'};
inline constexpr uint32_t kTensorFileVersion = 1;

enum class Dtype : uint32_t { f32 = 1, f64 = 2, u8 = 3 };

template <class S>
constexpr Dtype dtype_of() {
    if constexpr (std::is_same_v<S, float>) return Dtype::f32;
    else return Dtype::f64;
}

namespace detail {

// Little-endian writes; the build targets little-endian hosts and the
// serializer keeps the on-disk convention explicit either way.
inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}
inline uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

} // namespace detail

inline std::string tensor_header_bytes(Dtype dtype, const Shape& shape) {
    std::string out;
    out.append(kTensorMagic, 8);
    detail::put_u32(out, kTensorFileVersion);
    detail::put_u32(out, static_cast<uint32_t>(dtype));
    detail::put_u64(out, static_cast<uint64_t>(shape.size()));
    for (int64_t e : shape) detail::put_u64(out, static_cast<uint64_t>(e));
    return out;
}

template <class S>
std::string tensor_file_bytes(const Tensor<S>& t) {
    std::string out = tensor_header_bytes(dtype_of<S>(), t.shape());
    size_t payload = static_cast<size_t>(t.numel()) * sizeof(S);
    size_t off = out.size();
    out.resize(off + payload);
    std::memcpy(out.data() + off, t.data(), payload);
    return out;
}

template <class S>
void write_tensor_file(const Tensor<S>& t, const std::string& path) {
    detail::write_file_bytes(path, tensor_file_bytes(t));
}

// Binary masks are stored as u8 to keep corpora compact; in memory they are
// float 0/1 tensors.
inline void write_mask_file(const Tensor<float>& mask, const std::string& path) {
    std::string out = tensor_header_bytes(Dtype::u8, mask.shape());
    for (int64_t i = 0; i < mask.numel(); ++i) {
        out.push_back(mask[i] != 0.0f ? '\1' : '\0');
    }
    detail::write_file_bytes(path, out);
}

struct TensorFileHeader {
    Dtype dtype{};
    Shape shape;
    size_t payload_offset = 0;
    int64_t numel = 0;
};

inline TensorFileHeader parse_tensor_header(const std::string& bytes, const std::string& path) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kTensorMagic, 8) != 0) {
        throw std::runtime_error(path + ": bad magic at offset 0");
    }
    uint32_t version = detail::get_u32(p + 8);
    if (version != kTensorFileVersion) {
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version) +
                                 " at offset 8");
    }
    uint32_t dtype = detail::get_u32(p + 12);
    if (dtype < 1 || dtype > 3) {
        throw std::runtime_error(path + ": unknown dtype code " + std::to_string(dtype) +
                                 " at offset 12");
    }
    uint64_t rank = detail::get_u64(p + 16);
    if (rank > 8) {
        throw std::runtime_error(path + ": implausible rank " + std::to_string(rank) +
                                 " at offset 16");
    }
    size_t need = 24 + rank * 8;
    if (bytes.size() < need) {
        throw std::runtime_error(path + ": truncated header, expected " + std::to_string(need) +
                                 " bytes, got " + std::to_string(bytes.size()));
    }
    TensorFileHeader h;
    h.dtype = static_cast<Dtype>(dtype);
    h.numel = 1;
    for (uint64_t i = 0; i < rank; ++i) {
        int64_t e = static_cast<int64_t>(detail::get_u64(p + 24 + i * 8));
        h.shape.push_back(e);
        h.numel *= e;
    }
    h.payload_offset = need;
    return h;
}

inline size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::f32: return 4;
        case Dtype::f64: return 8;
        case Dtype::u8: return 1;
    }
    throw std::runtime_error("unreachable dtype");
}

template <class S>
Tensor<S> read_tensor_file(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    TensorFileHeader h = parse_tensor_header(bytes, path);
    if (h.dtype != dtype_of<S>()) {
        throw std::runtime_error(path + ": dtype code " + std::to_string(static_cast<int>(h.dtype)) +
                                 " does not match requested scalar type");
    }
    size_t expect = h.payload_offset + static_cast<size_t>(h.numel) * dtype_size(h.dtype);
    if (bytes.size() != expect) {
        throw std::runtime_error(path + ": payload length mismatch, expected " +
                                 std::to_string(expect) + " bytes, got " +
                                 std::to_string(bytes.size()));
    }
    Tensor<S> t(h.shape);
    std::memcpy(t.data(), bytes.data() + h.payload_offset, static_cast<size_t>(t.numel()) * sizeof(S));
    return t;
}

inline Tensor<float> read_mask_file(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    TensorFileHeader h = parse_tensor_header(bytes, path);
    if (h.dtype != Dtype::u8) {
        throw std::runtime_error(path + ": expected u8 mask payload");
    }
    size_t expect = h.payload_offset + static_cast<size_t>(h.numel);
    if (bytes.size() != expect) {
        throw std::runtime_error(path + ": payload length mismatch, expected " +
                                 std::to_string(expect) + " bytes, got " +
                                 std::to_string(bytes.size()));
    }
    Tensor<float> t(h.shape);
    for (int64_t i = 0; i < t.numel(); ++i) {
        t[i] = bytes[h.payload_offset + static_cast<size_t>(i)] ? 1.0f : 0.0f;
    }
    return t;
}

} // namespace s2v
