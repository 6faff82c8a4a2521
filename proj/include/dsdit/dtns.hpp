// Flat binary tensor container used for oracle fixtures and checkpoints:
// magic "DTNS", u32 rank, u64 extents, little-endian f64 payload.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dsdit/tensor.hpp"

namespace dsdit {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace detail {

template <class T>
inline void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
inline T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("truncated read: ") + what);
    return v;
}

} // namespace detail

inline void write_dtns(std::ostream& os, const Tensor& t) {
    os.write("DTNS", 4);
    detail::write_pod<std::uint32_t>(os, std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) detail::write_pod<std::uint64_t>(os, std::uint64_t(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(t.size() * sizeof(double)));
    if (!os) throw IoError("dtns write failed");
}

inline Tensor read_dtns(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DTNS", 4) != 0) throw IoError("bad DTNS magic");
    const auto rank = detail::read_pod<std::uint32_t>(is, "rank");
    if (rank > 8) throw IoError("DTNS rank out of range");
    Shape shape(rank);
    for (auto& d : shape) d = std::size_t(detail::read_pod<std::uint64_t>(is, "extent"));
    Tensor t(std::move(shape));
    is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
    if (!is) throw IoError("truncated DTNS payload");
    return t;
}

inline void write_dtns_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    write_dtns(os, t);
}

inline Tensor read_dtns_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    return read_dtns(is);
}

// FNV-1a, the digest used for checkpoint integrity and fixture manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace dsdit
