// Minimal lossless 8-bit RGB PNG reader/writer (color type 2, no interlace).
// Pixels are quantized to 8 bits only at this boundary; write-then-read
// round-trips the quantized values exactly. Deflate is provided by zlib.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "dsdit/image.hpp"

namespace dsdit {

inline std::uint8_t quantize8(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return std::uint8_t(std::lround(c * 255.0));
}

inline std::vector<std::uint8_t> quantize_rgb8(const RasterImage& img) {
    std::vector<std::uint8_t> out(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) out[i] = quantize8(img.pixels[i]);
    return out;
}

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(std::uint8_t(x >> 24));
    v.push_back(std::uint8_t(x >> 16));
    v.push_back(std::uint8_t(x >> 8));
    v.push_back(std::uint8_t(x));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::uint8_t* data, std::size_t len) {
    put_u32_be(out, std::uint32_t(len));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + len);
    const std::uint32_t crc =
        std::uint32_t(::crc32(0, out.data() + type_at, uInt(4 + len)));
    put_u32_be(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace detail

inline void write_png(const std::string& path, const RasterImage& img) {
    const std::size_t h = img.height, w = img.width;
    const auto rgb = quantize_rgb8(img);

    // raw scanlines, filter 0 on every row
    std::vector<std::uint8_t> raw(h * (1 + 3 * w));
    for (std::size_t y = 0; y < h; ++y) {
        raw[y * (1 + 3 * w)] = 0;
        std::memcpy(raw.data() + y * (1 + 3 * w) + 1, rgb.data() + y * 3 * w, 3 * w);
    }

    uLongf comp_cap = ::compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> comp(comp_cap);
    if (::compress2(comp.data(), &comp_cap, raw.data(), uLong(raw.size()), 9) != Z_OK)
        throw IoError("png: deflate failed");
    comp.resize(comp_cap);

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);

    std::uint8_t ihdr[13];
    ihdr[0] = std::uint8_t(w >> 24); ihdr[1] = std::uint8_t(w >> 16);
    ihdr[2] = std::uint8_t(w >> 8);  ihdr[3] = std::uint8_t(w);
    ihdr[4] = std::uint8_t(h >> 24); ihdr[5] = std::uint8_t(h >> 16);
    ihdr[6] = std::uint8_t(h >> 8);  ihdr[7] = std::uint8_t(h);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: truecolor
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // interlace
    detail::append_chunk(out, "IHDR", ihdr, 13);
    detail::append_chunk(out, "IDAT", comp.data(), comp.size());
    detail::append_chunk(out, "IEND", nullptr, 0);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("png: cannot open for write: " + path);
    os.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!os) throw IoError("png: write failed: " + path);
}

inline RasterImage read_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("png: cannot open for read: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());

    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw IoError("png: bad signature: " + path);

    std::size_t pos = 8;
    std::size_t w = 0, h = 0;
    bool ihdr_seen = false, iend_seen = false;
    std::vector<std::uint8_t> idat;

    while (pos + 12 <= buf.size()) {
        const std::uint32_t len = detail::get_u32_be(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw IoError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const std::uint8_t* data = buf.data() + pos + 8;
        const std::uint32_t want_crc = detail::get_u32_be(data + len);
        const std::uint32_t got_crc =
            std::uint32_t(::crc32(0, buf.data() + pos + 4, uInt(4 + len)));
        if (want_crc != got_crc) throw IoError("png: chunk crc mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png: bad IHDR");
            w = detail::get_u32_be(data);
            h = detail::get_u32_be(data + 4);
            if (w == 0 || h == 0) throw IoError("png: zero dimension");
            if (data[8] != 8 || data[9] != 2 || data[10] != 0 || data[11] != 0 || data[12] != 0)
                throw IoError("png: unsupported layout (need 8-bit RGB, no interlace)");
            ihdr_seen = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!ihdr_seen) throw IoError("png: IDAT before IHDR");
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            iend_seen = true;
            break;
        }
        // ancillary chunks are skipped
        pos += 12 + len;
    }
    if (!ihdr_seen || !iend_seen || idat.empty()) throw IoError("png: missing chunks");

    const std::size_t stride = 1 + 3 * w;
    std::vector<std::uint8_t> raw(h * stride);
    uLongf raw_len = uLongf(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("png: inflate failed");

    // undo per-row filters
    std::vector<std::uint8_t> rgb(h * 3 * w);
    for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[y * stride];
        const std::uint8_t* src = raw.data() + y * stride + 1;
        std::uint8_t* dst = rgb.data() + y * 3 * w;
        const std::uint8_t* up = y > 0 ? rgb.data() + (y - 1) * 3 * w : nullptr;
        for (std::size_t i = 0; i < 3 * w; ++i) {
            const int left = i >= 3 ? dst[i - 3] : 0;
            const int above = up ? up[i] : 0;
            const int ul = (up && i >= 3) ? up[i - 3] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += above; break;
                case 3: v += (left + above) / 2; break;
                case 4: v += detail::paeth(left, above, ul); break;
                default: throw IoError("png: unknown filter type");
            }
            dst[i] = std::uint8_t(v & 0xff);
        }
    }

    RasterImage img(h, w);
    for (std::size_t i = 0; i < rgb.size(); ++i) img.pixels[i] = double(rgb[i]) / 255.0;
    return img;
}

} // namespace dsdit
