#pragma once

/**
 * @file rvhm.hpp
 * @brief RVHM array container: little-endian float32 tensors with a small header.
 *
 * Layout (all integers u32 little-endian):
 *   bytes  0..3   magic "RVHM"
 *   bytes  4..7   version (1)
 *   bytes  8..11  ndim
 *   bytes 12..15  reserved (0)
 *   then ndim dims, then prod(dims) float32 values, row-major.
 */

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rvl/common.hpp"

namespace rvl::rvhm {

inline constexpr char kMagic[4] = {'R', 'V', 'H', 'M'};
inline constexpr std::uint32_t kVersion = 1;

struct Array {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
    bool operator==(const Array&) const = default;
};

namespace detail {
static_assert(std::endian::native == std::endian::little, "RVHM codec assumes a little-endian host");

inline void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}
}  // namespace detail

inline std::string encode(const Array& a) {
    if (a.values.size() != a.count()) throw ShapeError("rvhm: values do not match dims");
    std::string buf;
    buf.reserve(16 + 4 * a.dims.size() + 4 * a.values.size());
    buf.append(kMagic, 4);
    detail::put_u32(buf, kVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(a.dims.size()));
    detail::put_u32(buf, 0);
    for (auto d : a.dims) detail::put_u32(buf, d);
    const auto* p = reinterpret_cast<const char*>(a.values.data());
    buf.append(p, a.values.size() * sizeof(float));
    return buf;
}

/// Decode; `field` names the payload in error messages.
inline Array decode(const std::string& buf, const std::string& field) {
    auto fail = [&](const std::string& why) { return FormatError(field + ": " + why); };
    if (buf.size() < 16) throw fail("truncated header");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw fail("bad magic");
    std::uint32_t version, ndim, reserved;
    std::memcpy(&version, buf.data() + 4, 4);
    std::memcpy(&ndim, buf.data() + 8, 4);
    std::memcpy(&reserved, buf.data() + 12, 4);
    if (version != kVersion) throw fail("unsupported version " + std::to_string(version));
    if (ndim == 0 || ndim > 8) throw fail("bad ndim " + std::to_string(ndim));
    if (buf.size() < 16 + 4ull * ndim) throw fail("truncated dims");
    Array a;
    a.dims.resize(ndim);
    std::memcpy(a.dims.data(), buf.data() + 16, 4ull * ndim);
    const std::size_t n = a.count();
    const std::size_t expect = 16 + 4ull * ndim + 4ull * n;
    if (buf.size() < expect) throw fail("truncated payload");
    if (buf.size() > expect) throw fail("trailing bytes after payload");
    a.values.resize(n);
    std::memcpy(a.values.data(), buf.data() + 16 + 4ull * ndim, 4ull * n);
    return a;
}

inline void write_file(const std::filesystem::path& path, const Array& a) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("rvhm: cannot open " + path.string() + " for writing");
    std::string buf = encode(a);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("rvhm: write failed for " + path.string());
}

inline Array read_file(const std::filesystem::path& path, const std::string& field) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError(field + ": missing file " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(buf, field);
}

template <class Tag>
Array from_planar(const Planar<Tag>& p) {
    return Array{{static_cast<std::uint32_t>(p.channels), static_cast<std::uint32_t>(p.rows),
                  static_cast<std::uint32_t>(p.cols)},
                 p.data};
}

template <class Tag>
Planar<Tag> to_planar(Array a, const std::string& field) {
    if (a.dims.size() != 3) throw FormatError(field + ": expected 3 dims");
    Planar<Tag> p;
    p.channels = static_cast<int>(a.dims[0]);
    p.rows = static_cast<int>(a.dims[1]);
    p.cols = static_cast<int>(a.dims[2]);
    p.data = std::move(a.values);
    return p;
}

}  // namespace rvl::rvhm
