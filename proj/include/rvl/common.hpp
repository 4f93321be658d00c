#pragma once

/**
 * @file common.hpp
 * @brief Error types, physical constants and the planar array containers
 *        shared by every rvl module.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rvl {

/// Speed of light convention used throughout (c_0).
inline constexpr double kSpeedOfLight = 3.0e8;
inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Errors. The CLI maps ConfigError to exit code 2 and everything else to 3.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Array shapes that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Corrupt or inconsistent on-disk data.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Manifest and payload disagree (dims, ids).
class ConsistencyError : public FormatError {
public:
    using FormatError::FormatError;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Non-finite values in a computation that must stay finite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Domain precondition failures (target outside the radar window, etc.).
class DomainError : public Error {
public:
    using Error::Error;
};

inline void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field + ": " + what);
}

// ---------------------------------------------------------------------------
// Planar arrays: channels x rows x cols, row-major, 32-bit storage so that
// the on-disk round trip is bitwise exact.
// ---------------------------------------------------------------------------

template <class Tag>
struct Planar {
    int channels = 0;
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Planar() = default;
    Planar(int c, int r, int k, float fill = 0.0f)
        : channels(c), rows(r), cols(k), data(static_cast<std::size_t>(c) * r * k, fill) {
        if (c <= 0 || r <= 0 || k <= 0) throw ShapeError("planar array dims must be positive");
    }

    std::size_t index(int c, int r, int k) const {
        return (static_cast<std::size_t>(c) * rows + r) * cols + k;
    }
    float& at(int c, int r, int k) { return data[index(c, r, k)]; }
    float at(int c, int r, int k) const { return data[index(c, r, k)]; }
    float& at(int r, int k) { return data[index(0, r, k)]; }
    float at(int r, int k) const { return data[index(0, r, k)]; }

    std::size_t size() const { return data.size(); }
    bool same_dims(const Planar& o) const {
        return channels == o.channels && rows == o.rows && cols == o.cols;
    }
    bool operator==(const Planar& o) const = default;
};

struct HeatmapTag;
struct ImageTag;
struct MaskTag;

/// Range-azimuth power map (1 channel). Row i <-> range, col j <-> azimuth.
using Heatmap = Planar<HeatmapTag>;
/// Vision image, 3 channels, values nominally in [0, 1].
using ImageGrid = Planar<ImageTag>;
/// Target mask gamma, 1 channel, entries in {0, 1}.
using Mask = Planar<MaskTag>;

/// Integer (row, col) bin on a 2-D grid.
struct Bin {
    int row = 0;
    int col = 0;
    bool operator==(const Bin&) const = default;
};

/// Inclusive pixel bounding box.
struct BBox {
    int col_min = 0;
    int row_min = 0;
    int col_max = 0;
    int row_max = 0;

    int width() const { return col_max - col_min + 1; }
    int height() const { return row_max - row_min + 1; }
    int area() const { return std::max(0, width()) * std::max(0, height()); }
    bool empty() const { return col_max < col_min || row_max < row_min; }
    bool operator==(const BBox&) const = default;
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw DomainError("median of empty sample");
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    double hi = v[n / 2];
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + n / 2);
    return 0.5 * (lo + hi);
}

}  // namespace rvl
