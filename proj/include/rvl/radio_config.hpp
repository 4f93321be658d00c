#pragma once

/**
 * @file radio_config.hpp
 * @brief OFDM radar parameters and the heatmap axis contract.
 *
 * The axis contract is shared by scene groundtruth, self-labelling and the
 * detection baselines:
 *   row i  <-> range   range_min + i * range_step,  range_step = span / rows
 *   col j  <-> azimuth -fov/2     + j * az_step,     az_step    = fov / cols
 * A coordinate maps to the nearest bin centre.
 */

#include <cmath>

#include "rvl/common.hpp"

namespace rvl {

struct RadioConfig {
    double bandwidth = 800e6;        ///< B [Hz]
    double carrier = 28e9;           ///< f_c [Hz]
    int n_sub = 256;                 ///< subcarriers
    int n_symb = 16;                 ///< OFDM symbols per frame
    double symbol_duration = 0.0;    ///< T_0 [s]; 0 selects 1/subcarrier_spacing
    int array_x = 16;                ///< azimuth elements
    int array_y = 16;                ///< elevation elements
    double element_spacing = 0.5;    ///< [wavelengths]
    double range_min = 6.0;          ///< [m]
    double range_max = 18.0;         ///< [m]
    int heatmap_rows = 480;
    int heatmap_cols = 640;
    double azimuth_fov = 90.0;       ///< [deg], heatmap spans +-fov/2
    double noise_sigma = 0.0;        ///< complex noise std per channel entry
    double c0 = kSpeedOfLight;
    /// Metadata only: nominal azimuth resolution quoted for a 16-element array.
    double azimuth_resolution_deg = 6.75;

    double subcarrier_spacing() const { return bandwidth / n_sub; }
    double symbol_time() const {
        return symbol_duration > 0.0 ? symbol_duration : 1.0 / subcarrier_spacing();
    }
    double range_resolution() const { return c0 / (2.0 * bandwidth); }
    double unambiguous_range() const { return n_sub * c0 / (2.0 * bandwidth); }
    int n_antennas() const { return array_x * array_y; }

    double range_span() const { return range_max - range_min; }
    double range_step() const { return range_span() / heatmap_rows; }
    double azimuth_min() const { return -0.5 * azimuth_fov; }
    double azimuth_step() const { return azimuth_fov / heatmap_cols; }

    void validate() const {
        require(bandwidth > 0.0, "radio.bandwidth", "must be > 0");
        require(carrier > 0.0, "radio.carrier", "must be > 0");
        require(n_sub >= 2, "radio.n_sub", "must be >= 2");
        require(n_symb >= 2, "radio.n_symb", "must be >= 2");
        require(array_x >= 1 && array_y >= 1, "radio.array", "antenna counts must be >= 1");
        require(element_spacing > 0.0, "radio.element_spacing", "must be > 0");
        require(range_min >= 0.0 && range_max > range_min, "radio.range_window",
                "need 0 <= min < max");
        require(range_max <= unambiguous_range(), "radio.range_window",
                "max exceeds unambiguous range N_sub*c0/(2B)");
        require(heatmap_rows > 0 && heatmap_cols > 0, "radio.heatmap_dims", "must be > 0");
        require(azimuth_fov > 0.0 && azimuth_fov < 180.0, "radio.azimuth_fov", "must be in (0,180)");
        require(noise_sigma >= 0.0, "radio.noise_sigma", "must be >= 0");
        require(symbol_duration >= 0.0, "radio.symbol_duration", "must be >= 0");
    }

    /// Table defaults scaled to desk size: 64x48 heatmap, one elevation row.
    static RadioConfig desk() {
        RadioConfig r;
        r.n_symb = 8;
        r.array_y = 1;
        r.heatmap_rows = 64;
        r.heatmap_cols = 48;
        return r;
    }

    // -- axis contract -----------------------------------------------------

    double range_of_row(double row) const { return range_min + row * range_step(); }
    double azimuth_of_col(double col) const { return azimuth_min() + col * azimuth_step(); }
    double row_of_range(double range) const { return (range - range_min) / range_step(); }
    double col_of_azimuth(double az_deg) const { return (az_deg - azimuth_min()) / azimuth_step(); }

    bool in_window(double range) const { return range >= range_min && range <= range_max; }

    /// Nearest heatmap bin, clamped to the grid.
    Bin bin_of(double range, double az_deg) const {
        int r = static_cast<int>(std::lround(row_of_range(range)));
        int c = static_cast<int>(std::lround(col_of_azimuth(az_deg)));
        return {std::clamp(r, 0, heatmap_rows - 1), std::clamp(c, 0, heatmap_cols - 1)};
    }
};

/// Delta r = c / (2B).
inline double range_resolution(double bandwidth_hz, double c0 = kSpeedOfLight) {
    if (!(bandwidth_hz > 0.0)) throw ConfigError("bandwidth: must be > 0");
    return c0 / (2.0 * bandwidth_hz);
}

}  // namespace rvl
