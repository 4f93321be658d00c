#pragma once

/**
 * @file radio.hpp
 * @brief OFDM radar channel synthesis, range-Doppler periodogram,
 *        range-azimuth heatmaps and the beam-blur model.
 */

#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "rvl/common.hpp"
#include "rvl/fft.hpp"
#include "rvl/radio_config.hpp"
#include "rvl/scene.hpp"

namespace rvl {

using cplx = std::complex<double>;

/// Channel estimates H^{k,n,a}: subcarrier k, symbol n, antenna a = iy*array_x + ix.
struct Channel {
    int n_sub = 0;
    int n_symb = 0;
    int n_ant = 0;
    std::vector<cplx> h;

    Channel() = default;
    Channel(int sub, int symb, int ant)
        : n_sub(sub), n_symb(symb), n_ant(ant),
          h(static_cast<std::size_t>(sub) * symb * ant, cplx{0.0, 0.0}) {}

    cplx& at(int k, int n, int a) {
        return h[(static_cast<std::size_t>(k) * n_symb + n) * n_ant + a];
    }
    const cplx& at(int k, int n, int a) const {
        return h[(static_cast<std::size_t>(k) * n_symb + n) * n_ant + a];
    }
};

/// Range-Doppler power map, row = range bin (N_sub), col = Doppler bin (N_symb).
struct RangeDoppler {
    int n_range = 0;
    int n_doppler = 0;
    std::vector<double> power;
    double at(int k, int n) const { return power[static_cast<std::size_t>(k) * n_doppler + n]; }
};

/**
 * @brief Synthesize the per-antenna OFDM channel of a scene.
 *
 * H^{k,n,a} = sum_l rho_l e^{j2pi n T0 f_l} e^{j2pi k d_l Df / c0} e^{j2pi s ix sin(phi_l)} + eta
 * with Doppler f_l = 2 v_l f_c / c0 and two-way path d_l = 2 R_l.
 */
inline Channel synth_channel(const Scene& scene, const RadioConfig& radio, std::uint64_t seed) {
    radio.validate();
    Channel ch(radio.n_sub, radio.n_symb, radio.n_antennas());
    const double df = radio.subcarrier_spacing();
    const double t0 = radio.symbol_time();
    const double two_pi = 2.0 * kPi;

    std::vector<cplx> ph_k(static_cast<std::size_t>(radio.n_sub));
    std::vector<cplx> ph_n(static_cast<std::size_t>(radio.n_symb));
    std::vector<cplx> ph_a(static_cast<std::size_t>(radio.n_antennas()));
    for (const auto& s : scene.scatterers) {
        const double range = s.range();
        if (range >= radio.unambiguous_range())
            throw DomainError("synth_channel: scatterer at " + std::to_string(range) +
                              " m beyond unambiguous range " +
                              std::to_string(radio.unambiguous_range()) + " m");
        if (!radio.in_window(range))
            throw DomainError("synth_channel: scatterer at " + std::to_string(range) +
                              " m outside range window");
        const double d = 2.0 * range;
        const double f_dopp = 2.0 * s.radial_speed * radio.carrier / radio.c0;
        const double sin_phi = std::sin(std::atan2(s.x, s.y));
        for (int k = 0; k < radio.n_sub; ++k)
            ph_k[static_cast<std::size_t>(k)] = std::polar(s.amplitude, two_pi * k * d * df / radio.c0);
        for (int n = 0; n < radio.n_symb; ++n)
            ph_n[static_cast<std::size_t>(n)] = std::polar(1.0, two_pi * n * t0 * f_dopp);
        for (int iy = 0; iy < radio.array_y; ++iy)
            for (int ix = 0; ix < radio.array_x; ++ix)
                ph_a[static_cast<std::size_t>(iy * radio.array_x + ix)] =
                    std::polar(1.0, two_pi * radio.element_spacing * ix * sin_phi);

        for (int k = 0; k < radio.n_sub; ++k)
            for (int n = 0; n < radio.n_symb; ++n) {
                const cplx kn = ph_k[static_cast<std::size_t>(k)] * ph_n[static_cast<std::size_t>(n)];
                cplx* row = &ch.at(k, n, 0);
                for (int a = 0; a < ch.n_ant; ++a) row[a] += kn * ph_a[static_cast<std::size_t>(a)];
            }
    }
    if (radio.noise_sigma > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, radio.noise_sigma / std::sqrt(2.0));
        for (auto& v : ch.h) {
            double re = g(rng);
            double im = g(rng);
            v += cplx{re, im};
        }
    }
    return ch;
}

/**
 * @brief Range-Doppler periodogram of one antenna.
 *
 * P[k][n] = | sum_m ( sum_p H^{p,m} e^{-j2pi p k / N_sub} ) e^{+j2pi m n / N_symb} |^2
 * computed with FFTs: forward over subcarriers, inverse-sign over symbols.
 */
inline RangeDoppler periodogram(const Channel& ch, int antenna_index) {
    if (ch.n_sub < 1 || ch.n_symb < 1 || ch.h.size() != static_cast<std::size_t>(ch.n_sub) * ch.n_symb * ch.n_ant)
        throw ShapeError("periodogram: malformed channel");
    if (antenna_index < 0 || antenna_index >= ch.n_ant)
        throw ShapeError("periodogram: antenna index out of range");
    std::vector<cplx> x(static_cast<std::size_t>(ch.n_sub) * ch.n_symb);
    for (int p = 0; p < ch.n_sub; ++p)
        for (int m = 0; m < ch.n_symb; ++m)
            x[static_cast<std::size_t>(p) * ch.n_symb + m] = ch.at(p, m, antenna_index);
    fft::transform_axis(x, ch.n_sub, ch.n_symb, 0, fft::Sign::Forward);
    fft::transform_axis(x, ch.n_sub, ch.n_symb, 1, fft::Sign::Backward);
    RangeDoppler out{ch.n_sub, ch.n_symb, std::vector<double>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) out.power[i] = std::norm(x[i]);
    return out;
}

/**
 * @brief Range-azimuth heatmap: coherent sum over symbols and elevation rows,
 *        zero-padded DFT over subcarriers for range, steered sum over the
 *        azimuth elements on a grid uniform in angle, magnitude squared.
 */
inline Heatmap range_angle_heatmap(const Channel& ch, const RadioConfig& radio) {
    radio.validate();
    if (ch.n_sub != radio.n_sub || ch.n_symb != radio.n_symb || ch.n_ant != radio.n_antennas())
        throw ShapeError("range_angle_heatmap: channel shape does not match radio config");
    if (radio.array_x < 2) throw ShapeError("range_angle_heatmap: need >= 2 azimuth elements");
    const int ax = radio.array_x;

    // Bin spacing of an L-point range DFT is dr * N_sub / L.
    const double dr = radio.range_resolution();
    const double step = radio.range_step();
    bool aligned = true;
    for (int i = 0; i < radio.heatmap_rows && aligned; ++i) {
        double b = radio.range_of_row(i) / dr;
        aligned = std::abs(b - std::round(b)) < 1e-9;
    }
    if (!aligned || step < dr - 1e-12) aligned = false;
    int upsample = 1;
    if (!aligned)
        while (dr / upsample > 0.25 * step) upsample *= 2;
    const int len = radio.n_sub * upsample;

    std::vector<cplx> x(static_cast<std::size_t>(len) * ax, cplx{0.0, 0.0});
    for (int p = 0; p < radio.n_sub; ++p)
        for (int n = 0; n < radio.n_symb; ++n)
            for (int iy = 0; iy < radio.array_y; ++iy)
                for (int ix = 0; ix < ax; ++ix)
                    x[static_cast<std::size_t>(p) * ax + ix] += ch.at(p, n, iy * ax + ix);
    fft::transform_axis(x, len, ax, 0, fft::Sign::Forward);

    const int rows = radio.heatmap_rows;
    const int cols = radio.heatmap_cols;
    std::vector<cplx> per_row(static_cast<std::size_t>(rows) * ax);
    for (int i = 0; i < rows; ++i) {
        double b = radio.range_of_row(i) / (dr * radio.n_sub / len);
        for (int ix = 0; ix < ax; ++ix) {
            cplx v;
            if (aligned) {
                int q = static_cast<int>(std::lround(b)) % len;
                v = x[static_cast<std::size_t>(q) * ax + ix];
            } else {
                int q0 = static_cast<int>(std::floor(b));
                double w = b - q0;
                int qa = ((q0 % len) + len) % len;
                int qb = (qa + 1) % len;
                v = (1.0 - w) * x[static_cast<std::size_t>(qa) * ax + ix] +
                    w * x[static_cast<std::size_t>(qb) * ax + ix];
            }
            per_row[static_cast<std::size_t>(i) * ax + ix] = v;
        }
    }

    std::vector<cplx> steer(static_cast<std::size_t>(cols) * ax);
    for (int j = 0; j < cols; ++j) {
        double s = std::sin(deg2rad(radio.azimuth_of_col(j)));
        for (int ix = 0; ix < ax; ++ix)
            steer[static_cast<std::size_t>(j) * ax + ix] =
                std::polar(1.0, -2.0 * kPi * radio.element_spacing * ix * s);
    }
    Heatmap hm(1, rows, cols, 0.0f);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            cplx acc{0.0, 0.0};
            for (int ix = 0; ix < ax; ++ix)
                acc += per_row[static_cast<std::size_t>(i) * ax + ix] *
                       steer[static_cast<std::size_t>(j) * ax + ix];
            hm.at(i, j) = static_cast<float>(std::norm(acc));
        }
    return hm;
}

// ---------------------------------------------------------------------------
// Beam blur: I'(x,y) = I(x,y) * h(x,y), h = exp(-(x^2+y^2)/(2w^2)).
// ---------------------------------------------------------------------------

struct BeamKernel {
    int radius = 0;
    double width_px = 0.0;
    std::vector<double> weights;  ///< (2r+1)^2, row-major, unit sum

    int size() const { return 2 * radius + 1; }
    double at(int dr, int dc) const {
        return weights[static_cast<std::size_t>((dr + radius) * size() + (dc + radius))];
    }
};

/// Gaussian beam with FWHM = delta_phi * pixels_per_degree, truncated at 3w.
inline BeamKernel beam_kernel(double delta_phi_deg, double pixels_per_degree,
                              std::optional<std::pair<int, int>> fit_within = std::nullopt) {
    if (!(delta_phi_deg > 0.0)) throw ConfigError("beam_kernel.delta_phi: must be > 0");
    if (!(pixels_per_degree > 0.0)) throw ConfigError("beam_kernel.pixels_per_degree: must be > 0");
    BeamKernel k;
    k.width_px = delta_phi_deg * pixels_per_degree / 2.355;
    k.radius = static_cast<int>(std::ceil(3.0 * k.width_px));
    if (fit_within && (k.size() > fit_within->first || k.size() > fit_within->second))
        throw ShapeError("beam_kernel: kernel of size " + std::to_string(k.size()) +
                         " larger than image");
    const int n = k.size();
    k.weights.resize(static_cast<std::size_t>(n) * n);
    double total = 0.0;
    const double two_w2 = 2.0 * k.width_px * k.width_px;
    for (int r = -k.radius; r <= k.radius; ++r)
        for (int c = -k.radius; c <= k.radius; ++c) {
            double v = std::exp(-(r * r + c * c) / two_w2);
            k.weights[static_cast<std::size_t>((r + k.radius) * n + (c + k.radius))] = v;
            total += v;
        }
    for (auto& v : k.weights) v /= total;
    return k;
}

namespace detail {
inline int reflect_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}
}  // namespace detail

/// Per-channel 2-D convolution with reflect padding (edge sample not repeated).
template <class Tag>
Planar<Tag> blur(const Planar<Tag>& image, const BeamKernel& kernel) {
    if (kernel.radius >= image.rows || kernel.radius >= image.cols)
        throw ShapeError("blur: kernel does not fit inside image");
    Planar<Tag> out(image.channels, image.rows, image.cols, 0.0f);
    const int r0 = kernel.radius;
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.rows; ++y)
            for (int x = 0; x < image.cols; ++x) {
                double acc = 0.0;
                for (int u = -r0; u <= r0; ++u) {
                    int yy = detail::reflect_index(y - u, image.rows);
                    for (int v = -r0; v <= r0; ++v) {
                        int xx = detail::reflect_index(x - v, image.cols);
                        acc += kernel.at(u, v) * image.at(c, yy, xx);
                    }
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
    return out;
}

/// Double-precision variant used where 1e-12 agreement is required.
inline std::vector<double> blur_plane(const std::vector<double>& plane, int rows, int cols,
                                      const BeamKernel& kernel) {
    if (kernel.radius >= rows || kernel.radius >= cols)
        throw ShapeError("blur: kernel does not fit inside image");
    if (plane.size() != static_cast<std::size_t>(rows) * cols) throw ShapeError("blur: plane size");
    std::vector<double> out(plane.size(), 0.0);
    const int r0 = kernel.radius;
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            double acc = 0.0;
            for (int u = -r0; u <= r0; ++u) {
                int yy = detail::reflect_index(y - u, rows);
                for (int v = -r0; v <= r0; ++v) {
                    int xx = detail::reflect_index(x - v, cols);
                    acc += kernel.at(u, v) * plane[static_cast<std::size_t>(yy) * cols + xx];
                }
            }
            out[static_cast<std::size_t>(y) * cols + x] = acc;
        }
    return out;
}

/// Generic-kernel variant of blur_plane (arbitrary odd square kernel).
inline std::vector<double> convolve_reflect(const std::vector<double>& plane, int rows, int cols,
                                            const std::vector<double>& kernel, int ksize) {
    BeamKernel k;
    k.radius = ksize / 2;
    k.weights = kernel;
    if (ksize % 2 == 0 || kernel.size() != static_cast<std::size_t>(ksize) * ksize)
        throw ShapeError("convolve_reflect: kernel must be odd and square");
    return blur_plane(plane, rows, cols, k);
}

}  // namespace rvl
