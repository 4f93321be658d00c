#pragma once

/**
 * @file scene.hpp
 * @brief Point-scatterer parking-lot scenes, flat-shaded camera rendering,
 *        groundtruth extraction and bounding-box masks.
 *
 * Frame: sensor at the origin, +y forward (boresight), +x to the right.
 * Azimuth is measured from +y, positive to the right.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rvl/common.hpp"
#include "rvl/radio_config.hpp"

namespace rvl {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Interval&) const = default;
};

struct SceneConfig {
    double extent_x = 16.0;               ///< scene box x in [-extent_x/2, extent_x/2] [m]
    double extent_y = 20.0;               ///< scene box y in [0, extent_y] [m]
    int n_clutter = 8;
    Interval clutter_amp_range{0.3, 0.7};
    double target_amp = 1.0;
    Interval target_speed_range{2.0, 8.0};  ///< [m/s], target drives towards +x
    double placement_sigma = 0.10;        ///< parked-car lateral jitter [m]
    std::uint64_t seed = 0;

    // Parking-lot layout.
    std::vector<double> parking_rows{8.0, 15.5};  ///< y of each row of slots [m]
    double slot_spacing = 2.5;                    ///< [m]
    Interval drivable_band{9.5, 14.0};            ///< target y range [m]
    double target_max_azimuth = 38.0;             ///< [deg]

    int slots_per_row() const { return static_cast<int>(std::floor(extent_x / slot_spacing)); }
    int n_slots() const { return slots_per_row() * static_cast<int>(parking_rows.size()); }

    void validate() const {
        require(extent_x > 0.0 && extent_y > 0.0, "scene.extent", "extents must be > 0");
        require(n_clutter >= 0, "scene.n_clutter", "must be >= 0");
        require(clutter_amp_range.lo >= 0.0 && clutter_amp_range.hi >= clutter_amp_range.lo,
                "scene.clutter_amp_range", "need 0 <= lo <= hi");
        require(target_amp >= 0.0, "scene.target_amp", "must be >= 0");
        require(target_speed_range.hi >= target_speed_range.lo, "scene.target_speed_range",
                "need lo <= hi");
        require(placement_sigma >= 0.0, "scene.placement_sigma", "must be >= 0");
        require(slot_spacing > 0.0, "scene.slot_spacing", "must be > 0");
        require(drivable_band.lo > 0.0 && drivable_band.hi >= drivable_band.lo &&
                    drivable_band.hi <= extent_y,
                "scene.drivable_band", "must lie inside (0, extent_y]");
        require(target_max_azimuth > 0.0 && target_max_azimuth < 90.0, "scene.target_max_azimuth",
                "must be in (0,90)");
        for (double y : parking_rows)
            require(y >= 0.0 && y <= extent_y, "scene.parking_rows", "row outside extent_y");
        require(n_clutter <= n_slots(), "scene.n_clutter",
                "extent cannot fit " + std::to_string(n_clutter) + " grid slots (have " +
                    std::to_string(n_slots()) + ")");
    }
};

struct Scatterer {
    double x = 0.0;
    double y = 0.0;
    double amplitude = 0.0;
    double radial_speed = 0.0;  ///< [m/s], positive receding
    bool is_target = false;

    double range() const { return std::hypot(x, y); }
    double azimuth_deg() const { return rad2deg(std::atan2(x, y)); }
    bool operator==(const Scatterer&) const = default;
};

struct Scene {
    std::vector<Scatterer> scatterers;
    SceneConfig config;
    std::uint64_t seed = 0;

    const Scatterer& target() const {
        for (const auto& s : scatterers)
            if (s.is_target) return s;
        throw DomainError("scene has no target scatterer");
    }
};

struct CameraModel {
    int image_width = 48;
    int image_height = 64;
    double horizontal_fov = 90.0;          ///< [deg]
    double target_pixel_size_at_1m = 60.0; ///< apparent size scales as 1/range
    double depth_min = 6.0;                ///< [m] range drawn at row 0
    double depth_max = 18.0;               ///< [m] range drawn at row image_height
    double noise_sigma = 0.0;              ///< additive pixel noise std (0 disables)
    std::uint64_t noise_seed = 0;

    double focal_px() const { return 0.5 * image_width / std::tan(deg2rad(0.5 * horizontal_fov)); }

    void validate() const {
        require(image_width > 0 && image_height > 0, "camera.dims", "must be > 0");
        require(horizontal_fov > 0.0 && horizontal_fov < 180.0, "camera.horizontal_fov",
                "must be in (0,180)");
        require(target_pixel_size_at_1m > 0.0, "camera.target_pixel_size_at_1m", "must be > 0");
        require(depth_max > depth_min, "camera.depth", "need depth_min < depth_max");
        require(noise_sigma >= 0.0, "camera.noise_sigma", "must be >= 0");
    }

    /// Pinhole column of an azimuth: W/2 * (1 + tan(az)/tan(fov/2)).
    double column_of(double az_deg) const {
        return 0.5 * image_width *
               (1.0 + std::tan(deg2rad(az_deg)) / std::tan(deg2rad(0.5 * horizontal_fov)));
    }
    /// Inverse pinhole mapping.
    double azimuth_of_column(double col) const {
        double t = (col / (0.5 * image_width) - 1.0) * std::tan(deg2rad(0.5 * horizontal_fov));
        return rad2deg(std::atan(t));
    }
    /// Image rows are a depth axis: linear in range over [depth_min, depth_max].
    double row_of(double range) const { return (range - depth_min) / (depth_max - depth_min) * image_height; }
    bool in_fov(double az_deg) const { return std::abs(az_deg) < 0.5 * horizontal_fov; }

    /// Inclusive pixel box of an object at (range, azimuth), not clipped.
    BBox project(double range, double az_deg) const {
        double size = target_pixel_size_at_1m / range;
        double cc = column_of(az_deg);
        double rc = row_of(range);
        BBox b;
        b.col_min = static_cast<int>(std::lround(cc - 0.5 * size));
        b.col_max = static_cast<int>(std::lround(cc + 0.5 * size)) - 1;
        b.row_min = static_cast<int>(std::lround(rc - 0.5 * size));
        b.row_max = static_cast<int>(std::lround(rc + 0.5 * size)) - 1;
        if (b.col_max < b.col_min) b.col_max = b.col_min;
        if (b.row_max < b.row_min) b.row_max = b.row_min;
        return b;
    }

    BBox clip(BBox b) const {
        b.col_min = std::max(b.col_min, 0);
        b.row_min = std::max(b.row_min, 0);
        b.col_max = std::min(b.col_max, image_width - 1);
        b.row_max = std::min(b.row_max, image_height - 1);
        return b;
    }
};

struct GroundTruth {
    double range = 0.0;        ///< [m]
    double azimuth = 0.0;      ///< [deg]
    BBox bbox;
    Bin heatmap_bin;
    bool operator==(const GroundTruth&) const = default;
};

// ---------------------------------------------------------------------------

inline Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    Scene scene;
    scene.config = config;
    scene.config.seed = seed;
    scene.seed = seed;

    const double half_x = 0.5 * config.extent_x;
    auto clamp_xy = [&](Scatterer& s) {
        s.x = std::clamp(s.x, -half_x, half_x);
        s.y = std::clamp(s.y, 0.0, config.extent_y);
    };

    // Parked cars occupy a random subset of the slot grid.
    const int per_row = config.slots_per_row();
    std::vector<int> slots(static_cast<std::size_t>(config.n_slots()));
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(static_cast<std::size_t>(config.n_clutter));
    std::sort(slots.begin(), slots.end());

    std::normal_distribution<double> jitter(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int slot : slots) {
        Scatterer s;
        int row = slot / per_row;
        int k = slot % per_row;
        s.x = -half_x + (k + 0.5) * config.slot_spacing;
        s.y = config.parking_rows[static_cast<std::size_t>(row)];
        double jx = jitter(rng);
        double jy = jitter(rng);
        s.x += config.placement_sigma * jx;
        s.y += config.placement_sigma * jy;
        s.amplitude = config.clutter_amp_range.lo +
                      (config.clutter_amp_range.hi - config.clutter_amp_range.lo) * unit(rng);
        clamp_xy(s);
        scene.scatterers.push_back(s);
    }

    Scatterer t;
    t.is_target = true;
    t.amplitude = config.target_amp;
    t.y = config.drivable_band.lo + (config.drivable_band.hi - config.drivable_band.lo) * unit(rng);
    double xmax = std::min(half_x, t.y * std::tan(deg2rad(config.target_max_azimuth)));
    t.x = -xmax + 2.0 * xmax * unit(rng);
    double speed = config.target_speed_range.lo +
                   (config.target_speed_range.hi - config.target_speed_range.lo) * unit(rng);
    // Velocity (speed, 0): radial component along the line of sight.
    t.radial_speed = speed * t.x / std::hypot(t.x, t.y);
    scene.scatterers.push_back(t);
    return scene;
}

namespace detail {
inline void fill_box(ImageGrid& img, const BBox& b, const float rgb[3]) {
    for (int c = 0; c < 3; ++c)
        for (int r = std::max(0, b.row_min); r <= std::min(img.rows - 1, b.row_max); ++r)
            for (int k = std::max(0, b.col_min); k <= std::min(img.cols - 1, b.col_max); ++k)
                img.at(c, r, k) = rgb[c];
}
}  // namespace detail

/// Flat-shaded render: far-to-near painter's order, clutter dimmer than target.
inline ImageGrid render_image(const Scene& scene, const CameraModel& cam) {
    cam.validate();
    const Scatterer& tgt = scene.target();
    if (!cam.in_fov(tgt.azimuth_deg()))
        throw DomainError("render_image: target azimuth " + std::to_string(tgt.azimuth_deg()) +
                          " deg outside camera fov");

    ImageGrid img(3, cam.image_height, cam.image_width, 0.08f);  // ground

    std::vector<const Scatterer*> order;
    for (const auto& s : scene.scatterers) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(),
                     [](const Scatterer* a, const Scatterer* b) { return a->range() > b->range(); });
    for (const Scatterer* s : order) {
        double az = s->azimuth_deg();
        if (!cam.in_fov(az)) continue;
        BBox b = cam.project(s->range(), az);
        if (s->is_target) {
            const float rgb[3] = {1.0f, 0.25f, 0.2f};
            detail::fill_box(img, b, rgb);
        } else {
            float a = static_cast<float>(0.35 + 0.3 * s->amplitude);
            const float rgb[3] = {0.35f * a, 0.45f * a, 0.8f * a};
            detail::fill_box(img, b, rgb);
        }
    }
    if (cam.noise_sigma > 0.0) {
        std::mt19937_64 rng(cam.noise_seed);
        std::normal_distribution<double> n(0.0, cam.noise_sigma);
        for (auto& v : img.data) v = static_cast<float>(v + n(rng));
    }
    return img;
}

inline GroundTruth groundtruth_of(const Scene& scene, const CameraModel& cam,
                                  const RadioConfig& radio) {
    const Scatterer& tgt = scene.target();
    GroundTruth gt;
    gt.range = tgt.range();
    gt.azimuth = tgt.azimuth_deg();
    if (!radio.in_window(gt.range))
        throw DomainError("groundtruth_of: target range " + std::to_string(gt.range) +
                          " m outside radar window");
    if (!cam.in_fov(gt.azimuth))
        throw DomainError("groundtruth_of: target not projectable under camera");
    gt.bbox = cam.clip(cam.project(gt.range, gt.azimuth));
    if (gt.bbox.empty()) throw DomainError("groundtruth_of: target bbox outside image");
    gt.heatmap_bin = radio.bin_of(gt.range, gt.azimuth);
    return gt;
}

/// gamma = 1 inside the padded (pad may be negative) box clipped to the image.
inline Mask mask_from_bbox(const BBox& bbox, int pad_pixels, int rows, int cols) {
    BBox b{bbox.col_min - pad_pixels, bbox.row_min - pad_pixels, bbox.col_max + pad_pixels,
           bbox.row_max + pad_pixels};
    b.col_min = std::max(b.col_min, 0);
    b.row_min = std::max(b.row_min, 0);
    b.col_max = std::min(b.col_max, cols - 1);
    b.row_max = std::min(b.row_max, rows - 1);
    if (b.empty()) throw DomainError("mask_from_bbox: box shrunk away (pad " +
                                     std::to_string(pad_pixels) + ")");
    Mask m(1, rows, cols, 0.0f);
    for (int r = b.row_min; r <= b.row_max; ++r)
        for (int k = b.col_min; k <= b.col_max; ++k) m.at(r, k) = 1.0f;
    return m;
}

/// Bounding box of the ones in a mask (empty box when the mask is all zero).
inline BBox mask_bbox(const Mask& m) {
    BBox b{m.cols, m.rows, -1, -1};
    for (int r = 0; r < m.rows; ++r)
        for (int k = 0; k < m.cols; ++k)
            if (m.at(r, k) > 0.5f) {
                b.col_min = std::min(b.col_min, k);
                b.col_max = std::max(b.col_max, k);
                b.row_min = std::min(b.row_min, r);
                b.row_max = std::max(b.row_max, r);
            }
    return b;
}

}  // namespace rvl
