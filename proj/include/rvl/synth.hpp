#pragma once

/**
 * @file synth.hpp
 * @brief One-call generation of a paired radio-visual record from a seed.
 */

#include <cstdint>

#include "rvl/dataset.hpp"
#include "rvl/radio.hpp"
#include "rvl/scene.hpp"

namespace rvl {

struct SynthConfig {
    SceneConfig scene;
    CameraModel camera;
    RadioConfig radio = RadioConfig::desk();
    int mask_pad = 5;            ///< pixels added around the groundtruth box
    std::uint64_t seed = 0;      ///< dataset-level seed; per-pair seeds derive from it

    void validate() const {
        scene.validate();
        camera.validate();
        radio.validate();
        require(camera.image_height == radio.heatmap_rows && camera.image_width == radio.heatmap_cols,
                "synth.dims", "image and heatmap must share H x W");
    }
};

/// splitmix64 finaliser; decorrelates consecutive ids.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t id) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (id + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline RadioVisualPair synthesize_pair(const SynthConfig& cfg, int id) {
    const std::uint64_t seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(id));
    Scene scene = generate_scene(cfg.scene, seed);
    CameraModel cam = cfg.camera;
    cam.noise_seed = mix_seed(seed, 1);
    RadioVisualPair p;
    p.id = id;
    p.seed = seed;
    p.gt = groundtruth_of(scene, cam, cfg.radio);
    p.image = render_image(scene, cam);
    p.heatmap = range_angle_heatmap(synth_channel(scene, cfg.radio, mix_seed(seed, 2)), cfg.radio);
    p.mask = mask_from_bbox(p.gt.bbox, cfg.mask_pad, cam.image_height, cam.image_width);
    return p;
}

}  // namespace rvl
