#pragma once

/**
 * @file experiment.hpp
 * @brief Experiment configuration (JSON), in-memory pipeline stages and sweeps.
 *
 * The CLI is a thin layer over these functions: every stage here takes the
 * configuration and in-memory data, so the same code runs from the command
 * line, from the acceptance harness and from tests.
 */

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "rvl/baselines.hpp"
#include "rvl/dataset.hpp"
#include "rvl/localiser.hpp"
#include "rvl/metrics.hpp"
#include "rvl/selflabel.hpp"
#include "rvl/ssl.hpp"
#include "rvl/synth.hpp"

namespace rvl {

// ---- configuration ---------------------------------------------------------

/// Centre jitter that gives mean IoU ~0.94 against groundtruth on desk-scale boxes.
inline constexpr double kDetectorJitterPx = 0.245;

/// Training-mask policy: margin around the groundtruth box and optional box jitter.
struct MaskConfig {
    std::optional<int> offset;  ///< [px] training-mask margin; unset uses synth.mask_pad
    double jitter_px = 0.0;     ///< box-centre jitter std; 0 disables all jitter
    double size_jitter = 0.1;   ///< relative box size jitter, uniform +-
};

struct SweepConfig {
    std::string kind = "mask_offset";  ///< mask_offset | label_density | dimensionality | mask_noise
    std::vector<double> grid{-2, 0, 2, 1000};
};

struct ExperimentConfig {
    SynthConfig synth;
    int n_train = 512;
    int n_val = 192;
    ssl::SslConfig ssl;
    int n_cal = 64;                      ///< calibration pairs drawn from the head of the training split; 0 disables
    LocaliserArch loc_arch;
    LocaliserConfig loc;
    std::string loc_labels = "MCL";      ///< supervised | CL | MCL | SCL | fusion
    int label_count = 0;                 ///< localiser training labels; 0 uses every training pair
    DetectorConfig detector;
    double fusion_gate_deg = 3.0;
    int n_bins = 32;
    MaskConfig mask;
    SweepConfig sweep;
    std::uint64_t seed = 0;

    /// Desk-scale toy defaults.
    ExperimentConfig() {
        synth.radio.noise_sigma = 1.0;
        ssl.lr = 2e-3;
        ssl.feature_pad = 0;
        ssl.projector_flatten = true;
        ssl.shared_projector = true;
        ssl.radio_arch.widths = ssl.vision_arch.widths = {32, 64};
    }

    /// One seed drives data, backbone and localiser.
    void apply_seed(std::uint64_t s) {
        seed = s;
        synth.seed = s;
        ssl.seed = s;
        loc.seed = s;
    }

    int height() const { return synth.radio.heatmap_rows; }
    int width() const { return synth.radio.heatmap_cols; }

    void validate() const {
        synth.validate();
        ssl.validate();
        loc.validate();
        LocaliserArch a = loc_arch;
        require(a.in_rows == height() && a.in_cols == width(), "localiser.input_dims", "must equal the heatmap dims");
        a.validate();
        detector.cfar.validate();
        require(n_train >= 2, "n_train", "must be >= 2");
        require(n_val >= 1, "n_val", "must be >= 1");
        require(n_cal >= 0 && n_cal <= n_train, "n_cal", "must be in [0, n_train]");
        require(n_cal == 0 || n_cal >= 10, "n_cal", "calibration needs >= 10 pairs (or 0 to disable)");
        require(label_count >= 0 && label_count <= n_train, "label_count", "must be in [0, n_train]");
        static const std::set<std::string> sources{"supervised", "CL", "MCL", "SCL", "fusion"};
        require(sources.count(loc_labels) == 1, "localiser.labels", "unknown label source '" + loc_labels + "'");
        require(fusion_gate_deg > 0, "fusion_gate_deg", "must be > 0");
        require(n_bins >= 2, "metrics.n_bins", "must be >= 2");
        require(mask.jitter_px >= 0, "mask.jitter_px", "must be >= 0");
        require(mask.size_jitter >= 0 && mask.size_jitter < 1, "mask.size_jitter", "must be in [0,1)");
        static const std::set<std::string> kinds{"mask_offset", "label_density", "dimensionality", "mask_noise"};
        require(kinds.count(sweep.kind) == 1, "sweep.kind", "unknown sweep '" + sweep.kind + "'");
    }
};

namespace cfgio {

using nlohmann::json;

/// Reads `key` into `v` when present; type errors name the dotted field.
template <class T>
void get(const json& j, const std::string& key, T& v, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        v = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + key + ": " + e.what());
    }
}

inline void known_keys(const json& j, std::initializer_list<const char*> keys, const std::string& path) {
    if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : path.substr(0, path.size() - 1)) +
                                          ": expected an object");
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* key : keys) ok = ok || k == key;
        if (!ok) throw ConfigError(path + k + ": unknown field");
    }
}

inline json interval(const Interval& i) { return json::array({i.lo, i.hi}); }
inline void interval(const json& j, const std::string& key, Interval& i, const std::string& path) {
    std::vector<double> v{i.lo, i.hi};
    get(j, key, v, path);
    if (v.size() != 2) throw ConfigError(path + key + ": expected [lo, hi]");
    i = {v[0], v[1]};
}

inline json to_json(const SceneConfig& s) {
    return {{"extent_x", s.extent_x}, {"extent_y", s.extent_y}, {"n_clutter", s.n_clutter},
            {"clutter_amp_range", interval(s.clutter_amp_range)}, {"target_amp", s.target_amp},
            {"target_speed_range", interval(s.target_speed_range)}, {"placement_sigma", s.placement_sigma},
            {"parking_rows", s.parking_rows}, {"slot_spacing", s.slot_spacing},
            {"drivable_band", interval(s.drivable_band)}, {"target_max_azimuth", s.target_max_azimuth}};
}
inline void from_json(const json& j, SceneConfig& s, const std::string& p) {
    known_keys(j, {"extent_x", "extent_y", "n_clutter", "clutter_amp_range", "target_amp", "target_speed_range",
                   "placement_sigma", "parking_rows", "slot_spacing", "drivable_band", "target_max_azimuth"}, p);
    get(j, "extent_x", s.extent_x, p);
    get(j, "extent_y", s.extent_y, p);
    get(j, "n_clutter", s.n_clutter, p);
    interval(j, "clutter_amp_range", s.clutter_amp_range, p);
    get(j, "target_amp", s.target_amp, p);
    interval(j, "target_speed_range", s.target_speed_range, p);
    get(j, "placement_sigma", s.placement_sigma, p);
    get(j, "parking_rows", s.parking_rows, p);
    get(j, "slot_spacing", s.slot_spacing, p);
    interval(j, "drivable_band", s.drivable_band, p);
    get(j, "target_max_azimuth", s.target_max_azimuth, p);
}

inline json to_json(const CameraModel& c) {
    return {{"image_width", c.image_width}, {"image_height", c.image_height}, {"horizontal_fov", c.horizontal_fov},
            {"target_pixel_size_at_1m", c.target_pixel_size_at_1m}, {"depth_min", c.depth_min},
            {"depth_max", c.depth_max}, {"noise_sigma", c.noise_sigma}};
}
inline void from_json(const json& j, CameraModel& c, const std::string& p) {
    known_keys(j, {"image_width", "image_height", "horizontal_fov", "target_pixel_size_at_1m", "depth_min", "depth_max",
                   "noise_sigma"}, p);
    get(j, "image_width", c.image_width, p);
    get(j, "image_height", c.image_height, p);
    get(j, "horizontal_fov", c.horizontal_fov, p);
    get(j, "target_pixel_size_at_1m", c.target_pixel_size_at_1m, p);
    get(j, "depth_min", c.depth_min, p);
    get(j, "depth_max", c.depth_max, p);
    get(j, "noise_sigma", c.noise_sigma, p);
}

inline json to_json(const RadioConfig& r) {
    return {{"bandwidth", r.bandwidth}, {"carrier", r.carrier}, {"n_sub", r.n_sub}, {"n_symb", r.n_symb},
            {"symbol_duration", r.symbol_duration}, {"array_x", r.array_x}, {"array_y", r.array_y},
            {"element_spacing", r.element_spacing}, {"range_min", r.range_min}, {"range_max", r.range_max},
            {"heatmap_rows", r.heatmap_rows}, {"heatmap_cols", r.heatmap_cols}, {"azimuth_fov", r.azimuth_fov},
            {"noise_sigma", r.noise_sigma}, {"c0", r.c0}};
}
inline void from_json(const json& j, RadioConfig& r, const std::string& p) {
    known_keys(j, {"bandwidth", "carrier", "n_sub", "n_symb", "symbol_duration", "array_x", "array_y", "element_spacing",
                   "range_min", "range_max", "heatmap_rows", "heatmap_cols", "azimuth_fov", "noise_sigma", "c0"}, p);
    get(j, "bandwidth", r.bandwidth, p);
    get(j, "carrier", r.carrier, p);
    get(j, "n_sub", r.n_sub, p);
    get(j, "n_symb", r.n_symb, p);
    get(j, "symbol_duration", r.symbol_duration, p);
    get(j, "array_x", r.array_x, p);
    get(j, "array_y", r.array_y, p);
    get(j, "element_spacing", r.element_spacing, p);
    get(j, "range_min", r.range_min, p);
    get(j, "range_max", r.range_max, p);
    get(j, "heatmap_rows", r.heatmap_rows, p);
    get(j, "heatmap_cols", r.heatmap_cols, p);
    get(j, "azimuth_fov", r.azimuth_fov, p);
    get(j, "noise_sigma", r.noise_sigma, p);
    get(j, "c0", r.c0, p);
}

inline json to_json(const ssl::BackboneArch& a) {
    return {{"widths", a.widths}, {"out_channels", a.out_channels}, {"kernel", a.kernel},
            {"coord_channels", a.coord_channels}, {"final_relu", a.final_relu}};
}
inline void from_json(const json& j, ssl::BackboneArch& a, const std::string& p) {
    known_keys(j, {"widths", "out_channels", "kernel", "coord_channels", "final_relu"}, p);
    get(j, "widths", a.widths, p);
    get(j, "out_channels", a.out_channels, p);
    get(j, "kernel", a.kernel, p);
    get(j, "coord_channels", a.coord_channels, p);
    get(j, "final_relu", a.final_relu, p);
}

inline json to_json(const ssl::SslConfig& c) {
    return {{"flavour", ssl::to_string(c.flavour)},
            {"temperature", c.temperature ? json(*c.temperature) : json(nullptr)},
            {"batch", c.batch}, {"queue_size", c.queue_size}, {"steps", c.steps}, {"lr", c.lr},
            {"feature_pad", c.feature_pad}, {"ema_enabled", c.ema_enabled}, {"ema_momentum", c.ema_momentum},
            {"embed_dim", c.embed_dim}, {"projector_hidden", c.projector_hidden},
            {"projector_flatten", c.projector_flatten}, {"shared_projector", c.shared_projector},
            {"radio_arch", to_json(c.radio_arch)}, {"vision_arch", to_json(c.vision_arch)}};
}
inline void from_json(const json& j, ssl::SslConfig& c, const std::string& p) {
    known_keys(j, {"flavour", "temperature", "batch", "queue_size", "steps", "lr", "feature_pad", "ema_enabled",
                   "ema_momentum", "embed_dim", "projector_hidden", "projector_flatten", "shared_projector",
                   "radio_arch", "vision_arch"}, p);
    if (j.contains("flavour")) {
        std::string f;
        get(j, "flavour", f, p);
        c.flavour = ssl::parse_flavour(f);
    }
    if (j.contains("temperature")) {
        if (j.at("temperature").is_null())
            c.temperature.reset();
        else {
            double t = 0;
            get(j, "temperature", t, p);
            c.temperature = t;
        }
    }
    get(j, "batch", c.batch, p);
    get(j, "queue_size", c.queue_size, p);
    get(j, "steps", c.steps, p);
    get(j, "lr", c.lr, p);
    get(j, "feature_pad", c.feature_pad, p);
    get(j, "ema_enabled", c.ema_enabled, p);
    get(j, "ema_momentum", c.ema_momentum, p);
    get(j, "embed_dim", c.embed_dim, p);
    get(j, "projector_hidden", c.projector_hidden, p);
    get(j, "projector_flatten", c.projector_flatten, p);
    get(j, "shared_projector", c.shared_projector, p);
    if (j.contains("radio_arch")) from_json(j.at("radio_arch"), c.radio_arch, p + "radio_arch.");
    if (j.contains("vision_arch")) from_json(j.at("vision_arch"), c.vision_arch, p + "vision_arch.");
    c.radio_arch.in_channels = 1;
    c.vision_arch.in_channels = 3;
}

inline json to_json(const LocaliserArch& a) {
    json convs = json::array();
    for (const auto& s : a.convs) convs.push_back({s.channels, s.kernel, s.stride});
    return {{"convs", convs}, {"hidden", a.hidden}};
}

inline json to_json(const ExperimentConfig& c) {
    json cfar = {{"guard_rows", c.detector.cfar.guard_rows}, {"guard_cols", c.detector.cfar.guard_cols},
                 {"train_rows", c.detector.cfar.train_rows}, {"train_cols", c.detector.cfar.train_cols},
                 {"pfa", c.detector.cfar.pfa},
                 {"alpha", c.detector.cfar.alpha ? json(*c.detector.cfar.alpha) : json(nullptr)}};
    return {{"seed", c.seed},
            {"synth", {{"scene", to_json(c.synth.scene)}, {"camera", to_json(c.synth.camera)},
                       {"radio", to_json(c.synth.radio)}, {"mask_pad", c.synth.mask_pad}}},
            {"n_train", c.n_train},
            {"n_val", c.n_val},
            {"ssl", to_json(c.ssl)},
            {"n_cal", c.n_cal},
            {"localiser", {{"arch", to_json(c.loc_arch)}, {"lr", c.loc.lr}, {"batch", c.loc.batch},
                           {"epochs", c.loc.epochs}, {"labels", c.loc_labels}, {"label_count", c.label_count}}},
            {"detector", {{"cfar", cfar}, {"eps", c.detector.eps}, {"min_pts", c.detector.min_pts},
                          {"fusion_gate_deg", c.fusion_gate_deg}}},
            {"metrics", {{"n_bins", c.n_bins}}},
            {"mask", {{"offset", c.mask.offset ? json(*c.mask.offset) : json(nullptr)},
                      {"jitter_px", c.mask.jitter_px}, {"size_jitter", c.mask.size_jitter}}},
            {"sweep", {{"kind", c.sweep.kind}, {"grid", c.sweep.grid}}}};
}

inline ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    known_keys(j, {"seed", "synth", "n_train", "n_val", "ssl", "n_cal", "localiser", "detector", "metrics", "mask", "sweep"},
               "");
    std::uint64_t seed = 0;
    get(j, "seed", seed, "");
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        known_keys(s, {"scene", "camera", "radio", "mask_pad"}, "synth.");
        if (s.contains("scene")) from_json(s.at("scene"), c.synth.scene, "synth.scene.");
        if (s.contains("camera")) from_json(s.at("camera"), c.synth.camera, "synth.camera.");
        if (s.contains("radio")) from_json(s.at("radio"), c.synth.radio, "synth.radio.");
        get(s, "mask_pad", c.synth.mask_pad, "synth.");
    }
    get(j, "n_train", c.n_train, "");
    get(j, "n_val", c.n_val, "");
    if (j.contains("ssl")) from_json(j.at("ssl"), c.ssl, "ssl.");
    get(j, "n_cal", c.n_cal, "");
    if (j.contains("localiser")) {
        const json& l = j.at("localiser");
        known_keys(l, {"arch", "lr", "batch", "epochs", "labels", "label_count"}, "localiser.");
        if (l.contains("arch")) {
            const json& a = l.at("arch");
            known_keys(a, {"convs", "hidden"}, "localiser.arch.");
            if (a.contains("convs")) {
                std::vector<std::vector<int>> convs;
                get(a, "convs", convs, "localiser.arch.");
                c.loc_arch.convs.clear();
                for (const auto& v : convs) {
                    if (v.size() != 3) throw ConfigError("localiser.arch.convs: each entry is [channels, kernel, stride]");
                    c.loc_arch.convs.push_back({v[0], v[1], v[2]});
                }
            }
            get(a, "hidden", c.loc_arch.hidden, "localiser.arch.");
        }
        get(l, "lr", c.loc.lr, "localiser.");
        get(l, "batch", c.loc.batch, "localiser.");
        get(l, "epochs", c.loc.epochs, "localiser.");
        get(l, "labels", c.loc_labels, "localiser.");
        get(l, "label_count", c.label_count, "localiser.");
    }
    if (j.contains("detector")) {
        const json& d = j.at("detector");
        known_keys(d, {"cfar", "eps", "min_pts", "fusion_gate_deg"}, "detector.");
        if (d.contains("cfar")) {
            const json& f = d.at("cfar");
            known_keys(f, {"guard_rows", "guard_cols", "train_rows", "train_cols", "pfa", "alpha"}, "detector.cfar.");
            auto& cf = c.detector.cfar;
            get(f, "guard_rows", cf.guard_rows, "detector.cfar.");
            get(f, "guard_cols", cf.guard_cols, "detector.cfar.");
            get(f, "train_rows", cf.train_rows, "detector.cfar.");
            get(f, "train_cols", cf.train_cols, "detector.cfar.");
            get(f, "pfa", cf.pfa, "detector.cfar.");
            if (f.contains("alpha") && !f.at("alpha").is_null()) {
                double a = 0;
                get(f, "alpha", a, "detector.cfar.");
                cf.alpha = a;
            }
        }
        get(d, "eps", c.detector.eps, "detector.");
        get(d, "min_pts", c.detector.min_pts, "detector.");
        get(d, "fusion_gate_deg", c.fusion_gate_deg, "detector.");
    }
    if (j.contains("metrics")) {
        known_keys(j.at("metrics"), {"n_bins"}, "metrics.");
        get(j.at("metrics"), "n_bins", c.n_bins, "metrics.");
    }
    if (j.contains("mask")) {
        const json& m = j.at("mask");
        known_keys(m, {"offset", "jitter_px", "size_jitter"}, "mask.");
        if (m.contains("offset") && !m.at("offset").is_null()) {
            int o = 0;
            get(m, "offset", o, "mask.");
            c.mask.offset = o;
        }
        get(m, "jitter_px", c.mask.jitter_px, "mask.");
        get(m, "size_jitter", c.mask.size_jitter, "mask.");
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        known_keys(s, {"kind", "grid"}, "sweep.");
        get(s, "kind", c.sweep.kind, "sweep.");
        get(s, "grid", c.sweep.grid, "sweep.");
    }
    c.apply_seed(seed);
    c.loc_arch.in_rows = c.height();
    c.loc_arch.in_cols = c.width();
    return c;
}

}  // namespace cfgio

inline ExperimentConfig load_config(const fs::path& path) {
    json j = detail::read_json(path, "config");
    return cfgio::from_json(j);
}

inline void save_config(const ExperimentConfig& c, const fs::path& path) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    detail::write_text(path, cfgio::to_json(c).dump(2) + "\n");
}

// ---- data ------------------------------------------------------------------

struct Split {
    std::vector<RadioVisualPair> train;
    std::vector<RadioVisualPair> val;
};

inline SplitSpec split_spec(const ExperimentConfig& c) {
    return SplitSpec{static_cast<double>(c.n_train) / (c.n_train + c.n_val), c.seed};
}

inline Split synthesize_split(const ExperimentConfig& c, const std::function<void(int, int)>& progress = {}) {
    c.synth.validate();
    const int n = c.n_train + c.n_val;
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    auto [tr, va] = make_splits(ids, split_spec(c));
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    Split s;
    int done = 0;
    for (int id : tr) {
        s.train.push_back(synthesize_pair(c.synth, id));
        if (progress) progress(++done, n);
    }
    for (int id : va) {
        s.val.push_back(synthesize_pair(c.synth, id));
        if (progress) progress(++done, n);
    }
    return s;
}

/// Records plus index.json and split.json under `root`.
inline void write_split(const Split& s, const fs::path& root, const ExperimentConfig& c) {
    std::vector<int> ids, tr, va;
    for (const auto& p : s.train) {
        write_pair(p, root);
        tr.push_back(p.id);
    }
    for (const auto& p : s.val) {
        write_pair(p, root);
        va.push_back(p.id);
    }
    ids = tr;
    ids.insert(ids.end(), va.begin(), va.end());
    std::sort(ids.begin(), ids.end());
    write_index(root, ids, cfgio::to_json(c));
    detail::write_text(root / "split.json", json{{"train", tr}, {"val", va}}.dump() + "\n");
}

inline Split read_split(const fs::path& root) {
    if (!fs::exists(root / "index.json"))
        throw NotFoundError("dataset: no dataset at " + root.string() + " (run `rvl synth` with the same --out first)");
    json j = detail::read_json(root / "split.json", "dataset split");
    Split s;
    try {
        for (int id : j.at("train").get<std::vector<int>>()) s.train.push_back(read_pair(root, id));
        for (int id : j.at("val").get<std::vector<int>>()) s.val.push_back(read_pair(root, id));
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset split: ") + e.what());
    }
    return s;
}

// ---- mask views ------------------------------------------------------------

inline double iou(const BBox& a, const BBox& b) {
    const int w = std::min(a.col_max, b.col_max) - std::max(a.col_min, b.col_min) + 1;
    const int h = std::min(a.row_max, b.row_max) - std::max(a.row_min, b.row_min) + 1;
    const double inter = std::max(0, w) * std::max(0, h);
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Detector-like box noise: centre Normal(0, sigma_px), size scaled by U(1 - s, 1 + s). Identity at sigma 0.
inline BBox jitter_bbox(const BBox& b, double sigma_px, double size_jitter, std::uint64_t seed, int rows, int cols) {
    if (sigma_px <= 0 || b.empty()) return b;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> shift(0.0, sigma_px);
    std::uniform_real_distribution<double> scale(1.0 - size_jitter, 1.0 + size_jitter);
    const double cx = 0.5 * (b.col_min + b.col_max + 1) + shift(rng);
    const double cy = 0.5 * (b.row_min + b.row_max + 1) + shift(rng);
    const double w = b.width() * scale(rng), h = b.height() * scale(rng);
    BBox o{static_cast<int>(std::lround(cx - 0.5 * w)), static_cast<int>(std::lround(cy - 0.5 * h)),
           static_cast<int>(std::lround(cx + 0.5 * w)) - 1, static_cast<int>(std::lround(cy + 0.5 * h)) - 1};
    o.col_max = std::max(o.col_max, o.col_min);
    o.row_max = std::max(o.row_max, o.row_min);
    o.col_min = std::clamp(o.col_min, 0, cols - 1);
    o.col_max = std::clamp(o.col_max, 0, cols - 1);
    o.row_min = std::clamp(o.row_min, 0, rows - 1);
    o.row_max = std::clamp(o.row_max, 0, rows - 1);
    return o;
}

/// Box grown by `margin` px; a negative margin shrinks it, never below the centre pixel.
inline Mask margin_mask(const BBox& b, int margin, int rows, int cols) {
    if (margin >= 0) return mask_from_bbox(b, margin, rows, cols);
    const int shrink = std::min({-margin, (b.width() - 1) / 2, (b.height() - 1) / 2});
    BBox s{b.col_min + shrink, b.row_min + shrink, b.col_max - shrink, b.row_max - shrink};
    return mask_from_bbox(s, 0, rows, cols);
}

inline BBox vision_box(const RadioVisualPair& p, const ExperimentConfig& c) {
    return jitter_bbox(p.gt.bbox, c.mask.jitter_px, c.mask.size_jitter, mix_seed(c.seed ^ 0x6a09e667f3bcc909ULL, p.id),
                       p.mask.rows, p.mask.cols);
}

/// Sample seen by the backbone during training (mask margin from the sweep offset).
inline ssl::SslSample training_view(const RadioVisualPair& p, const ExperimentConfig& c) {
    ssl::SslSample s = ssl::prepare_sample(p);
    Mask m = margin_mask(vision_box(p, c), c.mask.offset.value_or(c.synth.mask_pad), p.mask.rows, p.mask.cols);
    s.mask.assign(m.data.begin(), m.data.end());
    s.mask_box = mask_bbox(m);
    return s;
}

/// Sample used for self-labelling: the standard margin around the (possibly jittered) box.
inline ssl::SslSample inference_view(const RadioVisualPair& p, const ExperimentConfig& c) {
    ssl::SslSample s = ssl::prepare_sample(p);
    Mask m = margin_mask(vision_box(p, c), c.synth.mask_pad, p.mask.rows, p.mask.cols);
    s.mask.assign(m.data.begin(), m.data.end());
    s.mask_box = mask_bbox(m);
    return s;
}

// ---- stages ----------------------------------------------------------------

using Logger = std::function<void(const std::string&)>;

inline ssl::TrainResult run_backbone(const ExperimentConfig& c, const std::vector<RadioVisualPair>& train,
                                     const std::function<void(int, double)>& on_step = {}) {
    std::vector<ssl::SslSample> samples;
    samples.reserve(train.size());
    for (const auto& p : train) samples.push_back(training_view(p, c));
    return ssl::train_backbone(c.ssl, samples, c.height(), c.width(), on_step);
}

struct SelfLabelRun {
    std::vector<SelfLabel> raw;
    std::vector<SelfLabel> labels;  ///< calibrated when n_cal > 0
    Calibration cal;
    std::vector<double> bin_errors;  ///< calibrated labels vs groundtruth, calibration pairs excluded
};

inline SelfLabelRun run_self_label(const ExperimentConfig& c, const ssl::SslModel& model,
                                   const std::vector<RadioVisualPair>& train) {
    SelfLabelRun r;
    for (const auto& p : train) r.raw.push_back(self_coordinates(model, inference_view(p, c), c.synth.radio));
    r.labels = r.raw;
    if (c.n_cal > 0) {
        std::vector<std::pair<SelfLabel, GroundTruth>> ref;
        for (int i = 0; i < c.n_cal; ++i) ref.push_back({r.raw[static_cast<std::size_t>(i)], train[static_cast<std::size_t>(i)].gt});
        r.cal = calibrate(ref);
        for (auto& l : r.labels) l = apply_calibration(l, r.cal, c.synth.radio);
    }
    const std::size_t first = static_cast<std::size_t>(c.n_cal) < train.size() ? static_cast<std::size_t>(c.n_cal) : 0;
    for (std::size_t i = first; i < train.size(); ++i) r.bin_errors.push_back(bin_error(r.labels[i], train[i].gt));
    return r;
}

/// Camera/radar fusion teacher labels for the training split.
inline std::vector<SelfLabel> run_fusion_labels(const ExperimentConfig& c, const std::vector<RadioVisualPair>& train) {
    std::vector<SelfLabel> out;
    for (const auto& p : train) {
        auto dets = detect(p.heatmap, c.detector, c.synth.radio);
        out.push_back(fusion_teacher(vision_box(p, c), dets, c.synth.camera, p.heatmap, c.synth.radio, p.id, c.fusion_gate_deg));
    }
    return out;
}

inline std::vector<SelfLabel> groundtruth_labels(const std::vector<RadioVisualPair>& pairs) {
    std::vector<SelfLabel> out;
    for (const auto& p : pairs) out.push_back(groundtruth_label(p));
    return out;
}

/// Localiser on the first `label_count` training pairs (all when 0).
inline LocaliserResult run_localiser(const ExperimentConfig& c, const std::vector<RadioVisualPair>& train,
                                     const std::vector<SelfLabel>& labels, const std::function<void(int, double)>& on_epoch = {}) {
    std::vector<RadioVisualPair> used(train.begin(), train.begin() + (c.label_count > 0 ? c.label_count : static_cast<int>(train.size())));
    return train_localiser(build_loc_dataset(used, labels), c.loc_arch, c.synth.radio, c.loc, on_epoch);
}

struct MethodResult {
    MetricsRow row;
    std::vector<int> ids;
    std::vector<std::pair<double, double>> preds;  ///< (range m, azimuth deg)
    std::vector<double> errors;                    ///< [m]
    int misses = 0;
};

inline MetricsRow score(const std::string& name, const ExperimentConfig& c, const std::vector<double>& errors,
                        const std::vector<double>& gr, const std::vector<double>& er, const std::vector<double>& ga,
                        const std::vector<double>& ea) {
    const auto& r = c.synth.radio;
    return evaluate_method(name, errors, gr, er, ga, ea, r.range_min, r.range_max, r.azimuth_min(),
                           r.azimuth_min() + r.azimuth_fov, c.n_bins);
}

inline MethodResult evaluate_localiser(const std::string& name, const ExperimentConfig& c, const Localiser& net,
                                       const std::vector<RadioVisualPair>& val) {
    MethodResult m;
    std::vector<double> gr, er, ga, ea;
    for (std::size_t i = 0; i < val.size(); i += 64) {
        std::vector<const Heatmap*> hms;
        for (std::size_t k = i; k < std::min(val.size(), i + 64); ++k) hms.push_back(&val[k].heatmap);
        auto preds = net.predict_batch(hms);
        m.preds.insert(m.preds.end(), preds.begin(), preds.end());
    }
    for (std::size_t i = 0; i < val.size(); ++i) {
        const auto& g = val[i].gt;
        m.ids.push_back(val[i].id);
        m.errors.push_back(location_error(g.range, g.azimuth, m.preds[i].first, m.preds[i].second));
        gr.push_back(g.range);
        ga.push_back(g.azimuth);
        er.push_back(m.preds[i].first);
        ea.push_back(m.preds[i].second);
    }
    m.row = score(name, c, m.errors, gr, er, ga, ea);
    return m;
}

/// Genie-aided CFAR on the validation split. A miss scores the range-window span as its error
/// and is left out of the distribution metrics.
inline MethodResult evaluate_cfar_genie(const ExperimentConfig& c, const std::vector<RadioVisualPair>& val,
                                        std::vector<std::pair<int, std::vector<Detection>>>* detections = nullptr) {
    MethodResult m;
    std::vector<double> gr, er, ga, ea;
    for (const auto& p : val) {
        auto dets = detect(p.heatmap, c.detector, c.synth.radio);
        bool missed = false;
        SelfLabel l = genie_label(dets, p.gt, p.id, missed);
        m.ids.push_back(p.id);
        if (missed) {
            ++m.misses;
            m.preds.push_back({NAN, NAN});
            m.errors.push_back(c.synth.radio.range_span());
        } else {
            m.preds.push_back({l.range_est, l.azimuth_est});
            m.errors.push_back(location_error(p.gt.range, p.gt.azimuth, l.range_est, l.azimuth_est));
            gr.push_back(p.gt.range);
            ga.push_back(p.gt.azimuth);
            er.push_back(l.range_est);
            ea.push_back(l.azimuth_est);
        }
        if (detections) detections->push_back({p.id, std::move(dets)});
    }
    if (gr.size() < 2) throw DomainError("cfar_genie: fewer than 2 detected validation pairs");
    m.row = score("CFAR-genie", c, m.errors, gr, er, ga, ea);
    return m;
}

// ---- full pipeline and sweeps ------------------------------------------------

struct PipelineResult {
    std::vector<double> ssl_losses;
    SelfLabelRun self_labels;
    MethodResult eval;
};

/// Backbone -> self-labels -> localiser -> validation metrics, for the configured flavour.
inline PipelineResult run_pipeline(const ExperimentConfig& c, const Split& s, const Logger& log = {}) {
    PipelineResult r;
    if (log) log("train backbone (" + ssl::to_string(c.ssl.flavour) + ", " + std::to_string(c.ssl.steps) + " steps)");
    auto tr = run_backbone(c, s.train);
    r.ssl_losses = tr.losses;
    if (log) log("self-label " + std::to_string(s.train.size()) + " pairs");
    r.self_labels = run_self_label(c, tr.model, s.train);
    if (log) log("train localiser");
    auto loc = run_localiser(c, s.train, r.self_labels.labels);
    r.eval = evaluate_localiser(ssl::to_string(c.ssl.flavour), c, loc.net, s.val);
    return r;
}

struct SweepRow {
    double setting = 0.0;
    MetricsRow metrics;
};

/// Config for one grid point of a sweep.
inline ExperimentConfig sweep_point(const ExperimentConfig& base, const std::string& kind, double v) {
    ExperimentConfig c = base;
    if (kind == "mask_offset") {
        c.mask.offset = static_cast<int>(std::lround(v));
    } else if (kind == "label_density") {
        c.label_count = static_cast<int>(std::lround(v));
    } else if (kind == "dimensionality") {
        c.ssl.radio_arch.out_channels = c.ssl.vision_arch.out_channels = static_cast<int>(std::lround(v));
    } else if (kind == "mask_noise") {
        c.mask.jitter_px = v;
    } else {
        throw ConfigError("sweep.kind: unknown sweep '" + kind + "'");
    }
    c.validate();
    return c;
}

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const Split& s, const Logger& log = {}) {
    if (base.sweep.grid.empty()) throw ConfigError("sweep.grid: empty grid");
    std::vector<SweepRow> rows;
    for (double v : base.sweep.grid) {
        ExperimentConfig c = sweep_point(base, base.sweep.kind, v);
        if (log) log(base.sweep.kind + " = " + std::to_string(v));
        rows.push_back({v, run_pipeline(c, s, log).eval.row});
    }
    return rows;
}

inline void write_sweep_csv(const std::string& path, const std::string& kind, const std::vector<SweepRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << kind << ",p50,p90,D_W_range,D_W_angle\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.setting << ',' << r.metrics.p50 << ',' << r.metrics.p90 << ',' << r.metrics.dw_range << ','
            << r.metrics.dw_angle << '\n';
}

inline void write_losses_csv(const std::string& path, const std::vector<double>& losses) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << "step,loss\n";
    out.precision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

}  // namespace rvl
