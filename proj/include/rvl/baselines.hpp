#pragma once

/**
 * @file baselines.hpp
 * @brief Statistical detection chain (CA-CFAR, DBSCAN, centroids, genie
 *        selection) and a camera-radar fusion teacher.
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rvl/common.hpp"
#include "rvl/radio_config.hpp"
#include "rvl/scene.hpp"
#include "rvl/selflabel.hpp"

namespace rvl {

/// alpha = N (P_fa^{-1/N} - 1): cell-averaging scale under exponential noise.
inline double alpha_for_pfa(double pfa, int n_train) {
    if (!(pfa > 0.0 && pfa < 1.0)) throw ConfigError("cfar.pfa: must be in (0,1), got " + std::to_string(pfa));
    if (n_train < 1) throw ConfigError("cfar: need at least one training cell");
    return n_train * (std::pow(pfa, -1.0 / n_train) - 1.0);
}

struct CfarConfig {
    int guard_rows = 1;
    int guard_cols = 1;
    int train_rows = 4;
    int train_cols = 4;
    std::optional<double> alpha;  ///< overrides pfa when set
    double pfa = 1e-3;

    int window_rows() const { return 2 * (guard_rows + train_rows) + 1; }
    int window_cols() const { return 2 * (guard_cols + train_cols) + 1; }
    int n_train() const { return window_rows() * window_cols() - (2 * guard_rows + 1) * (2 * guard_cols + 1); }
    double scale() const { return alpha ? *alpha : alpha_for_pfa(pfa, n_train()); }

    void validate() const {
        require(guard_rows >= 0 && guard_cols >= 0, "cfar.guard", "must be >= 0");
        require(train_rows >= 1 && train_cols >= 1, "cfar.train", "must be >= 1");
        require(scale() > 1.0, "cfar.alpha", "must be > 1");
    }
};

/// Row-major detection bitmap.
struct DetectionMap {
    int rows = 0;
    int cols = 0;
    std::vector<unsigned char> hits;
    bool at(int r, int c) const { return hits[static_cast<std::size_t>(r) * cols + c] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(hits.begin(), hits.end(), 1)); }
};

namespace detail {

/// (rows+1) x (cols+1) summed-area table.
inline std::vector<double> integral_image(const Heatmap& hm) {
    const int R = hm.rows, C = hm.cols;
    std::vector<double> s(static_cast<std::size_t>(R + 1) * (C + 1), 0.0);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            s[(r + 1) * (C + 1) + c + 1] = hm.at(r, c) + s[r * (C + 1) + c + 1] + s[(r + 1) * (C + 1) + c] - s[r * (C + 1) + c];
    return s;
}

/// Sum and cell count over the clipped box [r0, r1] x [c0, c1].
inline std::pair<double, int> box_sum(const std::vector<double>& s, int R, int C, int r0, int r1, int c0, int c1) {
    r0 = std::max(r0, 0);
    c0 = std::max(c0, 0);
    r1 = std::min(r1, R - 1);
    c1 = std::min(c1, C - 1);
    if (r1 < r0 || c1 < c0) return {0.0, 0};
    const int W = C + 1;
    double v = s[(r1 + 1) * W + c1 + 1] - s[r0 * W + c1 + 1] - s[(r1 + 1) * W + c0] + s[r0 * W + c0];
    return {v, (r1 - r0 + 1) * (c1 - c0 + 1)};
}

}  // namespace detail

/// Cell flagged iff value > alpha * (mean of training ring + 1e-12). Windows are clipped at the borders.
inline DetectionMap ca_cfar_2d(const Heatmap& hm, const CfarConfig& cfg) {
    cfg.validate();
    if (hm.channels != 1) throw ShapeError("ca_cfar_2d: heatmap must have one channel");
    if (cfg.window_rows() > hm.rows || cfg.window_cols() > hm.cols)
        throw DomainError("ca_cfar_2d: window " + std::to_string(cfg.window_rows()) + "x" + std::to_string(cfg.window_cols()) +
                          " does not fit the " + std::to_string(hm.rows) + "x" + std::to_string(hm.cols) + " heatmap");
    constexpr double eps = 1e-12;
    const double alpha = cfg.scale();
    const int R = hm.rows, C = hm.cols;
    const int wr = cfg.guard_rows + cfg.train_rows, wc = cfg.guard_cols + cfg.train_cols;
    auto s = detail::integral_image(hm);
    DetectionMap out{R, C, std::vector<unsigned char>(static_cast<std::size_t>(R) * C, 0)};
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            auto [sw, nw] = detail::box_sum(s, R, C, r - wr, r + wr, c - wc, c + wc);
            auto [sg, ng] = detail::box_sum(s, R, C, r - cfg.guard_rows, r + cfg.guard_rows, c - cfg.guard_cols, c + cfg.guard_cols);
            const int n = nw - ng;
            const double mean = n > 0 ? std::max(sw - sg, 0.0) / n : 0.0;
            if (hm.at(r, c) > alpha * (mean + eps)) out.hits[static_cast<std::size_t>(r) * C + c] = 1;
        }
    return out;
}

struct BinPoint {
    int row = 0;
    int col = 0;
    double value = 0.0;
};

inline std::vector<BinPoint> points_of(const DetectionMap& m, const Heatmap& hm) {
    std::vector<BinPoint> pts;
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            if (m.at(r, c)) pts.push_back({r, c, hm.at(r, c)});
    return pts;
}

/// Labels per point: cluster id >= 0 or -1 for noise. Neighbourhoods include the point itself.
inline std::vector<int> dbscan(const std::vector<BinPoint>& pts, double eps, int min_pts) {
    require(eps > 0.0, "dbscan.eps", "must be > 0");
    require(min_pts >= 1, "dbscan.min_pts", "must be >= 1");
    const std::size_t n = pts.size();
    auto neighbours = [&](std::size_t i) {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < n; ++j)
            if (std::hypot(pts[i].row - pts[j].row, pts[i].col - pts[j].col) <= eps) out.push_back(j);
        return out;
    };
    constexpr int unvisited = -2;
    std::vector<int> label(n, unvisited);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != unvisited) continue;
        auto nb = neighbours(i);
        if (static_cast<int>(nb.size()) < min_pts) {
            label[i] = -1;
            continue;
        }
        const int id = next++;
        label[i] = id;
        std::vector<std::size_t> frontier(nb.begin(), nb.end());
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            std::size_t j = frontier[f];
            if (label[j] == -1) label[j] = id;  // border point
            if (label[j] != unvisited) continue;
            label[j] = id;
            auto nj = neighbours(j);
            if (static_cast<int>(nj.size()) >= min_pts) frontier.insert(frontier.end(), nj.begin(), nj.end());
        }
    }
    return label;
}

struct Detection {
    Bin bin;                  ///< rounded centroid bin
    double value = 0.0;       ///< peak heatmap value in the cluster
    int cluster = -1;
    double row = 0.0;         ///< fractional centroid
    double col = 0.0;
    double range = 0.0;       ///< [m]
    double azimuth = 0.0;     ///< [deg]
};

/// Value-weighted mean bin per cluster (plain mean if all weights are zero).
inline std::vector<Detection> centroids(const std::vector<BinPoint>& pts, const std::vector<int>& labels, const RadioConfig& radio) {
    if (labels.size() != pts.size()) throw ShapeError("centroids: labels and points differ in length");
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    std::vector<double> w(k, 0.0), wr(k, 0.0), wc(k, 0.0), peak(k, -INFINITY);
    std::vector<int> n(k, 0);
    std::vector<double> ur(k, 0.0), uc(k, 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const int l = labels[i];
        if (l < 0) continue;
        w[l] += pts[i].value;
        wr[l] += pts[i].value * pts[i].row;
        wc[l] += pts[i].value * pts[i].col;
        ur[l] += pts[i].row;
        uc[l] += pts[i].col;
        ++n[l];
        peak[l] = std::max(peak[l], pts[i].value);
    }
    std::vector<Detection> out;
    for (int l = 0; l < k; ++l) {
        if (n[l] == 0) continue;
        Detection d;
        d.cluster = l;
        d.value = peak[l];
        d.row = w[l] > 0 ? wr[l] / w[l] : ur[l] / n[l];
        d.col = w[l] > 0 ? wc[l] / w[l] : uc[l] / n[l];
        d.bin = {std::clamp(static_cast<int>(std::lround(d.row)), 0, radio.heatmap_rows - 1),
                 std::clamp(static_cast<int>(std::lround(d.col)), 0, radio.heatmap_cols - 1)};
        d.range = radio.range_of_row(d.row);
        d.azimuth = radio.azimuth_of_col(d.col);
        out.push_back(d);
    }
    return out;
}

struct DetectorConfig {
    CfarConfig cfar;
    double eps = 1.5;  ///< [bins]
    int min_pts = 1;
};

/// CFAR -> DBSCAN -> centroids on one heatmap.
inline std::vector<Detection> detect(const Heatmap& hm, const DetectorConfig& cfg, const RadioConfig& radio) {
    auto pts = points_of(ca_cfar_2d(hm, cfg.cfar), hm);
    return centroids(pts, dbscan(pts, cfg.eps, cfg.min_pts), radio);
}

/// Distance in (range, arc length) space: points are (r, r * az[rad]).
inline double genie_distance(double r1, double az1_deg, double r2, double az2_deg) {
    return std::hypot(r1 - r2, r1 * deg2rad(az1_deg) - r2 * deg2rad(az2_deg));
}

/// Detection closest to groundtruth; ties go to the larger value, then the lower row. nullopt is a miss.
inline std::optional<Detection> genie_select(const std::vector<Detection>& dets, const GroundTruth& gt) {
    std::optional<Detection> best;
    double best_d = INFINITY;
    for (const auto& d : dets) {
        const double dist = genie_distance(d.range, d.azimuth, gt.range, gt.azimuth);
        bool take = !best || dist < best_d;
        if (best && dist == best_d)
            take = d.value > best->value || (d.value == best->value && d.bin.row < best->bin.row);
        if (take) {
            best = d;
            best_d = dist;
        }
    }
    return best;
}

inline SelfLabel genie_label(const std::vector<Detection>& dets, const GroundTruth& gt, int id, bool& missed) {
    auto d = genie_select(dets, gt);
    missed = !d;
    SelfLabel l;
    l.id = id;
    l.source = LabelSource::CfarGenie;
    if (d) {
        l.range_est = d->range;
        l.azimuth_est = d->azimuth;
        l.heatmap_bin_est = d->bin;
    }
    return l;
}

/// Vision azimuth from the box centre; nearest CFAR centroid within +-gate_deg, else the brightest row of that column.
inline SelfLabel fusion_teacher(const BBox& bbox, const std::vector<Detection>& dets, const CameraModel& cam,
                                const Heatmap& hm, const RadioConfig& radio, int id, double gate_deg = 3.0) {
    if (bbox.empty()) throw DomainError("fusion_teacher: empty bounding box");
    const double centre = 0.5 * (bbox.col_min + bbox.col_max + 1);
    const double az = cam.azimuth_of_column(centre);
    SelfLabel l;
    l.id = id;
    l.source = LabelSource::FusionTeacher;
    const Detection* best = nullptr;
    for (const auto& d : dets) {
        const double gap = std::abs(d.azimuth - az);
        if (gap <= gate_deg && (!best || gap < std::abs(best->azimuth - az))) best = &d;
    }
    if (best) {
        l.range_est = best->range;
        l.azimuth_est = best->azimuth;
        l.heatmap_bin_est = best->bin;
        return l;
    }
    const int col = radio.bin_of(radio.range_min, az).col;
    int row = 0;
    for (int r = 1; r < hm.rows; ++r)
        if (hm.at(r, col) > hm.at(row, col)) row = r;
    l.azimuth_est = az;
    l.range_est = radio.range_of_row(row);
    l.heatmap_bin_est = {row, col};
    return l;
}

inline void write_detections_csv(const std::string& path, const std::vector<std::pair<int, std::vector<Detection>>>& per_id) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << "id,row,col,range,azimuth,cluster,value\n";
    out.precision(17);
    for (const auto& [id, dets] : per_id)
        for (const auto& d : dets)
            out << id << ',' << d.bin.row << ',' << d.bin.col << ',' << d.range << ',' << d.azimuth << ',' << d.cluster << ','
                << d.value << '\n';
}

}  // namespace rvl
