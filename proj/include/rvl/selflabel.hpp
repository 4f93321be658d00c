#pragma once

/**
 * @file selflabel.hpp
 * @brief Target self-coordinates from cross-modal attention, offset
 *        calibration, and assembly of the localiser training set.
 */

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rvl/common.hpp"
#include "rvl/dataset.hpp"
#include "rvl/radio_config.hpp"
#include "rvl/ssl.hpp"

namespace rvl {

enum class LabelSource { Attention, CfarGenie, FusionTeacher, Groundtruth };

inline std::string to_string(LabelSource s) {
    switch (s) {
        case LabelSource::Attention: return "attention";
        case LabelSource::CfarGenie: return "cfar_genie";
        case LabelSource::FusionTeacher: return "fusion_teacher";
        case LabelSource::Groundtruth: return "groundtruth";
    }
    return "?";
}

inline LabelSource parse_label_source(const std::string& s) {
    if (s == "attention") return LabelSource::Attention;
    if (s == "cfar_genie") return LabelSource::CfarGenie;
    if (s == "fusion_teacher") return LabelSource::FusionTeacher;
    if (s == "groundtruth") return LabelSource::Groundtruth;
    throw FormatError("label source: unknown value '" + s + "'");
}

struct SelfLabel {
    int id = 0;
    double range_est = 0.0;    ///< [m]
    double azimuth_est = 0.0;  ///< [deg]
    Bin heatmap_bin_est;
    LabelSource source = LabelSource::Attention;
    bool calibrated = false;
    bool operator==(const SelfLabel&) const = default;
};

struct Calibration {
    double range_offset = 0.0;    ///< [m], added to estimates
    double azimuth_offset = 0.0;  ///< [deg]
    int n_cal = 0;
};

/// Feature bin -> heatmap bin: idx * (H/h) + (H/h)/2, floored.
inline Bin rescale_bin(Bin feat, int h, int w, int H, int W) {
    const double sy = static_cast<double>(H) / h, sx = static_cast<double>(W) / w;
    return Bin{static_cast<int>(std::floor(feat.row * sy + 0.5 * sy)), static_cast<int>(std::floor(feat.col * sx + 0.5 * sx))};
}

/// Label from a precomputed attention map on an h x w grid.
inline SelfLabel label_from_attention(const ssl::AttentionMap& map, const RadioConfig& radio, int id) {
    if (map.data.empty()) throw DomainError("self_coordinates: empty attention map");
    auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
    if (!(*hi > *lo)) throw DomainError("self_coordinates: no attention peak (map is constant)");
    const int n = static_cast<int>(hi - map.data.begin());
    Bin b = rescale_bin(Bin{n / map.cols, n % map.cols}, map.rows, map.cols, radio.heatmap_rows, radio.heatmap_cols);
    SelfLabel l;
    l.id = id;
    l.heatmap_bin_est = b;
    l.range_est = radio.range_of_row(b.row);
    l.azimuth_est = radio.azimuth_of_col(b.col);
    l.source = LabelSource::Attention;
    return l;
}

/// Attention-maximising bin of one pair under a trained backbone.
inline SelfLabel self_coordinates(const ssl::SslModel& model, const ssl::SslSample& sample, const RadioConfig& radio) {
    auto [fr, tmpl] = ssl::encode_pair(model, sample);
    return label_from_attention(ssl::attention_map(fr, tmpl), radio, sample.id);
}

/// Median (groundtruth - estimate) per coordinate over a reference subset.
/// Kept only where it does not raise the median absolute error there.
inline Calibration calibrate(const std::vector<std::pair<SelfLabel, GroundTruth>>& reference, int min_size = 10) {
    if (static_cast<int>(reference.size()) < min_size)
        throw DomainError("calibrate: reference has " + std::to_string(reference.size()) + " pairs, need >= " +
                          std::to_string(min_size));
    std::vector<double> dr, da;
    for (const auto& [l, g] : reference) {
        dr.push_back(g.range - l.range_est);
        da.push_back(g.azimuth - l.azimuth_est);
    }
    // an offset that would raise the median |error| on the reference is dropped
    auto fit = [](const std::vector<double>& d) {
        const double m = median_of(d);
        std::vector<double> before, after;
        for (double x : d) {
            before.push_back(std::abs(x));
            after.push_back(std::abs(x - m));
        }
        return median_of(after) <= median_of(before) ? m : 0.0;
    };
    return Calibration{fit(dr), fit(da), static_cast<int>(reference.size())};
}

inline SelfLabel apply_calibration(SelfLabel l, const Calibration& cal, const RadioConfig& radio) {
    l.range_est += cal.range_offset;
    l.azimuth_est += cal.azimuth_offset;
    l.heatmap_bin_est = radio.bin_of(l.range_est, l.azimuth_est);
    l.calibrated = true;
    return l;
}

/// Localiser training record: heatmap plus the coordinates to regress.
struct LocRecord {
    int id = 0;
    Heatmap heatmap;
    double range = 0.0;
    double azimuth = 0.0;
};

/// Align labels with pairs by id; every pair needs a label.
inline std::vector<LocRecord> build_loc_dataset(const std::vector<RadioVisualPair>& pairs, const std::vector<SelfLabel>& labels) {
    std::map<int, const SelfLabel*> by_id;
    for (const auto& l : labels) by_id[l.id] = &l;
    std::vector<LocRecord> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        auto it = by_id.find(p.id);
        if (it == by_id.end()) throw ConsistencyError("build_loc_dataset: no label for pair id " + std::to_string(p.id));
        out.push_back(LocRecord{p.id, p.heatmap, it->second->range_est, it->second->azimuth_est});
    }
    return out;
}

inline SelfLabel groundtruth_label(const RadioVisualPair& p) {
    return SelfLabel{p.id, p.gt.range, p.gt.azimuth, p.gt.heatmap_bin, LabelSource::Groundtruth, false};
}

/// Euclidean (row, col) distance between an estimate and the groundtruth bin.
inline double bin_error(const SelfLabel& l, const GroundTruth& g) {
    return std::hypot(l.heatmap_bin_est.row - g.heatmap_bin.row, l.heatmap_bin_est.col - g.heatmap_bin.col);
}

// ---- CSV -------------------------------------------------------------------

inline void write_labels_csv(const std::string& path, const std::vector<SelfLabel>& labels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << "id,range_est,azimuth_est,source,calibrated,row,col\n";
    out.precision(17);
    for (const auto& l : labels)
        out << l.id << ',' << l.range_est << ',' << l.azimuth_est << ',' << to_string(l.source) << ','
            << (l.calibrated ? 1 : 0) << ',' << l.heatmap_bin_est.row << ',' << l.heatmap_bin_est.col << '\n';
}

inline std::vector<SelfLabel> read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("labels: missing file " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("id,range_est,azimuth_est,source,calibrated", 0) != 0) throw FormatError("labels: bad header in " + path);
    std::vector<SelfLabel> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[7];
        int n = 0;
        while (n < 7 && std::getline(ss, f[n], ',')) ++n;
        if (n < 5) throw FormatError("labels: line " + std::to_string(lineno) + " has too few fields");
        try {
            SelfLabel l;
            l.id = std::stoi(f[0]);
            l.range_est = std::stod(f[1]);
            l.azimuth_est = std::stod(f[2]);
            l.source = parse_label_source(f[3]);
            l.calibrated = f[4] == "1";
            if (n == 7) l.heatmap_bin_est = {std::stoi(f[5]), std::stoi(f[6])};
            out.push_back(l);
        } catch (const std::logic_error&) {
            throw FormatError("labels: malformed number on line " + std::to_string(lineno));
        }
    }
    return out;
}

}  // namespace rvl
