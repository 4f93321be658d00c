#pragma once

/**
 * @file dataset.hpp
 * @brief Paired radio-visual records: on-disk layout, splits and batching.
 *
 * A dataset directory holds one sub-directory per record
 * (`<root>/<id:06>/`) with `manifest.json`, `heatmap.rvhm`, `image.rvhm`
 * and `mask.rvhm`, plus an `index.json` listing the ids.
 */

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rvl/common.hpp"
#include "rvl/rvhm.hpp"
#include "rvl/scene.hpp"

namespace rvl {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct RadioVisualPair {
    int id = 0;
    Heatmap heatmap;
    ImageGrid image;
    Mask mask;
    GroundTruth gt;
    std::uint64_t seed = 0;

    bool operator==(const RadioVisualPair&) const = default;
};

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

inline fs::path record_dir(const fs::path& root, int id) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << id;
    return root / name.str();
}

namespace detail {

inline json dims_json(int c, int r, int k) { return json::array({c, r, k}); }

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
}

inline json read_json(const fs::path& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw NotFoundError(what + ": missing file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(what + ": invalid JSON (" + e.what() + ")");
    }
}

template <class Tag>
void check_dims(const Planar<Tag>& p, const json& dims, const std::string& field) {
    if (!dims.is_array() || dims.size() != 3 || dims[0].get<int>() != p.channels ||
        dims[1].get<int>() != p.rows || dims[2].get<int>() != p.cols)
        throw ConsistencyError(field + ": manifest dims " + dims.dump() + " do not match payload [" +
                               std::to_string(p.channels) + "," + std::to_string(p.rows) + "," +
                               std::to_string(p.cols) + "]");
}

}  // namespace detail

inline json manifest_of(const RadioVisualPair& p) {
    return json{
        {"id", p.id},
        {"heatmap_dims", detail::dims_json(p.heatmap.channels, p.heatmap.rows, p.heatmap.cols)},
        {"image_dims", detail::dims_json(p.image.channels, p.image.rows, p.image.cols)},
        {"mask_dims", detail::dims_json(p.mask.channels, p.mask.rows, p.mask.cols)},
        {"range_m", p.gt.range},
        {"azimuth_deg", p.gt.azimuth},
        {"bbox", json::array({p.gt.bbox.col_min, p.gt.bbox.row_min, p.gt.bbox.col_max, p.gt.bbox.row_max})},
        {"heatmap_bin", json::array({p.gt.heatmap_bin.row, p.gt.heatmap_bin.col})},
        {"seed", p.seed},
    };
}

inline void write_pair(const RadioVisualPair& pair, const fs::path& root) {
    fs::path dir = record_dir(root, pair.id);
    fs::create_directories(dir);
    rvhm::write_file(dir / "heatmap.rvhm", rvhm::from_planar(pair.heatmap));
    rvhm::write_file(dir / "image.rvhm", rvhm::from_planar(pair.image));
    rvhm::write_file(dir / "mask.rvhm", rvhm::from_planar(pair.mask));
    detail::write_text(dir / "manifest.json", manifest_of(pair).dump(2) + "\n");
}

inline RadioVisualPair read_pair(const fs::path& root, int id) {
    fs::path dir = record_dir(root, id);
    if (!fs::is_directory(dir)) throw NotFoundError("record " + std::to_string(id) + ": missing " + dir.string());
    json m = detail::read_json(dir / "manifest.json", "manifest");
    RadioVisualPair p;
    try {
        p.id = m.at("id").get<int>();
        p.gt.range = m.at("range_m").get<double>();
        p.gt.azimuth = m.at("azimuth_deg").get<double>();
        const json& b = m.at("bbox");
        p.gt.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
        const json& hb = m.at("heatmap_bin");
        p.gt.heatmap_bin = {hb.at(0).get<int>(), hb.at(1).get<int>()};
        p.seed = m.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    if (p.id != id) throw ConsistencyError("manifest: id " + std::to_string(p.id) + " != directory id " + std::to_string(id));
    p.heatmap = rvhm::to_planar<HeatmapTag>(rvhm::read_file(dir / "heatmap.rvhm", "heatmap"), "heatmap");
    p.image = rvhm::to_planar<ImageTag>(rvhm::read_file(dir / "image.rvhm", "image"), "image");
    p.mask = rvhm::to_planar<MaskTag>(rvhm::read_file(dir / "mask.rvhm", "mask"), "mask");
    detail::check_dims(p.heatmap, m.at("heatmap_dims"), "heatmap");
    detail::check_dims(p.image, m.at("image_dims"), "image");
    if (m.contains("mask_dims")) detail::check_dims(p.mask, m.at("mask_dims"), "mask");
    if (p.image.rows != p.mask.rows || p.image.cols != p.mask.cols)
        throw ConsistencyError("mask: dims do not match image");
    return p;
}

/// Write index.json listing ids plus an arbitrary config snapshot.
inline void write_index(const fs::path& root, const std::vector<int>& ids, const json& config) {
    fs::create_directories(root);
    detail::write_text(root / "index.json", json{{"ids", ids}, {"config", config}}.dump(2) + "\n");
}

inline std::vector<int> read_index(const fs::path& root) {
    json j = detail::read_json(root / "index.json", "dataset index");
    try {
        return j.at("ids").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset index: ") + e.what());
    }
}

/// Disjoint, exhaustive, seeded shuffle; |train| = round(fraction * N).
inline std::pair<std::vector<int>, std::vector<int>> make_splits(std::vector<int> ids, const SplitSpec& spec) {
    require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0, "split.train_fraction", "must be in (0,1)");
    if (ids.size() < 2) throw DomainError("make_splits: need at least 2 ids");
    std::mt19937_64 rng(spec.seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(ids.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
    std::vector<int> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<int> valid(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    return {train, valid};
}

/// Seeded permutation cut into full batches; the partial tail is dropped.
inline std::vector<std::vector<int>> batches(std::vector<int> ids, int batch_size, std::uint64_t epoch_seed) {
    require(batch_size >= 2, "batch_size", "must be >= 2 (contrastive losses need a negative)");
    if (static_cast<std::size_t>(batch_size) > ids.size())
        throw ConfigError("batch_size: " + std::to_string(batch_size) + " exceeds dataset size " +
                          std::to_string(ids.size()));
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(batch_size) <= ids.size(); i += static_cast<std::size_t>(batch_size))
        out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                         ids.begin() + static_cast<std::ptrdiff_t>(i + static_cast<std::size_t>(batch_size)));
    return out;
}

}  // namespace rvl
