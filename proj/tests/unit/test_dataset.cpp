#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <cstring>
#include <numeric>
#include <set>

#include "rvl/dataset.hpp"

using namespace rvl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("rvl_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RadioVisualPair random_pair(int id, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    RadioVisualPair p;
    p.id = id;
    p.seed = seed;
    p.heatmap = Heatmap(1, 16, 12);
    p.image = ImageGrid(3, 16, 12);
    for (auto& v : p.heatmap.data) v = g(rng);
    for (auto& v : p.image.data) v = g(rng);
    p.mask = mask_from_bbox(BBox{2, 3, 5, 7}, 1, 16, 12);
    p.gt.range = 11.123456789012345;
    p.gt.azimuth = -17.000000000000004;
    p.gt.bbox = BBox{2, 3, 5, 7};
    p.gt.heatmap_bin = {4, 9};
    return p;
}

}  // namespace

TEST(Rvhm, HeaderLayoutIsBitExact) {
    rvhm::Array a{{2, 3}, {1, 2, 3, 4, 5, 6}};
    std::string buf = rvhm::encode(a);
    ASSERT_EQ(buf.size(), 16u + 8u + 24u);
    EXPECT_EQ(buf.substr(0, 4), "RVHM");
    auto u32 = [&](std::size_t off) {
        std::uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        return v;
    };
    EXPECT_EQ(u32(4), 1u);
    EXPECT_EQ(u32(8), 2u);
    EXPECT_EQ(u32(12), 0u);
    EXPECT_EQ(u32(16), 2u);
    EXPECT_EQ(u32(20), 3u);
    float f;
    std::memcpy(&f, buf.data() + 24 + 4 * 5, 4);
    EXPECT_EQ(f, 6.0f);
    EXPECT_EQ(rvhm::decode(buf, "x"), a);
}

TEST(Rvhm, CorruptionIsReported) {
    std::string buf = rvhm::encode(rvhm::Array{{4}, {1, 2, 3, 4}});
    try {
        rvhm::decode(buf.substr(0, buf.size() - 3), "heatmap");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("heatmap"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
    std::string bad = buf;
    bad[0] = 'X';
    EXPECT_THROW(rvhm::decode(bad, "image"), FormatError);
}

TEST(PairIO, RoundTripIsBitwise) {
    TempDir tmp;
    for (int id = 0; id < 3; ++id) {
        RadioVisualPair p = random_pair(id, 100 + id);
        write_pair(p, tmp.path);
        EXPECT_EQ(read_pair(tmp.path, id), p);
    }
}

TEST(PairIO, TruncatedTensorNamesField) {
    TempDir tmp;
    write_pair(random_pair(5, 1), tmp.path);
    fs::path f = record_dir(tmp.path, 5) / "image.rvhm";
    fs::resize_file(f, fs::file_size(f) - 10);
    try {
        read_pair(tmp.path, 5);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("image"), std::string::npos);
    }
}

TEST(PairIO, ManifestDimMismatchIsConsistencyError) {
    TempDir tmp;
    RadioVisualPair p = random_pair(2, 1);
    write_pair(p, tmp.path);
    json m = manifest_of(p);
    m["heatmap_dims"] = json::array({1, 16, 13});
    std::ofstream(record_dir(tmp.path, 2) / "manifest.json") << m.dump();
    EXPECT_THROW(read_pair(tmp.path, 2), ConsistencyError);
}

TEST(PairIO, MissingRecordIsNotFound) {
    TempDir tmp;
    EXPECT_THROW(read_pair(tmp.path, 77), NotFoundError);
    write_pair(random_pair(1, 1), tmp.path);
    fs::remove(record_dir(tmp.path, 1) / "mask.rvhm");
    EXPECT_THROW(read_pair(tmp.path, 1), NotFoundError);
}

TEST(Index, RoundTrip) {
    TempDir tmp;
    write_index(tmp.path, {3, 1, 2}, json{{"k", 1}});
    EXPECT_EQ(read_index(tmp.path), (std::vector<int>{3, 1, 2}));
}

TEST(MakeSplits, EightyTwenty) {
    std::vector<int> ids(10);
    std::iota(ids.begin(), ids.end(), 0);
    auto [train, valid] = make_splits(ids, SplitSpec{0.8, 3});
    EXPECT_EQ(train.size(), 8u);
    EXPECT_EQ(valid.size(), 2u);
    std::set<int> all(train.begin(), train.end());
    for (int v : valid) EXPECT_TRUE(all.insert(v).second) << "overlap";
    EXPECT_EQ(all, std::set<int>(ids.begin(), ids.end()));
    auto again = make_splits(ids, SplitSpec{0.8, 3});
    EXPECT_EQ(again.first, train);
    EXPECT_EQ(again.second, valid);
}

TEST(MakeSplits, ErrorsAndRounding) {
    EXPECT_THROW(make_splits({1}, SplitSpec{}), DomainError);
    EXPECT_THROW(make_splits({1, 2}, SplitSpec{1.0, 0}), ConfigError);
    std::vector<int> ids(1003);
    std::iota(ids.begin(), ids.end(), 0);
    EXPECT_EQ(make_splits(ids, SplitSpec{}).first.size(), 802u);
}

TEST(Batches, DropLastAndDeterminism) {
    std::vector<int> ids(16);
    std::iota(ids.begin(), ids.end(), 0);
    auto b = batches(ids, 8, 5);
    ASSERT_EQ(b.size(), 2u);
    for (const auto& batch : b) {
        EXPECT_EQ(batch.size(), 8u);
        EXPECT_EQ(std::set<int>(batch.begin(), batch.end()).size(), 8u);
    }
    ids.push_back(16);
    auto b17 = batches(ids, 8, 5);
    EXPECT_EQ(b17.size(), 2u);
    EXPECT_EQ(batches(ids, 8, 5), b17);
    std::set<int> seen;
    for (const auto& batch : b17)
        for (int v : batch) EXPECT_TRUE(seen.insert(v).second);
}

TEST(Batches, Errors) {
    std::vector<int> ids{1, 2, 3};
    EXPECT_THROW(batches(ids, 4, 0), ConfigError);
    EXPECT_THROW(batches(ids, 1, 0), ConfigError);
}
