#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "rvl/localiser.hpp"
#include "rvl/synth.hpp"

using namespace rvl;

namespace {

std::vector<LocRecord> records(int n, double range, double az) {
    SynthConfig sc;
    std::vector<LocRecord> out;
    for (int i = 0; i < n; ++i) {
        auto p = synthesize_pair(sc, i);
        out.push_back(LocRecord{p.id, p.heatmap, range, az});
    }
    return out;
}

}  // namespace

TEST(LocaliserArchTest, DeskFlatSize) {
    LocaliserArch a;
    EXPECT_EQ(a.conv_output(), (std::pair<int, int>{7, 5}));
    EXPECT_EQ(a.flat_size(), 1120);
}

TEST(LocaliserArchTest, CollapsingStackRejected) {
    LocaliserArch a;
    a.in_rows = 4;
    a.in_cols = 4;
    EXPECT_THROW(a.validate(), ConfigError);
    LocaliserArch b;
    b.hidden = {0};
    EXPECT_THROW(b.validate(), ConfigError);
}

TEST(LocaliserTest, ParameterCount) {
    Localiser net(LocaliserArch{}, RadioConfig::desk(), 1);
    // 4 conv + 5 linear stages, weight and bias each
    ASSERT_EQ(net.params().size(), 18u);
    EXPECT_EQ(net.params()[8].shape(), (ad::Shape{128, 1120}));
    EXPECT_EQ(net.params()[16].shape(), (ad::Shape{2, 64}));
}

TEST(LocaliserTest, InputDimsChecked) {
    Localiser net(LocaliserArch{}, RadioConfig::desk(), 1);
    Heatmap small(1, 32, 48);
    EXPECT_THROW(net.predict(small), ShapeError);
    EXPECT_THROW(net.forward(ad::Tensor::constant({1, 1, 64, 47}, std::vector<double>(64 * 47))), ShapeError);
}

TEST(LocaliserTest, PredictionsClampedToWindow) {
    RadioConfig radio = RadioConfig::desk();
    Localiser net(LocaliserArch{}, radio, 2);
    auto& head_b = net.params()[17];
    Heatmap hm(1, 64, 48);
    head_b.mutable_values() = {1e6, -1e6};
    auto [r, a] = net.predict(hm);
    EXPECT_EQ(r, radio.range_min + radio.range_span());
    EXPECT_EQ(a, radio.azimuth_min());
    head_b.mutable_values() = {-1e6, 1e6};
    std::tie(r, a) = net.predict(hm);
    EXPECT_EQ(r, radio.range_min);
    EXPECT_EQ(a, radio.azimuth_min() + radio.azimuth_fov);
}

TEST(LocaliserTest, NormalisationEndpoints) {
    RadioConfig radio = RadioConfig::desk();
    Localiser net(LocaliserArch{}, radio, 0);
    EXPECT_DOUBLE_EQ(net.normalise_range(6.0), 0.0);
    EXPECT_DOUBLE_EQ(net.normalise_range(18.0), 1.0);
    EXPECT_DOUBLE_EQ(net.normalise_azimuth(-45.0), 0.0);
    EXPECT_DOUBLE_EQ(net.normalise_azimuth(45.0), 1.0);
}

TEST(LocaliserTraining, ConstantTargetsConverge) {
    RadioConfig radio = RadioConfig::desk();
    auto data = records(32, 12.3, 10.0);
    LocaliserConfig cfg;
    cfg.batch = 8;
    cfg.epochs = 100;  // 4 steps per epoch
    cfg.seed = 3;
    auto res = train_localiser(data, LocaliserArch{}, radio, cfg);
    ASSERT_EQ(res.losses.size(), 400u);
    EXPECT_LT(res.losses.back(), 1e-3);
    for (const auto& d : data) {
        auto [r, a] = res.net.predict(d.heatmap);
        EXPECT_NEAR((r - 6.0) / 12.0, (12.3 - 6.0) / 12.0, 0.05);
        EXPECT_NEAR((a + 45.0) / 90.0, (10.0 + 45.0) / 90.0, 0.05);
    }
}

TEST(LocaliserTraining, DeterministicGivenSeed) {
    RadioConfig radio = RadioConfig::desk();
    auto data = records(16, 9.0, -5.0);
    LocaliserConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 2;
    cfg.seed = 11;
    auto a = train_localiser(data, LocaliserArch{}, radio, cfg);
    auto b = train_localiser(data, LocaliserArch{}, radio, cfg);
    EXPECT_EQ(a.losses, b.losses);
    EXPECT_EQ(a.net.predict(data[0].heatmap), b.net.predict(data[0].heatmap));
    cfg.seed = 12;
    auto c = train_localiser(data, LocaliserArch{}, radio, cfg);
    EXPECT_NE(a.losses, c.losses);
}

TEST(LocaliserTraining, BatchLargerThanDataRejected) {
    auto data = records(4, 9.0, 0.0);
    LocaliserConfig cfg;
    cfg.batch = 8;
    EXPECT_THROW(train_localiser(data, LocaliserArch{}, RadioConfig::desk(), cfg), ConfigError);
    cfg.batch = 2;
    cfg.lr = 0;
    EXPECT_THROW(train_localiser(data, LocaliserArch{}, RadioConfig::desk(), cfg), ConfigError);
}

TEST(LocaliserTraining, EpochCallback) {
    auto data = records(8, 9.0, 0.0);
    LocaliserConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 3;
    std::vector<int> seen;
    train_localiser(data, LocaliserArch{}, RadioConfig::desk(), cfg, [&](int e, double l) {
        seen.push_back(e);
        EXPECT_TRUE(std::isfinite(l));
    });
    EXPECT_EQ(seen, (std::vector<int>{0, 1, 2}));
}

TEST(PredictionsCsv, Layout) {
    std::string path = ::testing::TempDir() + "preds.csv";
    write_predictions_csv(path, {4, 7}, {{10.5, -3.25}, {17.0, 44.0}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "id,range_pred,azimuth_pred");
    std::getline(in, line);
    EXPECT_EQ(line, "4,10.5,-3.25");
    std::getline(in, line);
    EXPECT_EQ(line, "7,17,44");
}
