#pragma once

/**
 * @file localiser.hpp
 * @brief Radio-only regression network: heatmap -> (range, azimuth).
 *
 * Four conv stages (ReLU) then four hidden linear stages (ReLU) and a linear
 * 2-output head. Targets are normalised to [0, 1] over the range window and
 * the azimuth field of view before the MSE loss.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rvl/autodiff.hpp"
#include "rvl/common.hpp"
#include "rvl/radio_config.hpp"
#include "rvl/selflabel.hpp"
#include "rvl/ssl.hpp"

namespace rvl {

struct ConvStage {
    int channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad() const { return (kernel - 1) / 2; }
};

struct LocaliserArch {
    std::vector<ConvStage> convs{{8, 4, 2}, {16, 3, 2}, {8, 2, 2}, {32, 4, 1}};
    std::vector<int> hidden{128, 16, 64, 64};
    int in_rows = 64;
    int in_cols = 48;

    void validate() const {
        require(!convs.empty(), "localiser.convs", "need at least one conv stage");
        for (const auto& c : convs)
            require(c.channels > 0 && c.kernel > 0 && c.stride > 0, "localiser.convs", "channels, kernel, stride must be > 0");
        for (int h : hidden) require(h > 0, "localiser.hidden", "sizes must be > 0");
        require(in_rows > 0 && in_cols > 0, "localiser.input_dims", "must be > 0");
        auto [r, c] = conv_output();
        require(r > 0 && c > 0, "localiser.convs", "stack collapses the " + std::to_string(in_rows) + "x" +
                                                         std::to_string(in_cols) + " input");
    }

    std::pair<int, int> conv_output() const {
        int r = in_rows, c = in_cols;
        for (const auto& s : convs) {
            r = ad::conv_out_size(r, s.kernel, s.stride, s.pad());
            c = ad::conv_out_size(c, s.kernel, s.stride, s.pad());
        }
        return {r, c};
    }
    int flat_size() const {
        auto [r, c] = conv_output();
        return r * c * convs.back().channels;
    }
};

struct LocaliserConfig {
    double lr = 1e-3;
    int batch = 32;
    int epochs = 30;
    std::uint64_t seed = 0;

    void validate() const {
        require(lr > 0, "localiser.lr", "must be > 0");
        require(batch >= 1, "localiser.batch", "must be >= 1");
        require(epochs >= 1, "localiser.epochs", "must be >= 1");
    }
};

class Localiser {
public:
    Localiser() = default;
    Localiser(const LocaliserArch& arch, const RadioConfig& radio, std::uint64_t seed) : arch_(arch), radio_(radio) {
        arch.validate();
        std::mt19937_64 rng(seed);
        int c = 1;
        for (std::size_t i = 0; i < arch.convs.size(); ++i) {
            const auto& s = arch.convs[i];
            params_.add_init("conv" + std::to_string(i) + ".w", {s.channels, c, s.kernel, s.kernel}, c * s.kernel * s.kernel, rng);
            params_.add_zeros("conv" + std::to_string(i) + ".b", {s.channels});
            c = s.channels;
        }
        int in = arch.flat_size();
        std::vector<int> sizes = arch.hidden;
        sizes.push_back(2);
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            params_.add_init("fc" + std::to_string(i) + ".w", {sizes[i], in}, in, rng);
            params_.add_zeros("fc" + std::to_string(i) + ".b", {sizes[i]});
            in = sizes[i];
        }
    }

    const LocaliserArch& arch() const { return arch_; }
    const RadioConfig& radio() const { return radio_; }
    ad::ParamSet& params() { return params_; }
    const ad::ParamSet& params() const { return params_; }

    /// x[B,1,H,W] -> normalised [B,2].
    ad::Tensor forward(const ad::Tensor& x) const {
        if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != arch_.in_rows || x.dim(3) != arch_.in_cols)
            throw ShapeError("localiser: input " + ad::shape_str(x.shape()) + " does not match [B,1," +
                             std::to_string(arch_.in_rows) + "," + std::to_string(arch_.in_cols) + "]");
        ad::Tensor h = x;
        std::size_t p = 0;
        for (const auto& s : arch_.convs) {
            h = ad::relu(ad::conv2d(h, params_[p], params_[p + 1], s.stride, s.pad()));
            p += 2;
        }
        h = ad::flatten(h);
        for (std::size_t i = 0; i <= arch_.hidden.size(); ++i, p += 2) {
            h = ad::linear(h, params_[p], params_[p + 1]);
            if (i < arch_.hidden.size()) h = ad::relu(h);
        }
        return h;
    }

    double normalise_range(double r) const { return (r - radio_.range_min) / radio_.range_span(); }
    double normalise_azimuth(double a) const { return (a - radio_.azimuth_min()) / radio_.azimuth_fov; }

    /// Denormalised (range m, azimuth deg), clamped to the window.
    std::pair<double, double> predict(const Heatmap& hm) const {
        auto out = predict_batch({&hm});
        return out.front();
    }

    std::vector<std::pair<double, double>> predict_batch(const std::vector<const Heatmap*>& hms) const {
        ad::Tensor y = forward(stack(hms));
        std::vector<std::pair<double, double>> out;
        for (std::size_t b = 0; b < hms.size(); ++b) {
            double u = std::clamp(y.values()[2 * b], 0.0, 1.0);
            double v = std::clamp(y.values()[2 * b + 1], 0.0, 1.0);
            out.emplace_back(radio_.range_min + u * radio_.range_span(), radio_.azimuth_min() + v * radio_.azimuth_fov);
        }
        return out;
    }

    ad::Tensor stack(const std::vector<const Heatmap*>& hms) const {
        const std::size_t P = static_cast<std::size_t>(arch_.in_rows) * arch_.in_cols;
        std::vector<double> v(hms.size() * P);
        for (std::size_t b = 0; b < hms.size(); ++b) {
            const Heatmap& hm = *hms[b];
            if (hm.channels != 1 || hm.rows != arch_.in_rows || hm.cols != arch_.in_cols)
                throw ShapeError("localiser: heatmap dims do not match the architecture");
            auto x = ssl::radio_input(hm);
            std::copy(x.begin(), x.end(), v.begin() + static_cast<std::ptrdiff_t>(b * P));
        }
        return ad::Tensor::constant({static_cast<int>(hms.size()), 1, arch_.in_rows, arch_.in_cols}, std::move(v));
    }

private:
    LocaliserArch arch_;
    RadioConfig radio_;
    ad::ParamSet params_;
};

struct LocaliserResult {
    Localiser net;
    std::vector<double> losses;  ///< per optimiser step
};

/// MSE on window-normalised labels, Adam, seeded epoch shuffles, drop-last batches.
inline LocaliserResult train_localiser(const std::vector<LocRecord>& data, const LocaliserArch& arch,
                                       const RadioConfig& radio, const LocaliserConfig& cfg,
                                       const std::function<void(int, double)>& on_epoch = {}) {
    cfg.validate();
    if (data.size() < static_cast<std::size_t>(cfg.batch))
        throw ConfigError("localiser.batch: " + std::to_string(cfg.batch) + " exceeds dataset size " + std::to_string(data.size()));
    LocaliserResult res{Localiser(arch, radio, cfg.seed), {}};
    Localiser& net = res.net;
    ad::Adam opt(net.params(), {.lr = cfg.lr});
    std::vector<int> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    // inputs are prepared once; batching only gathers
    const std::size_t P = static_cast<std::size_t>(arch.in_rows) * arch.in_cols;
    std::vector<double> inputs(data.size() * P), targets(data.size() * 2);
    for (std::size_t i = 0; i < data.size(); ++i) {
        ad::Tensor x = net.stack({&data[i].heatmap});
        std::copy(x.values().begin(), x.values().end(), inputs.begin() + static_cast<std::ptrdiff_t>(i * P));
        targets[2 * i] = net.normalise_range(data[i].range);
        targets[2 * i + 1] = net.normalise_azimuth(data[i].azimuth);
    }
    for (int e = 0; e < cfg.epochs; ++e) {
        double epoch_loss = 0;
        auto bs = cfg.batch >= 2 ? batches(idx, cfg.batch, cfg.seed * 7919ULL + static_cast<std::uint64_t>(e))
                                 : std::vector<std::vector<int>>{};
        if (cfg.batch == 1)
            for (int i : idx) bs.push_back({i});
        for (const auto& b : bs) {
            const int B = static_cast<int>(b.size());
            std::vector<double> xv(B * P), tv(static_cast<std::size_t>(B) * 2);
            for (int k = 0; k < B; ++k) {
                std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(b[k] * P), P, xv.begin() + static_cast<std::ptrdiff_t>(k * P));
                tv[2 * k] = targets[2 * b[k]];
                tv[2 * k + 1] = targets[2 * b[k] + 1];
            }
            net.params().zero_grad();
            ad::Tensor loss = ad::mse(net.forward(ad::Tensor::constant({B, 1, arch.in_rows, arch.in_cols}, std::move(xv))),
                                      ad::Tensor::constant({B, 2}, std::move(tv)));
            const double l = loss.item();
            if (!std::isfinite(l)) throw NumericError("train_localiser: non-finite loss in epoch " + std::to_string(e));
            ad::backward(loss);
            opt.step(net.params());
            res.losses.push_back(l);
            epoch_loss += l;
        }
        if (on_epoch) on_epoch(e, epoch_loss / static_cast<double>(bs.size()));
    }
    return res;
}

inline void write_predictions_csv(const std::string& path, const std::vector<int>& ids,
                                  const std::vector<std::pair<double, double>>& preds) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << "id,range_pred,azimuth_pred\n";
    out.precision(17);
    for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << preds[i].first << ',' << preds[i].second << '\n';
}

}  // namespace rvl
