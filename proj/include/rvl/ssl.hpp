#pragma once

/**
 * @file ssl.hpp
 * @brief Radio and vision spatial encoders, projector heads, the CL / MCL /
 *        SCL contrastive objectives, cross-modal attention and backbone training.
 *
 * Both encoders map an H x W input (1 channel radio, 3 channel vision) to a
 * C x h x w feature map with h = H/4, w = W/4. Attention correlates a template
 * cut from the masked-vision features against the radio features with
 * same-size output; every bin vector is L2-normalised first, so a map entry
 * is the mean cosine between template bins and the radio bins under them.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rvl/autodiff.hpp"
#include "rvl/common.hpp"
#include "rvl/dataset.hpp"
#include "rvl/scene.hpp"

namespace rvl::ssl {

enum class Flavour { CL, MCL, SCL };

inline std::string to_string(Flavour f) {
    switch (f) {
        case Flavour::CL: return "CL";
        case Flavour::MCL: return "MCL";
        case Flavour::SCL: return "SCL";
    }
    return "?";
}

inline Flavour parse_flavour(const std::string& s) {
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "CL") return Flavour::CL;
    if (u == "MCL") return Flavour::MCL;
    if (u == "SCL") return Flavour::SCL;
    throw ConfigError("ssl.flavour: unknown flavour '" + s + "' (expected CL, MCL or SCL)");
}

/// C x h x w real feature map (double precision).
struct FeatureMap {
    int channels = 0;
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int c, int r, int k) : channels(c), rows(r), cols(k), data(static_cast<std::size_t>(c) * r * k, 0.0) {}
    double& at(int c, int r, int k) { return data[(static_cast<std::size_t>(c) * rows + r) * cols + k]; }
    double at(int c, int r, int k) const { return data[(static_cast<std::size_t>(c) * rows + r) * cols + k]; }
};

/// h x w attention scores.
struct AttentionMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    double at(int r, int k) const { return data[static_cast<std::size_t>(r) * cols + k]; }
};

/// Inclusive rectangle of feature bins.
struct BinRect {
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
    int rows() const { return row1 - row0 + 1; }
    int cols() const { return col1 - col0 + 1; }
    int count() const { return rows() * cols(); }
    int center_row() const { return row0 + (rows() - 1) / 2; }
    int center_col() const { return col0 + (cols() - 1) / 2; }
    bool operator==(const BinRect&) const = default;
};

// ---- architecture ----------------------------------------------------------

/**
 * Conv 3x3 + ReLU + 2x2 average pool per entry of `widths`, then a final
 * 3x3 conv to `out_channels`. Optional coordinate channels (row and column
 * ramps in [-1, 1]) are appended to the input.
 */
struct BackboneArch {
    int in_channels = 1;
    std::vector<int> widths{16, 32};
    int out_channels = 32;
    int kernel = 3;
    bool coord_channels = true;
    bool final_relu = true;

    int downsample() const { return 1 << widths.size(); }
    void validate() const {
        require(in_channels > 0, "backbone.in_channels", "must be > 0");
        require(out_channels > 0, "backbone.out_channels", "must be > 0");
        require(kernel % 2 == 1 && kernel > 0, "backbone.kernel", "must be odd");
        for (int w : widths) require(w > 0, "backbone.widths", "entries must be > 0");
    }
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const BackboneArch& arch, int in_rows, int in_cols, std::mt19937_64& rng) : arch_(arch), H_(in_rows), W_(in_cols) {
        arch.validate();
        require(in_rows % arch.downsample() == 0 && in_cols % arch.downsample() == 0, "backbone.input_dims",
                "must be divisible by " + std::to_string(arch.downsample()));
        int c = arch.in_channels + (arch.coord_channels ? 2 : 0);
        const int k = arch.kernel;
        for (std::size_t i = 0; i <= arch.widths.size(); ++i) {
            int o = i < arch.widths.size() ? arch.widths[i] : arch.out_channels;
            params_.add_init("conv" + std::to_string(i) + ".w", {o, c, k, k}, c * k * k, rng);
            params_.add_zeros("conv" + std::to_string(i) + ".b", {o});
            c = o;
        }
    }

    const BackboneArch& arch() const { return arch_; }
    int in_rows() const { return H_; }
    int in_cols() const { return W_; }
    int out_rows() const { return H_ / arch_.downsample(); }
    int out_cols() const { return W_ / arch_.downsample(); }
    ad::ParamSet& params() { return params_; }
    const ad::ParamSet& params() const { return params_; }

    /// x[B, in_channels, H, W] -> [B, C, h, w].
    ad::Tensor forward(const ad::Tensor& x) const { return forward_with(params_, x); }

    /// Same network evaluated with another parameter set of identical layout (EMA copies).
    ad::Tensor forward_with(const ad::ParamSet& ps, const ad::Tensor& x) const {
        if (x.rank() != 4 || x.dim(1) != arch_.in_channels || x.dim(2) != H_ || x.dim(3) != W_)
            throw ShapeError("encoder: input " + ad::shape_str(x.shape()) + " does not match [B," +
                             std::to_string(arch_.in_channels) + "," + std::to_string(H_) + "," + std::to_string(W_) + "]");
        ad::Tensor h = arch_.coord_channels ? with_coords(x) : x;
        const int pad = arch_.kernel / 2;
        const std::size_t n = arch_.widths.size();
        for (std::size_t i = 0; i < n; ++i) {
            h = ad::relu(ad::conv2d(h, ps[2 * i], ps[2 * i + 1], 1, pad));
            h = ad::avg_pool2d(h, 2, 2);
        }
        h = ad::conv2d(h, ps[2 * n], ps[2 * n + 1], 1, pad);
        return arch_.final_relu ? ad::relu(h) : h;
    }

private:
    ad::Tensor with_coords(const ad::Tensor& x) const {
        const int B = x.dim(0), C = x.dim(1);
        const std::size_t P = static_cast<std::size_t>(H_) * W_;
        std::vector<double> v(static_cast<std::size_t>(B) * (C + 2) * P);
        for (int b = 0; b < B; ++b) {
            std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(b * C * P), C * P,
                        v.begin() + static_cast<std::ptrdiff_t>(b * (C + 2) * P));
            double* rr = v.data() + (static_cast<std::size_t>(b) * (C + 2) + C) * P;
            double* cc = rr + P;
            for (int i = 0; i < H_; ++i)
                for (int j = 0; j < W_; ++j) {
                    rr[i * W_ + j] = H_ > 1 ? 2.0 * i / (H_ - 1) - 1.0 : 0.0;
                    cc[i * W_ + j] = W_ > 1 ? 2.0 * j / (W_ - 1) - 1.0 : 0.0;
                }
        }
        // coordinates are constants; only the image part carries a gradient
        if (!x.requires_grad()) return ad::Tensor::constant({B, C + 2, H_, W_}, std::move(v));
        return ad::make_result({B, C + 2, H_, W_}, std::move(v), {x}, [B, C, P](ad::Node& self) {
            auto* g = ad::grad_of(self, 0);
            for (int b = 0; b < B; ++b)
                for (std::size_t i = 0; i < C * P; ++i) (*g)[b * C * P + i] += self.grad[b * (C + 2) * P + i];
        });
    }

    BackboneArch arch_;
    int H_ = 0, W_ = 0;
    ad::ParamSet params_;
};

/// Global average pool, then Linear-ReLU-Linear, then L2 normalisation.
class Projector {
public:
    Projector() = default;
    /// `in` is C for pooled input, C*h*w when `flatten` is set.
    Projector(int in, int hidden, int out, std::mt19937_64& rng, bool flatten = false) : flatten_(flatten) {
        require(in > 0 && hidden > 0 && out > 0, "projector.dims", "must be > 0");
        params_.add_init("fc1.w", {hidden, in}, in, rng);
        params_.add_zeros("fc1.b", {hidden});
        params_.add_init("fc2.w", {out, hidden}, hidden, rng);
        params_.add_zeros("fc2.b", {out});
    }
    int out_dim() const { return params_[2].dim(0); }
    ad::ParamSet& params() { return params_; }
    const ad::ParamSet& params() const { return params_; }

    /// f[B,C,h,w] -> unit-norm [B,N].
    ad::Tensor forward(const ad::Tensor& f) const { return forward_with(params_, f); }

    ad::Tensor forward_with(const ad::ParamSet& ps, const ad::Tensor& f) const {
        ad::Tensor z = flatten_ ? ad::flatten(f) : ad::global_avg_pool(f);
        z = ad::relu(ad::linear(z, ps[0], ps[1]));
        z = ad::linear(z, ps[2], ps[3]);
        return ad::normalize_l2(z);
    }

private:
    ad::ParamSet params_;
    bool flatten_ = false;
};

// ---- losses ----------------------------------------------------------------

/// One-sided InfoNCE: -log(e^{q.k+/t} / (e^{q.k+/t} + sum_i e^{q.k_i/t})).
inline double loss_contrastive(const std::vector<double>& q, const std::vector<double>& k_pos,
                               const std::vector<std::vector<double>>& k_negs, double tau) {
    if (k_negs.empty()) throw DomainError("loss_contrastive: need at least one negative");
    require(tau > 0, "tau", "must be > 0");
    auto dot = [&](const std::vector<double>& k) {
        if (k.size() != q.size()) throw ShapeError("loss_contrastive: embedding sizes differ");
        double s = 0;
        for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * k[i];
        return s / tau;
    };
    std::vector<double> z{dot(k_pos)};
    for (const auto& k : k_negs) z.push_back(dot(k));
    double mx = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double v : z) s += std::exp(v - mx);
    return mx + std::log(s) - z[0];
}

/// Bidirectional in-batch contrastive loss: row i of q_a matches row i of k_b and vice versa.
inline ad::Tensor contrastive_loss(const ad::Tensor& q_r, const ad::Tensor& k_v, const ad::Tensor& q_v,
                                   const ad::Tensor& k_r, double tau) {
    require(tau > 0, "ssl.tau", "must be > 0");
    const int B = q_r.dim(0);
    if (B < 2) throw DomainError("contrastive_loss: batch must be >= 2");
    std::vector<int> diag(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) diag[static_cast<std::size_t>(i)] = i;
    ad::Tensor l_vr = ad::softmax_cross_entropy(ad::scale(ad::matmul(q_r, ad::transpose(k_v)), 1.0 / tau), diag);
    ad::Tensor l_rv = ad::softmax_cross_entropy(ad::scale(ad::matmul(q_v, ad::transpose(k_r)), 1.0 / tau), diag);
    return ad::scale(ad::add(l_vr, l_rv), 0.5);
}

/// Spatial contrastive loss over an S[r_i, v_j] score matrix.
inline ad::Tensor loss_scl(const ad::Tensor& S, double tau = 0.1) {
    require(tau > 0, "ssl.tau", "must be > 0");
    if (S.rank() != 2 || S.dim(0) != S.dim(1)) throw ShapeError("loss_scl: scores must be square, got " + ad::shape_str(S.shape()));
    const int B = S.dim(0);
    if (B < 2) throw DomainError("loss_scl: batch must be >= 2");
    std::vector<int> diag(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) diag[static_cast<std::size_t>(i)] = i;
    ad::Tensor z = ad::scale(S, 1.0 / tau);
    return ad::scale(ad::add(ad::softmax_cross_entropy(z, diag), ad::softmax_cross_entropy(ad::transpose(z), diag)), 0.5);
}

// ---- attention -------------------------------------------------------------

namespace detail {

/// Per-bin unit vectors of a C x P block (zero vectors stay zero).
inline std::vector<double> unit_bins(const double* x, int C, std::size_t P, double eps = 1e-12) {
    std::vector<double> y(static_cast<std::size_t>(C) * P);
    for (std::size_t p = 0; p < P; ++p) {
        double s = eps;
        for (int c = 0; c < C; ++c) s += x[c * P + p] * x[c * P + p];
        double inv = 1.0 / std::sqrt(s);
        for (int c = 0; c < C; ++c) y[c * P + p] = x[c * P + p] * inv;
    }
    return y;
}

/**
 * out[n] = mean_{m in rect} <R(n + m - c), T(m)> over normalised C-vectors,
 * R is C x h x w, T is C x th x tw, rect addresses T, c is the rect centre.
 * Radio bins outside the grid contribute zero.
 */
inline void correlate(const double* R, int C, int h, int w, const double* T, int th, int tw, const BinRect& rect,
                      double* out) {
    const std::size_t P = static_cast<std::size_t>(h) * w, TP = static_cast<std::size_t>(th) * tw;
    const double inv = 1.0 / rect.count();
    const int cr = rect.center_row(), cc = rect.center_col();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int my = rect.row0; my <= rect.row1; ++my) {
                int ry = y + my - cr;
                if (ry < 0 || ry >= h) continue;
                for (int mx = rect.col0; mx <= rect.col1; ++mx) {
                    int rx = x + mx - cc;
                    if (rx < 0 || rx >= w) continue;
                    const double* rp = R + static_cast<std::size_t>(ry) * w + rx;
                    const double* tp = T + static_cast<std::size_t>(my) * tw + mx;
                    double d = 0;
                    for (int c = 0; c < C; ++c) d += rp[c * P] * tp[c * TP];
                    acc += d;
                }
            }
            out[y * w + x] = acc * inv;
        }
}

}  // namespace detail

/// Attention of a radio feature map against a cropped masked-vision template.
inline AttentionMap attention_map(const FeatureMap& f_r, const FeatureMap& crop) {
    if (crop.rows <= 0 || crop.cols <= 0 || crop.data.empty()) throw DomainError("attention_map: empty template");
    if (crop.channels != f_r.channels)
        throw ShapeError("attention_map: template has " + std::to_string(crop.channels) + " channels, radio has " +
                         std::to_string(f_r.channels));
    if (crop.rows > f_r.rows || crop.cols > f_r.cols) throw ShapeError("attention_map: template larger than feature map");
    const std::size_t P = static_cast<std::size_t>(f_r.rows) * f_r.cols;
    auto R = detail::unit_bins(f_r.data.data(), f_r.channels, P);
    auto T = detail::unit_bins(crop.data.data(), crop.channels, static_cast<std::size_t>(crop.rows) * crop.cols);
    AttentionMap m{f_r.rows, f_r.cols, std::vector<double>(P)};
    detail::correlate(R.data(), f_r.channels, f_r.rows, f_r.cols, T.data(), crop.rows, crop.cols,
                      BinRect{0, 0, crop.rows - 1, crop.cols - 1}, m.data.data());
    return m;
}

inline double attention_score(const AttentionMap& m) {
    if (m.data.empty()) throw DomainError("attention_score: empty map");
    return *std::max_element(m.data.begin(), m.data.end());
}

/// Cut the feature bins inside `rect` out of a map.
inline FeatureMap crop(const FeatureMap& f, const BinRect& rect) {
    if (rect.row0 < 0 || rect.col0 < 0 || rect.row1 >= f.rows || rect.col1 >= f.cols || rect.rows() <= 0 || rect.cols() <= 0)
        throw DomainError("crop: rectangle outside feature map");
    FeatureMap out(f.channels, rect.rows(), rect.cols());
    for (int c = 0; c < f.channels; ++c)
        for (int r = 0; r < rect.rows(); ++r)
            for (int k = 0; k < rect.cols(); ++k) out.at(c, r, k) = f.at(c, rect.row0 + r, rect.col0 + k);
    return out;
}

/// Feature bins covered by a pixel mask, grown by `pad_bins` and clipped to the grid.
inline BinRect template_rect(const Mask& mask, int h, int w, int pad_bins) {
    BBox b = mask_bbox(mask);
    if (b.empty()) throw DomainError("template_rect: empty mask");
    auto fr = [&](int px) { return static_cast<int>(static_cast<long long>(px) * h / mask.rows); };
    auto fc = [&](int px) { return static_cast<int>(static_cast<long long>(px) * w / mask.cols); };
    BinRect r{fr(b.row_min) - pad_bins, fc(b.col_min) - pad_bins, fr(b.row_max) + pad_bins, fc(b.col_max) + pad_bins};
    r.row0 = std::max(r.row0, 0);
    r.col0 = std::max(r.col0, 0);
    r.row1 = std::min(r.row1, h - 1);
    r.col1 = std::min(r.col1, w - 1);
    return r;
}

/**
 * Differentiable S[i][j] = max_n h_n(r_i, v_j) for all batch pairs.
 * Inputs are already per-bin normalised feature maps [B,C,h,w]; rects[j]
 * addresses the template inside v_j.
 */
inline ad::Tensor attention_scores(const ad::Tensor& Rn, const ad::Tensor& Vn, const std::vector<BinRect>& rects) {
    if (Rn.shape() != Vn.shape() || Rn.rank() != 4)
        throw ShapeError("attention_scores: radio " + ad::shape_str(Rn.shape()) + " and vision " +
                         ad::shape_str(Vn.shape()) + " must be equal rank-4 shapes");
    const int B = Rn.dim(0), C = Rn.dim(1), h = Rn.dim(2), w = Rn.dim(3);
    if (rects.size() != static_cast<std::size_t>(B)) throw ShapeError("attention_scores: one template per sample");
    const std::size_t P = static_cast<std::size_t>(h) * w, BP = static_cast<std::size_t>(C) * P;
    std::vector<double> S(static_cast<std::size_t>(B) * B);
    std::vector<int> arg(S.size());
    std::vector<double> map(P);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) {
            detail::correlate(Rn.values().data() + i * BP, C, h, w, Vn.values().data() + j * BP, h, w, rects[j], map.data());
            auto it = std::max_element(map.begin(), map.end());
            S[static_cast<std::size_t>(i) * B + j] = *it;
            arg[static_cast<std::size_t>(i) * B + j] = static_cast<int>(it - map.begin());
        }
    return ad::make_result({B, B}, std::move(S), {Rn, Vn}, [=, arg = std::move(arg)](ad::Node& self) {
        auto* gr = ad::grad_of(self, 0);
        auto* gv = ad::grad_of(self, 1);
        const auto& R = self.inputs[0]->value;
        const auto& V = self.inputs[1]->value;
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < B; ++j) {
                const double g = self.grad[static_cast<std::size_t>(i) * B + j] / rects[j].count();
                if (g == 0) continue;
                const int n = arg[static_cast<std::size_t>(i) * B + j];
                const int y = n / w, x = n % w;
                const BinRect& rc = rects[j];
                for (int my = rc.row0; my <= rc.row1; ++my) {
                    int ry = y + my - rc.center_row();
                    if (ry < 0 || ry >= h) continue;
                    for (int mx = rc.col0; mx <= rc.col1; ++mx) {
                        int rx = x + mx - rc.center_col();
                        if (rx < 0 || rx >= w) continue;
                        std::size_t ro = i * BP + static_cast<std::size_t>(ry) * w + rx;
                        std::size_t vo = j * BP + static_cast<std::size_t>(my) * w + mx;
                        for (int c = 0; c < C; ++c) {
                            if (gr) (*gr)[ro + c * P] += g * V[vo + c * P];
                            if (gv) (*gv)[vo + c * P] += g * R[ro + c * P];
                        }
                    }
                }
            }
    });
}

/// theta_bar <- m theta_bar + (1 - m) theta, elementwise.
inline void ema_update(ad::ParamSet& avg, const ad::ParamSet& cur, double m) {
    require(m >= 0.0 && m <= 1.0, "ssl.ema_momentum", "must be in [0,1]");
    if (avg.size() != cur.size()) throw ShapeError("ema_update: parameter sets differ");
    for (std::size_t i = 0; i < avg.size(); ++i) {
        if (avg[i].shape() != cur[i].shape())
            throw ShapeError("ema_update: shape mismatch for '" + avg.name(i) + "'");
        auto& a = avg[i].mutable_values();
        const auto& c = cur[i].values();
        for (std::size_t j = 0; j < a.size(); ++j) a[j] = m * a[j] + (1.0 - m) * c[j];
    }
}

// ---- training --------------------------------------------------------------

struct SslConfig {
    Flavour flavour = Flavour::MCL;
    std::optional<double> temperature;  ///< default 0.07 for CL/MCL, 0.1 for SCL
    int batch = 8;
    int queue_size = 0;                 ///< 0 means "equal to batch"
    int steps = 500;
    double lr = 1e-5;
    std::uint64_t seed = 0;
    int feature_pad = 1;                ///< template padding in feature bins
    bool ema_enabled = false;
    double ema_momentum = 0.99;
    int embed_dim = 64;                 ///< N
    int projector_hidden = 64;
    bool projector_flatten = false;     ///< flatten C x h x w instead of pooling over bins
    bool shared_projector = false;      ///< one head for both modalities
    BackboneArch radio_arch{};
    BackboneArch vision_arch{3};

    double tau() const { return temperature.value_or(flavour == Flavour::SCL ? 0.1 : 0.07); }
    void validate() const {
        require(tau() > 0, "ssl.temperature", "must be > 0");
        require(batch >= 2, "ssl.batch", "must be >= 2");
        require(queue_size == 0 || queue_size == batch, "ssl.queue_size", "must equal batch");
        require(steps >= 0, "ssl.steps", "must be >= 0");
        require(lr > 0, "ssl.lr", "must be > 0");
        require(feature_pad >= 0, "ssl.feature_pad", "must be >= 0");
        require(ema_momentum >= 0 && ema_momentum < 1, "ssl.ema_momentum", "must be in [0,1)");
        require(embed_dim > 0 && projector_hidden > 0, "ssl.embed_dim", "must be > 0");
        require(radio_arch.out_channels == vision_arch.out_channels && radio_arch.widths.size() == vision_arch.widths.size(),
                "ssl.backbone", "radio and vision branches must output the same C x h x w");
        radio_arch.validate();
        vision_arch.validate();
    }
};

/// Network inputs for one pair, in double precision.
struct SslSample {
    int id = 0;
    std::vector<double> radio;   ///< 1 x H x W, sqrt(P / max P)
    std::vector<double> image;   ///< 3 x H x W
    std::vector<double> mask;    ///< H x W
    BBox mask_box;
};

/// Radio input normalisation: amplitude relative to the peak.
inline std::vector<double> radio_input(const Heatmap& hm) {
    double mx = 0;
    for (float v : hm.data) mx = std::max(mx, static_cast<double>(v));
    std::vector<double> out(hm.data.size(), 0.0);
    if (mx <= 0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(0.0, static_cast<double>(hm.data[i])) / mx);
    return out;
}

inline SslSample prepare_sample(const RadioVisualPair& p) {
    if (p.heatmap.rows != p.image.rows || p.heatmap.cols != p.image.cols)
        throw ShapeError("prepare_sample: heatmap and image must share H x W");
    SslSample s;
    s.id = p.id;
    s.radio = radio_input(p.heatmap);
    s.image.assign(p.image.data.begin(), p.image.data.end());
    s.mask.assign(p.mask.data.begin(), p.mask.data.end());
    s.mask_box = mask_bbox(p.mask);
    return s;
}

struct SslModel {
    SslConfig config;
    int H = 0, W = 0;
    Encoder radio, vision;
    Projector proj_r, proj_v;
    std::optional<ad::ParamSet> ema_radio, ema_vision;
    std::optional<ad::ParamSet> ema_proj_r, ema_proj_v;  ///< key heads

    int feat_rows() const { return radio.out_rows(); }
    int feat_cols() const { return radio.out_cols(); }

    /// All trainable parameters in a fixed order.
    ad::ParamSet trainable() {
        ad::ParamSet ps;
        ps.extend(radio.params(), "radio.");
        ps.extend(vision.params(), "vision.");
        if (config.flavour != Flavour::SCL) {
            ps.extend(proj_r.params(), "proj_r.");
            if (!config.shared_projector) ps.extend(proj_v.params(), "proj_v.");
        }
        return ps;
    }
};

inline SslModel make_model(const SslConfig& cfg, int H, int W) {
    cfg.validate();
    SslModel m;
    m.config = cfg;
    m.H = H;
    m.W = W;
    std::mt19937_64 rng(cfg.seed);
    BackboneArch ra = cfg.radio_arch, va = cfg.vision_arch;
    ra.in_channels = 1;
    va.in_channels = 3;
    m.radio = Encoder(ra, H, W, rng);
    m.vision = Encoder(va, H, W, rng);
    const int bins = cfg.projector_flatten ? m.radio.out_rows() * m.radio.out_cols() : 1;
    m.proj_r = Projector(ra.out_channels * bins, cfg.projector_hidden, cfg.embed_dim, rng, cfg.projector_flatten);
    m.proj_v = Projector(va.out_channels * bins, cfg.projector_hidden, cfg.embed_dim, rng, cfg.projector_flatten);
    if (cfg.ema_enabled) {
        m.ema_radio = m.radio.params().clone();
        m.ema_vision = m.vision.params().clone();
        m.ema_proj_r = m.proj_r.params().clone();
        m.ema_proj_v = m.proj_v.params().clone();
    }
    return m;
}

struct Batch {
    ad::Tensor radio;   ///< [B,1,H,W]
    ad::Tensor vision;  ///< [B,3,H,W], masked for MCL/SCL
    std::vector<BinRect> rects;
};

/// Stack samples; `masked` multiplies the image by its mask (MCL/SCL views).
inline Batch make_batch(const SslModel& m, const std::vector<const SslSample*>& samples, bool masked) {
    const int B = static_cast<int>(samples.size());
    const std::size_t P = static_cast<std::size_t>(m.H) * m.W;
    std::vector<double> r(B * P), v(B * 3 * P);
    Batch out;
    for (int b = 0; b < B; ++b) {
        const SslSample& s = *samples[static_cast<std::size_t>(b)];
        if (s.radio.size() != P || s.image.size() != 3 * P || s.mask.size() != P)
            throw ShapeError("make_batch: sample " + std::to_string(s.id) + " does not match model input dims");
        std::copy(s.radio.begin(), s.radio.end(), r.begin() + static_cast<std::ptrdiff_t>(b * P));
        for (int c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < P; ++p)
                v[(b * 3 + c) * P + p] = masked ? s.image[c * P + p] * s.mask[p] : s.image[c * P + p];
        Mask mk(1, m.H, m.W);
        for (std::size_t p = 0; p < P; ++p) mk.data[p] = static_cast<float>(s.mask[p]);
        out.rects.push_back(template_rect(mk, m.feat_rows(), m.feat_cols(), m.config.feature_pad));
    }
    out.radio = ad::Tensor::constant({B, 1, m.H, m.W}, std::move(r));
    out.vision = ad::Tensor::constant({B, 3, m.H, m.W}, std::move(v));
    return out;
}

/// Flavour-specific training loss on one batch.
inline ad::Tensor batch_loss(const SslModel& m, const Batch& b) {
    ad::Tensor fr = m.radio.forward(b.radio);
    ad::Tensor fv = m.vision.forward(b.vision);
    if (m.config.flavour == Flavour::SCL)
        return loss_scl(attention_scores(ad::normalize_channels(fr), ad::normalize_channels(fv), b.rects), m.config.tau());
    const Projector& gv = m.config.shared_projector ? m.proj_r : m.proj_v;
    ad::Tensor q_r = m.proj_r.forward(fr);
    ad::Tensor q_v = gv.forward(fv);
    if (!m.config.ema_enabled) return contrastive_loss(q_r, q_v, q_v, q_r, m.config.tau());
    const ad::ParamSet& kv = m.config.shared_projector ? *m.ema_proj_r : *m.ema_proj_v;
    ad::Tensor k_r = m.proj_r.forward_with(*m.ema_proj_r, m.radio.forward_with(*m.ema_radio, b.radio)).detach();
    ad::Tensor k_v = gv.forward_with(kv, m.vision.forward_with(*m.ema_vision, b.vision)).detach();
    return contrastive_loss(q_r, k_v, q_v, k_r, m.config.tau());
}

struct TrainResult {
    SslModel model;
    std::vector<double> losses;
};

/// Deterministic Adam training with in-batch negatives; epochs are reshuffled per seed.
inline TrainResult train_backbone(const SslConfig& cfg, const std::vector<SslSample>& train, int H, int W,
                                  const std::function<void(int, double)>& on_step = {}) {
    cfg.validate();
    if (train.size() < static_cast<std::size_t>(cfg.batch))
        throw ConfigError("ssl.batch: " + std::to_string(cfg.batch) + " exceeds training set size " + std::to_string(train.size()));
    TrainResult res{make_model(cfg, H, W), {}};
    SslModel& m = res.model;
    ad::ParamSet ps = m.trainable();
    ad::Adam opt(ps, {.lr = cfg.lr});
    std::vector<int> idx(train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::vector<std::vector<int>> epoch;
    std::size_t cursor = 0;
    std::uint64_t epoch_no = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor == epoch.size()) {
            epoch = batches(idx, cfg.batch, cfg.seed * 1000003ULL + epoch_no++);
            cursor = 0;
        }
        std::vector<const SslSample*> sel;
        for (int i : epoch[cursor++]) sel.push_back(&train[static_cast<std::size_t>(i)]);
        ps.zero_grad();
        ad::Tensor loss = batch_loss(m, make_batch(m, sel, cfg.flavour != Flavour::CL));
        const double l = loss.item();
        if (!std::isfinite(l))
            throw NumericError("train_backbone: non-finite loss at step " + std::to_string(step) + " (" + to_string(cfg.flavour) + ")");
        ad::backward(loss);
        opt.step(ps);
        if (cfg.ema_enabled) {
            ema_update(*m.ema_radio, m.radio.params(), cfg.ema_momentum);
            ema_update(*m.ema_vision, m.vision.params(), cfg.ema_momentum);
            ema_update(*m.ema_proj_r, m.proj_r.params(), cfg.ema_momentum);
            ema_update(*m.ema_proj_v, m.proj_v.params(), cfg.ema_momentum);
        }
        res.losses.push_back(l);
        if (on_step) on_step(step, l);
    }
    return res;
}

// ---- inference helpers -----------------------------------------------------

inline FeatureMap to_feature_map(const ad::Tensor& t, int b) {
    FeatureMap f(t.dim(1), t.dim(2), t.dim(3));
    std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(b * f.data.size()), f.data.size(), f.data.begin());
    return f;
}

/// Radio features and masked-vision template for one sample.
inline std::pair<FeatureMap, FeatureMap> encode_pair(const SslModel& m, const SslSample& s) {
    // attention always uses the masked view, whatever the training flavour
    Batch b = make_batch(m, {&s}, true);
    FeatureMap fr = to_feature_map(m.radio.forward(b.radio), 0);
    FeatureMap fv = to_feature_map(m.vision.forward(b.vision), 0);
    return {fr, crop(fv, b.rects[0])};
}

/// Per-sample singular values of the centred covariance of row vectors z_k.
inline std::vector<double> covariance_spectrum(const std::vector<std::vector<double>>& z) {
    if (z.size() < 2) throw DomainError("subspace_spectrum: need at least 2 samples");
    const std::size_t d = z[0].size();
    Eigen::MatrixXd Z(static_cast<Eigen::Index>(z.size()), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (z[k].size() != d) throw ShapeError("subspace_spectrum: embeddings differ in length");
        for (std::size_t i = 0; i < d; ++i) Z(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = z[k][i];
    }
    Eigen::MatrixXd Zc = Z.rowwise() - Z.colwise().mean();
    Eigen::MatrixXd cov = (Zc.transpose() * Zc) / static_cast<double>(z.size());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(cov);
    std::vector<double> s(svd.singularValues().data(), svd.singularValues().data() + svd.singularValues().size());
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
}

/**
 * Channel-wise and bin-wise spectra of a set of feature maps, concatenated
 * and sorted descending. Channel vectors average over bins (C-dim); bin
 * vectors average over channels (h*w-dim).
 */
inline std::vector<double> subspace_spectrum(const std::vector<FeatureMap>& maps) {
    if (maps.size() < 2) throw DomainError("subspace_spectrum: need at least 2 samples");
    std::vector<std::vector<double>> zc, zn;
    for (const auto& f : maps) {
        const std::size_t P = static_cast<std::size_t>(f.rows) * f.cols;
        std::vector<double> c(static_cast<std::size_t>(f.channels), 0.0), n(P, 0.0);
        for (int ch = 0; ch < f.channels; ++ch)
            for (std::size_t p = 0; p < P; ++p) {
                double v = f.data[ch * P + p];
                c[static_cast<std::size_t>(ch)] += v / static_cast<double>(P);
                n[p] += v / f.channels;
            }
        zc.push_back(std::move(c));
        zn.push_back(std::move(n));
    }
    auto s = covariance_spectrum(zc);
    auto t = covariance_spectrum(zn);
    s.insert(s.end(), t.begin(), t.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
}

}  // namespace rvl::ssl
