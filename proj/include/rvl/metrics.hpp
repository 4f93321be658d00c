#pragma once

/**
 * @file metrics.hpp
 * @brief Localisation error statistics and distribution deviations
 *        (quadratic 1-D Wasserstein, KL divergence, plug-in mutual information).
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "rvl/common.hpp"

namespace rvl {

/// Nearest rank: the ceil(p N)-th smallest sample (1-based).
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw DomainError("percentile: empty sample");
    if (!(p > 0.0 && p < 1.0)) throw DomainError("percentile: p must be in (0,1), got " + std::to_string(p));
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    // the 1e-9 keeps products like 0.9 * 10 from rounding up a rank
    auto k = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
    k = std::clamp<std::size_t>(k, 1, v.size());
    return v[k - 1];
}

struct ErrorStats {
    std::vector<double> sorted;  ///< [m], ascending
    double p50 = 0.0;
    double p90 = 0.0;
    double mean = 0.0;
    std::size_t count = 0;
};

inline ErrorStats error_stats(std::vector<double> errors) {
    if (errors.empty()) throw DomainError("error_stats: empty sample");
    ErrorStats s;
    std::sort(errors.begin(), errors.end());
    s.p50 = percentile(errors, 0.5);
    s.p90 = percentile(errors, 0.9);
    s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    s.count = errors.size();
    s.sorted = std::move(errors);
    return s;
}

/// Planar distance [m] between two (range m, azimuth deg) points.
inline double location_error(double r1, double az1_deg, double r2, double az2_deg) {
    const double x1 = r1 * std::sin(deg2rad(az1_deg)), y1 = r1 * std::cos(deg2rad(az1_deg));
    const double x2 = r2 * std::sin(deg2rad(az2_deg)), y2 = r2 * std::cos(deg2rad(az2_deg));
    return std::hypot(x1 - x2, y1 - y2);
}

/// Uniform bins over [lo, hi]; samples outside are clamped into the edge bins.
struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> counts;

    int bins() const { return static_cast<int>(counts.size()); }
    double width() const { return (hi - lo) / bins(); }
    bool same_edges(const Histogram& o) const { return lo == o.lo && hi == o.hi && counts.size() == o.counts.size(); }

    int bin_of(double x) const {
        int b = static_cast<int>(std::floor((x - lo) / width()));
        return std::clamp(b, 0, bins() - 1);
    }
    double total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }
    std::vector<double> mass() const {
        const double t = total();
        if (!(t > 0)) throw DomainError("histogram: no mass to normalise");
        std::vector<double> m(counts);
        for (double& x : m) x /= t;
        return m;
    }
};

inline Histogram make_histogram(const std::vector<double>& samples, double lo, double hi, int n_bins = 32) {
    if (n_bins < 2) throw DomainError("histogram: need >= 2 bins");
    if (!(hi > lo)) throw DomainError("histogram: need lo < hi");
    Histogram h{lo, hi, std::vector<double>(static_cast<std::size_t>(n_bins), 0.0)};
    for (double x : samples) h.counts[static_cast<std::size_t>(h.bin_of(x))] += 1.0;
    return h;
}

/// Quadratic-cost D_W = int_0^1 (F_p^{-1}(t) - F_q^{-1}(t))^2 dt over the empirical quantile functions.
inline double wasserstein_1d(std::vector<double> p, std::vector<double> q) {
    if (p.empty() || q.empty()) throw DomainError("wasserstein_1d: empty sample");
    std::sort(p.begin(), p.end());
    std::sort(q.begin(), q.end());
    const double n = static_cast<double>(p.size()), m = static_cast<double>(q.size());
    // walk the merged breakpoints i/n and j/m; both quantile functions are constant in between
    std::size_t i = 0, j = 0;
    double t = 0.0, acc = 0.0;
    while (i < p.size() && j < q.size()) {
        const double ti = (i + 1) / n, tj = (j + 1) / m;
        const double next = std::min(ti, tj);
        const double d = p[i] - q[j];
        acc += (next - t) * d * d;
        t = next;
        if (ti <= next) ++i;
        if (tj <= next) ++j;
    }
    return acc;
}

/// Quantile coupling on histograms: bin centres weighted by mass.
inline double wasserstein_hist(const Histogram& p, const Histogram& q) {
    auto mp = p.mass(), mq = q.mass();
    double acc = 0.0, t = 0.0, cp = 0.0, cq = 0.0;
    std::size_t i = 0, j = 0;
    auto centre = [](const Histogram& h, std::size_t b) { return h.lo + (static_cast<double>(b) + 0.5) * h.width(); };
    while (i < mp.size() && j < mq.size()) {
        const double ti = cp + mp[i], tj = cq + mq[j];
        const double next = std::min(ti, tj);
        const double d = centre(p, i) - centre(q, j);
        acc += (next - t) * d * d;
        t = next;
        if (ti <= next) { cp = ti; ++i; }
        if (tj <= next) { cq = tj; ++j; }
    }
    return acc;
}

/// sum p_i ln(p_i / (q_i + 1e-9)) over normalised masses.
inline double kl_div(const Histogram& p, const Histogram& q) {
    if (!p.same_edges(q)) throw DomainError("kl_div: histograms have different bin edges");
    constexpr double eps = 1e-9;
    auto mp = p.mass(), mq = q.mass();
    double s = 0.0;
    for (std::size_t i = 0; i < mp.size(); ++i)
        if (mp[i] > 0) s += mp[i] * std::log(mp[i] / (mq[i] + eps));
    return s;
}

/// Plug-in I(y; yhat) from an n_bins x n_bins joint histogram over [lo, hi]^2.
inline double mutual_info(const std::vector<double>& y, const std::vector<double>& yhat, double lo, double hi, int n_bins = 32) {
    if (y.size() != yhat.size()) throw DomainError("mutual_info: paired samples differ in length");
    if (y.size() < 2) throw DomainError("mutual_info: need >= 2 pairs");
    if (n_bins < 2) throw DomainError("mutual_info: need >= 2 bins");
    if (!(hi > lo)) throw DomainError("mutual_info: degenerate data (all samples in one bin)");
    Histogram axis{lo, hi, std::vector<double>(static_cast<std::size_t>(n_bins), 0.0)};
    const auto nb = static_cast<std::size_t>(n_bins);
    std::vector<double> joint(nb * nb, 0.0), py(nb, 0.0), pe(nb, 0.0);
    const double w = 1.0 / static_cast<double>(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
        const auto a = static_cast<std::size_t>(axis.bin_of(y[k])), b = static_cast<std::size_t>(axis.bin_of(yhat[k]));
        joint[a * nb + b] += w;
        py[a] += w;
        pe[b] += w;
    }
    double mi = 0.0;
    for (std::size_t a = 0; a < nb; ++a)
        for (std::size_t b = 0; b < nb; ++b) {
            const double pj = joint[a * nb + b];
            if (pj > 0) mi += pj * std::log(pj / (py[a] * pe[b]));
        }
    return std::max(mi, 0.0);
}

/// Same, with the window taken from the pooled sample range.
inline double mutual_info(const std::vector<double>& y, const std::vector<double>& yhat, int n_bins = 32) {
    if (y.empty() || yhat.empty()) throw DomainError("mutual_info: empty sample");
    auto [a0, a1] = std::minmax_element(y.begin(), y.end());
    auto [b0, b1] = std::minmax_element(yhat.begin(), yhat.end());
    return mutual_info(y, yhat, std::min(*a0, *b0), std::max(*a1, *b1), n_bins);
}

struct MetricsRow {
    std::string method;
    double p50 = 0.0;
    double p90 = 0.0;
    double dw_range = 0.0;
    double dw_angle = 0.0;
    double kl = 0.0;  ///< mean of the range and angle divergences
    double mi = 0.0;  ///< mean of the range and angle informations
};

/// Estimates vs groundtruth over a (range, azimuth) window.
inline MetricsRow evaluate_method(const std::string& method, const std::vector<double>& errors,
                                  const std::vector<double>& gt_range, const std::vector<double>& est_range,
                                  const std::vector<double>& gt_az, const std::vector<double>& est_az,
                                  double range_lo, double range_hi, double az_lo, double az_hi, int n_bins = 32) {
    MetricsRow row;
    row.method = method;
    auto st = error_stats(errors);
    row.p50 = st.p50;
    row.p90 = st.p90;
    row.dw_range = wasserstein_1d(gt_range, est_range);
    row.dw_angle = wasserstein_1d(gt_az, est_az);
    row.kl = 0.5 * (kl_div(make_histogram(gt_range, range_lo, range_hi, n_bins), make_histogram(est_range, range_lo, range_hi, n_bins)) +
                    kl_div(make_histogram(gt_az, az_lo, az_hi, n_bins), make_histogram(est_az, az_lo, az_hi, n_bins)));
    row.mi = 0.5 * (mutual_info(gt_range, est_range, range_lo, range_hi, n_bins) + mutual_info(gt_az, est_az, az_lo, az_hi, n_bins));
    return row;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << "method,p50,p90,D_W_range,D_W_angle,D_KL,MI\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.method << ',' << r.p50 << ',' << r.p90 << ',' << r.dw_range << ',' << r.dw_angle << ',' << r.kl << ',' << r.mi << '\n';
}

}  // namespace rvl
