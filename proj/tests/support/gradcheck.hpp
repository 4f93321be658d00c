#pragma once

// Central finite-difference gradient check against the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "rvl/autodiff.hpp"

namespace rvl::testing {

struct GradCheck {
    double max_rel = 0;
    std::string worst;
};

/// Relative error |a - n| / max(|a|, |n|, floor) over every parameter element.
inline GradCheck grad_check(ad::ParamSet& ps, const std::function<ad::Tensor()>& loss, double h = 1e-5,
                            double floor = 1e-6) {
    ps.zero_grad();
    ad::backward(loss());
    GradCheck out;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        std::vector<double> analytic = ps[i].grad();
        analytic.resize(ps[i].size(), 0.0);
        auto& v = ps[i].mutable_values();
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double x0 = v[j];
            v[j] = x0 + h;
            double fp = loss().item();
            v[j] = x0 - h;
            double fm = loss().item();
            v[j] = x0;
            double numeric = (fp - fm) / (2 * h);
            double rel = std::abs(analytic[j] - numeric) /
                         std::max({std::abs(analytic[j]), std::abs(numeric), floor});
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = ps.name(i) + "[" + std::to_string(j) + "] analytic=" + std::to_string(analytic[j]) +
                            " numeric=" + std::to_string(numeric);
            }
        }
    }
    ps.zero_grad();
    return out;
}

inline std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

}  // namespace rvl::testing
