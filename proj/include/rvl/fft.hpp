#pragma once

/**
 * @file fft.hpp
 * @brief Minimal RAII wrapper over FFTW for strided batches of 1-D complex DFTs.
 */

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <span>
#include <vector>

#include "rvl/common.hpp"

namespace rvl::fft {

using cplx = std::complex<double>;

enum class Sign { Forward = FFTW_FORWARD, Backward = FFTW_BACKWARD };

namespace detail {
// FFTW planning is not thread-safe.
inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

/**
 * @brief In-place unnormalized DFT along one axis of a row-major 2-D array.
 *
 * Forward:  X[k] = sum_n x[n] e^{-j 2 pi n k / N}
 * Backward: X[k] = sum_n x[n] e^{+j 2 pi n k / N}
 */
class AxisPlan {
public:
    AxisPlan(std::span<cplx> data, int rows, int cols, int axis, Sign sign) {
        if (static_cast<std::size_t>(rows) * cols != data.size())
            throw ShapeError("fft: data size does not match rows*cols");
        int n = axis == 0 ? rows : cols;
        int howmany = axis == 0 ? cols : rows;
        int stride = axis == 0 ? cols : 1;
        int dist = axis == 0 ? 1 : cols;
        auto* p = reinterpret_cast<fftw_complex*>(data.data());
        std::lock_guard<std::mutex> lock(detail::planner_mutex());
        plan_ = fftw_plan_many_dft(1, &n, howmany, p, nullptr, stride, dist, p, nullptr, stride, dist,
                                   static_cast<int>(sign), FFTW_ESTIMATE);
        if (!plan_) throw Error("fft: FFTW failed to create a plan");
    }
    AxisPlan(const AxisPlan&) = delete;
    AxisPlan& operator=(const AxisPlan&) = delete;
    ~AxisPlan() {
        std::lock_guard<std::mutex> lock(detail::planner_mutex());
        fftw_destroy_plan(plan_);
    }
    void execute() { fftw_execute(plan_); }

private:
    fftw_plan plan_ = nullptr;
};

inline void transform_axis(std::vector<cplx>& data, int rows, int cols, int axis, Sign sign) {
    AxisPlan plan(data, rows, cols, axis, sign);
    plan.execute();
}

/// 1-D unnormalized DFT of a vector (returns a new vector).
inline std::vector<cplx> dft(std::vector<cplx> x, Sign sign) {
    transform_axis(x, 1, static_cast<int>(x.size()), 1, sign);
    return x;
}

}  // namespace rvl::fft
