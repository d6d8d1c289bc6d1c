#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qcl/qnn.hpp"

namespace qcl {

// Translation-only autocorrelation: R[tau] = sum_i x_i * x_{i+tau} for
// tau = 0..n-1.
std::vector<double> autocorrelation(const std::vector<double>& x);

// Lag-wise weighted autocorrelation: r[tau] = sum_i w_tau[i] * x_i * x_{i+tau}.
// weights[tau] must have length n - tau; all-ones weights recover
// autocorrelation exactly.
std::vector<double> learnable_autocorrelation(
    const std::vector<double>& x, const std::vector<std::vector<double>>& weights);

// The pre-activation of a single-channel quadratic convolution split into a
// learnable-autocorrelation term over each window, a conventional
// convolution term, and a constant. The three add back to the quadratic
// pre-activation exactly.
struct AutocorrDecomposition {
    std::vector<double> autocorr_part;  // per output position
    std::vector<double> conv_part;      // b_g * (x * w_r) + b_r * (x * w_g), per position
    double constant = 0.0;              // b_r * b_g + c

    std::vector<double> total() const;
};

// Requires ch_in == ch_out == 1, full quadratic variant. The per-window lag
// weights follow from expanding (x*w_r + b_r)(x*w_g + b_g) + (x.x)*w_b + c:
//   W_0[i]   = w_r[i] w_g[i] + w_b[i]
//   W_tau[i] = w_r[i] w_g[i+tau] + w_r[i+tau] w_g[i]      (tau >= 1)
AutocorrDecomposition decompose_quadratic(const QuadraticConvLayer& layer,
                                          const std::vector<double>& x);

// Monte-Carlo check that autocorrelation suppresses additive white noise:
// away from lag 0 the averaged noisy autocorrelation converges to the clean
// one, while lag 0 inflates by about n * sigma^2.
struct NoiseSuppressionReport {
    std::vector<double> r_clean;        // r_xx
    std::vector<double> r_noisy_mean;   // mean over trials of r_yy
    std::vector<double> rel_deviation;  // |r_yy - r_xx| / (|r_xx| + 1e-12)
    double lag0_inflation = 0.0;        // r_noisy_mean[0] - r_clean[0]
    double expected_lag0 = 0.0;         // n * sigma^2

    double mean_rel_deviation(std::size_t lag_lo, std::size_t lag_hi) const;
};

NoiseSuppressionReport noise_suppression_report(const std::vector<double>& clean,
                                                double noise_std, std::size_t trials,
                                                std::uint64_t seed);

// CSV export: lag, r_xx, mean r_yy, relative deviation.
void write_noise_report_csv(const std::filesystem::path& path,
                            const NoiseSuppressionReport& report);

}  // namespace qcl
