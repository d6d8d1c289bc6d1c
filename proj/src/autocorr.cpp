#include "qcl/autocorr.hpp"

#include <cmath>
#include <fstream>

#include "qcl/rng.hpp"

namespace qcl {

std::vector<double> autocorrelation(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> r(n, 0.0);
    for (std::size_t tau = 0; tau < n; ++tau) {
        double acc = 0.0;
        for (std::size_t i = 0; i + tau < n; ++i) acc += x[i] * x[i + tau];
        r[tau] = acc;
    }
    return r;
}

std::vector<double> learnable_autocorrelation(
    const std::vector<double>& x, const std::vector<std::vector<double>>& weights) {
    const std::size_t n = x.size();
    if (weights.size() != n) {
        throw DimensionError("learnable_autocorrelation: " + std::to_string(weights.size()) +
                             " weight vectors for " + std::to_string(n) + " lags");
    }
    std::vector<double> r(n, 0.0);
    for (std::size_t tau = 0; tau < n; ++tau) {
        if (weights[tau].size() != n - tau) {
            throw DimensionError("learnable_autocorrelation: lag " + std::to_string(tau) +
                                 " weight vector has length " +
                                 std::to_string(weights[tau].size()) + ", expected " +
                                 std::to_string(n - tau));
        }
        double acc = 0.0;
        for (std::size_t i = 0; i + tau < n; ++i) acc += weights[tau][i] * x[i] * x[i + tau];
        r[tau] = acc;
    }
    return r;
}

std::vector<double> AutocorrDecomposition::total() const {
    std::vector<double> t(autocorr_part.size());
    for (std::size_t j = 0; j < t.size(); ++j) {
        t[j] = autocorr_part[j] + conv_part[j] + constant;
    }
    return t;
}

AutocorrDecomposition decompose_quadratic(const QuadraticConvLayer& layer,
                                          const std::vector<double>& x) {
    if (layer.neuron != Neuron::quadratic || layer.variant != QuadraticVariant::full) {
        throw UnsupportedError(
            "decompose_quadratic: only the full quadratic neuron decomposes into "
            "autocorrelation + convolution");
    }
    if (layer.ch_in != 1 || layer.ch_out != 1) {
        throw UnsupportedError("decompose_quadratic: restricted to single-channel layers "
                               "(got ch_in=" +
                               std::to_string(layer.ch_in) + ", ch_out=" +
                               std::to_string(layer.ch_out) + ")");
    }
    const std::size_t k = layer.kernel;
    const std::size_t n = x.size();
    const std::size_t padded_n = n + 2 * layer.padding;
    if (k > padded_n) {
        throw DimensionError("decompose_quadratic: kernel " + std::to_string(k) +
                             " exceeds padded input length " + std::to_string(padded_n));
    }
    const std::size_t m = (padded_n - k) / layer.stride + 1;

    const auto& wr = layer.w_r->data;
    const auto& wg = layer.w_g->data;
    const auto& wb = layer.w_b->data;
    const double br = layer.b_r->data[0];
    const double bg = layer.b_g->data[0];
    const double c = layer.c->data[0];

    // Lag weights from the quadratic-form expansion over one window.
    std::vector<std::vector<double>> lag_weights(k);
    for (std::size_t tau = 0; tau < k; ++tau) {
        lag_weights[tau].resize(k - tau);
        for (std::size_t i = 0; i + tau < k; ++i) {
            lag_weights[tau][i] = tau == 0 ? wr[i] * wg[i] + wb[i]
                                           : wr[i] * wg[i + tau] + wr[i + tau] * wg[i];
        }
    }

    std::vector<double> padded(padded_n, 0.0);
    for (std::size_t i = 0; i < n; ++i) padded[i + layer.padding] = x[i];

    AutocorrDecomposition dec;
    dec.autocorr_part.resize(m);
    dec.conv_part.resize(m);
    dec.constant = br * bg + c;
    std::vector<double> window(k);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < k; ++i) window[i] = padded[j * layer.stride + i];
        const auto lags = learnable_autocorrelation(window, lag_weights);
        double acc = 0.0;
        for (double v : lags) acc += v;
        dec.autocorr_part[j] = acc;
        double conv_r = 0.0, conv_g = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            conv_r += wr[i] * window[i];
            conv_g += wg[i] * window[i];
        }
        dec.conv_part[j] = bg * conv_r + br * conv_g;
    }
    return dec;
}

double NoiseSuppressionReport::mean_rel_deviation(std::size_t lag_lo,
                                                  std::size_t lag_hi) const {
    if (lag_lo == 0 || lag_hi < lag_lo || lag_hi >= rel_deviation.size()) {
        throw ConfigError("noise report: lag range must satisfy 1 <= lo <= hi < n");
    }
    double acc = 0.0;
    for (std::size_t tau = lag_lo; tau <= lag_hi; ++tau) acc += rel_deviation[tau];
    return acc / static_cast<double>(lag_hi - lag_lo + 1);
}

NoiseSuppressionReport noise_suppression_report(const std::vector<double>& clean,
                                                double noise_std, std::size_t trials,
                                                std::uint64_t seed) {
    if (trials < 100) {
        throw ConfigError("noise_suppression_report: need at least 100 trials, got " +
                          std::to_string(trials));
    }
    const std::size_t n = clean.size();
    NoiseSuppressionReport report;
    report.r_clean = autocorrelation(clean);
    report.expected_lag0 = static_cast<double>(n) * noise_std * noise_std;

    std::vector<double> mean_ryy;
    if (noise_std == 0.0) {
        mean_ryy = report.r_clean;  // every trial is the clean signal
    } else {
        mean_ryy.assign(n, 0.0);
        Rng root(seed);
        std::vector<double> noisy(n);
        for (std::size_t trial = 0; trial < trials; ++trial) {
            Rng rng = root.split(trial);
            for (std::size_t i = 0; i < n; ++i) noisy[i] = clean[i] + noise_std * rng.normal();
            const auto ryy = autocorrelation(noisy);
            for (std::size_t tau = 0; tau < n; ++tau) mean_ryy[tau] += ryy[tau];
        }
        for (double& v : mean_ryy) v /= static_cast<double>(trials);
    }

    report.r_noisy_mean = std::move(mean_ryy);
    report.rel_deviation.resize(n, 0.0);
    for (std::size_t tau = 0; tau < n; ++tau) {
        report.rel_deviation[tau] = std::abs(report.r_noisy_mean[tau] - report.r_clean[tau]) /
                                    (std::abs(report.r_clean[tau]) + 1e-12);
    }
    report.lag0_inflation = report.r_noisy_mean[0] - report.r_clean[0];
    return report;
}

void write_noise_report_csv(const std::filesystem::path& path,
                            const NoiseSuppressionReport& report) {
    std::ofstream out(path);
    if (!out) throw IngestError("noise report: cannot write " + path.string());
    out << "lag,r_xx,mean_r_yy,rel_deviation\n";
    out.precision(17);
    for (std::size_t tau = 0; tau < report.r_clean.size(); ++tau) {
        out << tau << "," << report.r_clean[tau] << "," << report.r_noisy_mean[tau] << ","
            << report.rel_deviation[tau] << "\n";
    }
}

}  // namespace qcl
