#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qcl/errors.hpp"
#include "qcl/rng.hpp"

namespace qcl {

// A fixed-length signal window with its class label.
struct LabeledWindow {
    std::vector<double> samples;
    std::size_t label = 0;
};

// Per-class training counts derived from an imbalance rate. The healthy
// (head) class keeps n_normal windows; every fault class gets
// n_normal / ib_rate. Validation and test stay class-balanced.
struct LongTailSpec {
    std::size_t n_normal = 500;
    double ib_rate = 1.0;
    std::size_t n_eval_per_class = 250;

    std::size_t n_fault_per_class() const;
    void validate() const;
};

double ib_rate(std::size_t n_normal, std::size_t n_fault);

// Impulse-train stand-in for a measured bearing channel: one decaying
// resonance ring per fault impact plus white Gaussian noise. Healthy class
// uses zero impulse amplitude.
struct SyntheticFaultModel {
    std::size_t fault_period = 64;  // samples between impacts, >= 2
    double resonance_freq = 0.125;  // cycles per sample, in (0, 0.5)
    double decay = 0.85;            // per-sample ring decay, in (0, 1)
    double amplitude = 1.0;
    double noise_std = 0.0;

    void validate() const;
};

std::vector<double> generate_signal(const SyntheticFaultModel& model, std::size_t length,
                                    std::uint64_t seed);

// class label -> recordings (each a long 1-D sample sequence)
using Recordings = std::map<std::size_t, std::vector<std::vector<double>>>;

struct DatasetSplits {
    std::vector<LabeledWindow> train;
    std::vector<LabeledWindow> val;
    std::vector<LabeledWindow> test;
    std::size_t num_classes = 0;
};

// Draws windows at uniformly random start offsets (with replacement).
DatasetSplits build_long_tail_split(const Recordings& recordings, const LongTailSpec& spec,
                                    std::size_t window, std::uint64_t seed);

struct StandardizeStats {
    double mean = 0.0;
    double std_dev = 1.0;
};

// Global mean/std over every training value; the identical affine transform
// is applied to all three splits.
StandardizeStats standardize(DatasetSplits& splits);
void apply_standardize(std::vector<LabeledWindow>& windows, const StandardizeStats& stats);

// --- Ingestion --------------------------------------------------------------

enum class IngestFormat { csv, raw_f32le };

struct ManifestEntry {
    std::string file;
    std::size_t label = 0;
    double sample_rate = 0.0;
};

struct Manifest {
    int schema_version = 1;
    IngestFormat format = IngestFormat::raw_f32le;
    std::vector<ManifestEntry> entries;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// One numeric value per line, UTF-8, '.' decimal separator.
std::vector<double> read_csv_values(const std::filesystem::path& path);
// Headerless little-endian 32-bit float stream, widened to 64-bit.
std::vector<double> read_raw_f32le(const std::filesystem::path& path);
void write_raw_f32le(const std::filesystem::path& path, const std::vector<double>& values);

Recordings ingest(const Manifest& manifest, const std::filesystem::path& base_dir);

// --- Augmentations ----------------------------------------------------------

struct AugmentConfig {
    double p_noise = 0.5;
    double p_scale = 0.5;
    double p_stretch = 0.5;
    double p_crop = 0.5;
    double noise_std = 0.1;    // additive Gaussian, variance 0.01
    double scale_mean = 1.0;   // multiplicative factor center (see README)
    double scale_std = 0.1;
    std::size_t crop_len = 30;
    bool retry_if_identity = true;  // redraw until at least one augmentation fires
};

// x + n with n ~ N(0, std^2) i.i.d. per sample.
std::vector<double> add_gaussian_noise(const std::vector<double>& x, double noise_std,
                                       Rng& rng);
// s * x with one scalar s ~ N(mean, std^2) per window.
std::vector<double> random_scale(const std::vector<double>& x, double mean, double std_dev,
                                 Rng& rng);
// Deterministic core: linear interpolation of x at positions r*j, kept at
// length n. r = 1 is the identity; r near 0 collapses toward x[0].
std::vector<double> stretch_by_factor(const std::vector<double>& x, double r);
// r ~ U(0, 1) then stretch_by_factor.
std::vector<double> random_stretch(const std::vector<double>& x, Rng& rng);
// Deterministic core: zero out x[start, start+len).
std::vector<double> crop_at(const std::vector<double>& x, std::size_t start, std::size_t len);
// start ~ U{0..n-len}; requires n > len.
std::vector<double> random_crop(const std::vector<double>& x, std::size_t len, Rng& rng);

// Which augmentations fired for one view.
struct AugmentationFlags {
    bool noise = false;
    bool scale = false;
    bool stretch = false;
    bool crop = false;
};

// One augmented view: each augmentation fires independently with its
// configured probability, composed noise -> scale -> stretch -> crop.
std::vector<double> make_view(const std::vector<double>& x, const AugmentConfig& cfg,
                              Rng& rng, AugmentationFlags* fired = nullptr);
std::pair<std::vector<double>, std::vector<double>> make_view_pair(
    const std::vector<double>& x, const AugmentConfig& cfg, Rng& rng);

}  // namespace qcl
