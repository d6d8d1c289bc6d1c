#include "qcl/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace qcl {

std::size_t LongTailSpec::n_fault_per_class() const {
    validate();
    const double q = static_cast<double>(n_normal) / ib_rate;
    return static_cast<std::size_t>(std::llround(q));
}

void LongTailSpec::validate() const {
    if (n_normal == 0) throw ConfigError("long-tail spec: n_normal must be positive");
    if (!(ib_rate > 0.0)) throw ConfigError("long-tail spec: ib_rate must be positive");
    const double q = static_cast<double>(n_normal) / ib_rate;
    const double rounded = std::llround(q);
    if (q < 1.0 - 1e-9 || std::abs(q - rounded) > 1e-9) {
        std::ostringstream os;
        os << "long-tail spec: ib_rate " << ib_rate << " does not divide n_normal "
           << n_normal << " into integer per-class fault counts";
        throw ConfigError(os.str());
    }
    if (n_eval_per_class == 0) {
        throw ConfigError("long-tail spec: n_eval_per_class must be positive");
    }
}

double ib_rate(std::size_t n_normal, std::size_t n_fault) {
    if (n_fault == 0) throw ConfigError("ib_rate: fault count must be positive");
    return static_cast<double>(n_normal) / static_cast<double>(n_fault);
}

void SyntheticFaultModel::validate() const {
    if (fault_period < 2) throw ConfigError("fault model: fault_period must be >= 2");
    if (!(resonance_freq > 0.0 && resonance_freq < 0.5)) {
        throw ConfigError("fault model: resonance_freq must be in (0, 0.5)");
    }
    if (!(decay > 0.0 && decay < 1.0)) {
        throw ConfigError("fault model: decay must be in (0, 1)");
    }
    if (amplitude < 0.0) throw ConfigError("fault model: amplitude must be >= 0");
    if (noise_std < 0.0) throw ConfigError("fault model: noise_std must be >= 0");
}

std::vector<double> generate_signal(const SyntheticFaultModel& model, std::size_t length,
                                    std::uint64_t seed) {
    model.validate();
    if (length < model.fault_period) {
        throw ConfigError("generate_signal: length " + std::to_string(length) +
                          " shorter than fault_period " +
                          std::to_string(model.fault_period));
    }
    std::vector<double> x(length, 0.0);
    if (model.amplitude > 0.0) {
        // Each impact rings as amplitude * decay^t * cos(2 pi f t); rings are
        // truncated once the envelope falls below 1e-12 of the amplitude.
        const double two_pi = 6.283185307179586476925286766559;
        const std::size_t ring_len = std::min<std::size_t>(
            length, static_cast<std::size_t>(std::ceil(std::log(1e-12) / std::log(model.decay))));
        std::vector<double> ring(ring_len);
        double envelope = model.amplitude;
        for (std::size_t t = 0; t < ring_len; ++t) {
            ring[t] = envelope * std::cos(two_pi * model.resonance_freq *
                                          static_cast<double>(t));
            envelope *= model.decay;
        }
        for (std::size_t onset = 0; onset < length; onset += model.fault_period) {
            const std::size_t span = std::min(ring_len, length - onset);
            for (std::size_t t = 0; t < span; ++t) x[onset + t] += ring[t];
        }
    }
    if (model.noise_std > 0.0) {
        Rng rng(seed);
        for (double& v : x) v += model.noise_std * rng.normal();
    }
    return x;
}

namespace {

LabeledWindow draw_window(const std::vector<std::vector<double>>& recs, std::size_t label,
                          std::size_t window, Rng& rng) {
    const std::size_t ri = recs.size() == 1 ? 0 : rng.uniform_index(recs.size());
    const auto& rec = recs[ri];
    const std::size_t start = rng.uniform_index(rec.size() - window + 1);
    LabeledWindow w;
    w.label = label;
    w.samples.assign(rec.begin() + static_cast<std::ptrdiff_t>(start),
                     rec.begin() + static_cast<std::ptrdiff_t>(start + window));
    return w;
}

}  // namespace

DatasetSplits build_long_tail_split(const Recordings& recordings, const LongTailSpec& spec,
                                    std::size_t window, std::uint64_t seed) {
    spec.validate();
    if (window == 0) throw ConfigError("build_long_tail_split: window must be positive");
    if (recordings.size() < 2) {
        throw ConfigError("build_long_tail_split: need at least 2 classes, got " +
                          std::to_string(recordings.size()));
    }
    const std::size_t num_classes = recordings.size();
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto it = recordings.find(c);
        if (it == recordings.end()) {
            throw ConfigError("build_long_tail_split: class labels must be contiguous, " +
                              std::to_string(c) + " missing");
        }
        if (it->second.empty()) {
            throw ConfigError("build_long_tail_split: class " + std::to_string(c) +
                              " has no recordings");
        }
        for (const auto& rec : it->second) {
            if (rec.size() < window) {
                throw ConfigError("build_long_tail_split: a class " + std::to_string(c) +
                                  " recording has " + std::to_string(rec.size()) +
                                  " samples, window needs " + std::to_string(window));
            }
        }
    }

    const std::size_t n_fault = spec.n_fault_per_class();
    Rng rng(seed);
    DatasetSplits splits;
    splits.num_classes = num_classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const auto& recs = recordings.at(c);
        const std::size_t n_train = c == 0 ? spec.n_normal : n_fault;
        for (std::size_t i = 0; i < n_train; ++i)
            splits.train.push_back(draw_window(recs, c, window, rng));
        for (std::size_t i = 0; i < spec.n_eval_per_class; ++i)
            splits.val.push_back(draw_window(recs, c, window, rng));
        for (std::size_t i = 0; i < spec.n_eval_per_class; ++i)
            splits.test.push_back(draw_window(recs, c, window, rng));
    }
    return splits;
}

void apply_standardize(std::vector<LabeledWindow>& windows, const StandardizeStats& stats) {
    for (auto& w : windows) {
        for (double& v : w.samples) v = (v - stats.mean) / stats.std_dev;
    }
}

StandardizeStats standardize(DatasetSplits& splits) {
    if (splits.train.empty()) throw ConfigError("standardize: empty training split");
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& w : splits.train) {
        for (double v : w.samples) sum += v;
        count += w.samples.size();
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const auto& w : splits.train) {
        for (double v : w.samples) sq += (v - mean) * (v - mean);
    }
    const double std_dev = std::sqrt(sq / static_cast<double>(count));
    if (std_dev == 0.0) {
        throw DegenerateInputError("standardize: training data is constant (zero std)");
    }
    StandardizeStats stats{mean, std_dev};
    apply_standardize(splits.train, stats);
    apply_standardize(splits.val, stats);
    apply_standardize(splits.test, stats);
    return stats;
}

// --- Ingestion --------------------------------------------------------------

namespace {

IngestFormat parse_format(const std::string& s) {
    if (s == "csv") return IngestFormat::csv;
    if (s == "raw_f32le") return IngestFormat::raw_f32le;
    throw IngestError("manifest: unknown format \"" + s + "\"");
}

std::string format_name(IngestFormat f) {
    return f == IngestFormat::csv ? "csv" : "raw_f32le";
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IngestError("manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    if (!j.contains("schema_version")) {
        throw IngestError("manifest " + path.string() + ": missing schema_version");
    }
    m.schema_version = j.at("schema_version").get<int>();
    m.format = parse_format(j.at("format").get<std::string>());
    for (const auto& e : j.at("recordings")) {
        ManifestEntry entry;
        entry.file = e.at("file").get<std::string>();
        entry.label = e.at("label").get<std::size_t>();
        entry.sample_rate = e.value("sample_rate", 0.0);
        m.entries.push_back(std::move(entry));
    }
    return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    nlohmann::json j;
    j["schema_version"] = manifest.schema_version;
    j["format"] = format_name(manifest.format);
    j["recordings"] = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        nlohmann::json je;
        je["file"] = e.file;
        je["label"] = e.label;
        if (e.sample_rate > 0.0) je["sample_rate"] = e.sample_rate;
        j["recordings"].push_back(je);
    }
    std::ofstream out(path);
    if (!out) throw IngestError("manifest: cannot write " + path.string());
    out << j.dump(2) << "\n";
}

std::vector<double> read_csv_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("csv: cannot open " + path.string());
    std::vector<double> values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        std::size_t begin = line.find_first_not_of(' ');
        if (begin == std::string::npos) continue;  // blank line
        double v = 0.0;
        const char* first = line.data() + begin;
        const char* last = line.data() + line.size();
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last) {
            throw IngestError("csv " + path.string() + ": parse failure at line " +
                              std::to_string(lineno) + ": \"" + line + "\"");
        }
        values.push_back(v);
    }
    return values;
}

std::vector<double> read_raw_f32le(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("raw_f32le: cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) {
        throw IngestError("raw_f32le " + path.string() + ": truncated stream, " +
                          std::to_string(bytes.size() % 4) + " stray bytes at offset " +
                          std::to_string(bytes.size() - bytes.size() % 4));
    }
    std::vector<double> values(bytes.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                          (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
        values[i] = static_cast<double>(std::bit_cast<float>(u));
    }
    return values;
}

void write_raw_f32le(const std::filesystem::path& path, const std::vector<double>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("raw_f32le: cannot write " + path.string());
    std::vector<unsigned char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        bytes[4 * i] = static_cast<unsigned char>(u & 0xff);
        bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
        bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
        bytes[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

Recordings ingest(const Manifest& manifest, const std::filesystem::path& base_dir) {
    Recordings recordings;
    for (const auto& entry : manifest.entries) {
        const auto path = base_dir / entry.file;
        std::vector<double> values = manifest.format == IngestFormat::csv
                                         ? read_csv_values(path)
                                         : read_raw_f32le(path);
        recordings[entry.label].push_back(std::move(values));
    }
    return recordings;
}

// --- Augmentations ----------------------------------------------------------

std::vector<double> add_gaussian_noise(const std::vector<double>& x, double noise_std,
                                       Rng& rng) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + noise_std * rng.normal();
    return out;
}

std::vector<double> random_scale(const std::vector<double>& x, double mean, double std_dev,
                                 Rng& rng) {
    const double s = rng.normal(mean, std_dev);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
    return out;
}

std::vector<double> stretch_by_factor(const std::vector<double>& x, double r) {
    const std::size_t n = x.size();
    if (n < 2) throw ConfigError("stretch: window must have at least 2 samples");
    if (!(r >= 0.0 && r <= 1.0)) {
        throw ConfigError("stretch: factor must be in [0, 1], got " + std::to_string(r));
    }
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double pos = r * static_cast<double>(j);
        const std::size_t i0 = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i0);
        const std::size_t i1 = std::min(i0 + 1, n - 1);
        out[j] = x[i0] * (1.0 - frac) + x[i1] * frac;
    }
    return out;
}

std::vector<double> random_stretch(const std::vector<double>& x, Rng& rng) {
    return stretch_by_factor(x, rng.uniform());
}

std::vector<double> crop_at(const std::vector<double>& x, std::size_t start,
                            std::size_t len) {
    if (start + len > x.size()) {
        throw ConfigError("crop: interval [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") exceeds window of " +
                          std::to_string(x.size()));
    }
    std::vector<double> out = x;
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(start),
              out.begin() + static_cast<std::ptrdiff_t>(start + len), 0.0);
    return out;
}

std::vector<double> random_crop(const std::vector<double>& x, std::size_t len, Rng& rng) {
    if (x.size() <= len) {
        throw ConfigError("random_crop: window of " + std::to_string(x.size()) +
                          " too short for crop interval " + std::to_string(len));
    }
    return crop_at(x, rng.uniform_index(x.size() - len + 1), len);
}

std::vector<double> make_view(const std::vector<double>& x, const AugmentConfig& cfg,
                              Rng& rng, AugmentationFlags* fired) {
    const double p_any =
        1.0 - (1.0 - cfg.p_noise) * (1.0 - cfg.p_scale) * (1.0 - cfg.p_stretch) *
                  (1.0 - cfg.p_crop);
    while (true) {
        const bool noise = rng.uniform() < cfg.p_noise;
        const bool scale = rng.uniform() < cfg.p_scale;
        const bool stretch = rng.uniform() < cfg.p_stretch;
        const bool crop = rng.uniform() < cfg.p_crop;
        if (fired) *fired = {noise, scale, stretch, crop};
        if (!(noise || scale || stretch || crop)) {
            // Retry so the view differs from the raw sample. Skipped when no
            // augmentation can ever fire, or when disabled for testing.
            if (cfg.retry_if_identity && p_any > 0.0) continue;
            return x;
        }
        std::vector<double> v = x;
        if (noise) v = add_gaussian_noise(v, cfg.noise_std, rng);
        if (scale) v = random_scale(v, cfg.scale_mean, cfg.scale_std, rng);
        if (stretch) v = random_stretch(v, rng);
        if (crop) v = random_crop(v, cfg.crop_len, rng);
        return v;
    }
}

std::pair<std::vector<double>, std::vector<double>> make_view_pair(
    const std::vector<double>& x, const AugmentConfig& cfg, Rng& rng) {
    auto v1 = make_view(x, cfg, rng);
    auto v2 = make_view(x, cfg, rng);
    return {std::move(v1), std::move(v2)};
}

}  // namespace qcl
