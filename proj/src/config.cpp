#include "qcl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace qcl {

using ordered_json = nlohmann::ordered_json;

std::string strip_json_comments(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    enum class State { code, in_string, line_comment, block_comment };
    State st = State::code;
    const std::size_t n = text.size();
    for (std::size_t i = 0; i < n; ++i) {
        const char ch = text[i];
        switch (st) {
            case State::code:
                if (ch == '"') {
                    st = State::in_string;
                    out += ch;
                } else if (ch == '/' && i + 1 < n && text[i + 1] == '/') {
                    st = State::line_comment;
                    ++i;
                } else if (ch == '/' && i + 1 < n && text[i + 1] == '*') {
                    st = State::block_comment;
                    ++i;
                } else {
                    out += ch;
                }
                break;
            case State::in_string:
                out += ch;
                if (ch == '\\' && i + 1 < n) {
                    out += text[++i];
                } else if (ch == '"') {
                    st = State::code;
                }
                break;
            case State::line_comment:
                if (ch == '\n') {
                    st = State::code;
                    out += ch;
                }
                break;
            case State::block_comment:
                if (ch == '*' && i + 1 < n && text[i + 1] == '/') {
                    st = State::code;
                    ++i;
                } else if (ch == '\n') {
                    out += ch;  // keep line numbers stable for diagnostics
                }
                break;
        }
    }
    return out;
}

namespace {

void check_keys(const ordered_json& j, const std::vector<std::string>& allowed,
                const std::string& section) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("config: unknown key \"" + key + "\" in " + section);
        }
    }
}

[[noreturn]] void rethrow_parse_error(const nlohmann::json::parse_error& e,
                                      const std::string& text) {
    std::size_t line = 1;
    const std::size_t limit = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i < limit; ++i) {
        if (text[i] == '\n') ++line;
    }
    throw ConfigError("config: parse error at line " + std::to_string(line) + ": " +
                      e.what());
}

SyntheticFaultModel model_from_json(const ordered_json& j) {
    check_keys(j, {"fault_period", "resonance_freq", "decay", "amplitude", "noise_std"},
               "data.classes[]");
    SyntheticFaultModel m;
    m.fault_period = j.value("fault_period", m.fault_period);
    m.resonance_freq = j.value("resonance_freq", m.resonance_freq);
    m.decay = j.value("decay", m.decay);
    m.amplitude = j.value("amplitude", m.amplitude);
    m.noise_std = j.value("noise_std", m.noise_std);
    return m;
}

ordered_json model_to_json(const SyntheticFaultModel& m) {
    ordered_json j;
    j["fault_period"] = m.fault_period;
    j["resonance_freq"] = m.resonance_freq;
    j["decay"] = m.decay;
    j["amplitude"] = m.amplitude;
    j["noise_std"] = m.noise_std;
    return j;
}

}  // namespace

void RunConfig::validate() const {
    if (schema_version != 1) {
        throw ConfigError("config: unsupported schema_version " +
                          std::to_string(schema_version));
    }
    if (data.source != "synthetic" && data.source != "ingest") {
        throw ConfigError("config: data.source must be \"synthetic\" or \"ingest\", got \"" +
                          data.source + "\"");
    }
    if (data.source == "synthetic" && data.classes.size() < 2) {
        throw ConfigError("config: synthetic source needs at least 2 classes");
    }
    if (data.source == "ingest" && data.manifest.empty()) {
        throw ConfigError("config: ingest source needs data.manifest");
    }
    if (data.window <= train.augment.crop_len) {
        throw ConfigError("config: window must exceed the crop interval of " +
                          std::to_string(train.augment.crop_len));
    }
    data.split.validate();
    train.validate();
    if (train.backbone.input_len != data.window) {
        throw ConfigError("config: backbone input_len diverged from data.window");
    }
}

RunConfig parse_run_config(const std::string& text) {
    const std::string stripped = strip_json_comments(text);
    ordered_json j;
    try {
        j = ordered_json::parse(stripped);
    } catch (const nlohmann::json::parse_error& e) {
        rethrow_parse_error(e, stripped);
    }

    check_keys(j, {"schema_version", "seed", "out_dir", "data", "model", "train", "augment"},
               "top level");
    if (!j.contains("schema_version")) {
        throw ConfigError("config: schema_version field is mandatory");
    }

    RunConfig cfg;
    try {
        cfg.schema_version = j.at("schema_version").get<int>();
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);

        if (j.contains("data")) {
            const auto& jd = j.at("data");
            check_keys(jd,
                       {"source", "window", "recording_len", "classes", "manifest", "split"},
                       "data");
            cfg.data.source = jd.value("source", cfg.data.source);
            cfg.data.window = jd.value("window", cfg.data.window);
            cfg.data.recording_len = jd.value("recording_len", cfg.data.recording_len);
            cfg.data.manifest = jd.value("manifest", cfg.data.manifest);
            if (jd.contains("classes")) {
                cfg.data.classes.clear();
                for (const auto& jc : jd.at("classes")) {
                    cfg.data.classes.push_back(model_from_json(jc));
                }
            }
            if (jd.contains("split")) {
                const auto& js = jd.at("split");
                check_keys(js, {"n_normal", "ib_rate", "n_eval_per_class"}, "data.split");
                cfg.data.split.n_normal = js.value("n_normal", cfg.data.split.n_normal);
                cfg.data.split.ib_rate = js.value("ib_rate", cfg.data.split.ib_rate);
                cfg.data.split.n_eval_per_class =
                    js.value("n_eval_per_class", cfg.data.split.n_eval_per_class);
            }
        }

        if (j.contains("model")) {
            const auto& jm = j.at("model");
            check_keys(jm,
                       {"neuron", "variant", "n_blocks", "stem_kernel", "block_kernel",
                        "channels", "embed_dim"},
                       "model");
            auto& bb = cfg.train.backbone;
            bb.neuron = neuron_from_string(jm.value("neuron", to_string(bb.neuron)));
            bb.variant = variant_from_string(jm.value("variant", to_string(bb.variant)));
            bb.n_blocks = jm.value("n_blocks", bb.n_blocks);
            bb.stem_kernel = jm.value("stem_kernel", bb.stem_kernel);
            bb.block_kernel = jm.value("block_kernel", bb.block_kernel);
            if (jm.contains("channels")) {
                bb.channels = jm.at("channels").get<std::vector<std::size_t>>();
            }
            cfg.train.embed_dim = jm.value("embed_dim", cfg.train.embed_dim);
        }

        if (j.contains("train")) {
            const auto& jt = j.at("train");
            check_keys(jt,
                       {"objective", "batch_size", "epochs", "base_lr", "alpha", "tau_lc",
                        "lr_direction", "freeze_quadratic"},
                       "train");
            cfg.train.objective =
                objective_from_string(jt.value("objective", to_string(cfg.train.objective)));
            cfg.train.batch_size = jt.value("batch_size", cfg.train.batch_size);
            cfg.train.epochs = jt.value("epochs", cfg.train.epochs);
            cfg.train.base_lr = jt.value("base_lr", cfg.train.base_lr);
            cfg.train.alpha = jt.value("alpha", cfg.train.alpha);
            cfg.train.tau_lc = jt.value("tau_lc", cfg.train.tau_lc);
            cfg.train.lr_direction = lr_direction_from_string(
                jt.value("lr_direction", to_string(cfg.train.lr_direction)));
            cfg.train.freeze_quadratic =
                jt.value("freeze_quadratic", cfg.train.freeze_quadratic);
        }

        if (j.contains("augment")) {
            const auto& ja = j.at("augment");
            check_keys(ja,
                       {"p_noise", "p_scale", "p_stretch", "p_crop", "noise_std",
                        "scale_mean", "scale_std", "crop_len", "retry_if_identity"},
                       "augment");
            auto& aug = cfg.train.augment;
            aug.p_noise = ja.value("p_noise", aug.p_noise);
            aug.p_scale = ja.value("p_scale", aug.p_scale);
            aug.p_stretch = ja.value("p_stretch", aug.p_stretch);
            aug.p_crop = ja.value("p_crop", aug.p_crop);
            aug.noise_std = ja.value("noise_std", aug.noise_std);
            aug.scale_mean = ja.value("scale_mean", aug.scale_mean);
            aug.scale_std = ja.value("scale_std", aug.scale_std);
            aug.crop_len = ja.value("crop_len", aug.crop_len);
            aug.retry_if_identity = ja.value("retry_if_identity", aug.retry_if_identity);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    cfg.train.seed = cfg.seed;
    cfg.train.backbone.input_len = cfg.data.window;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
    ordered_json j;
    j["schema_version"] = cfg.schema_version;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;

    ordered_json jd;
    jd["source"] = cfg.data.source;
    jd["window"] = cfg.data.window;
    if (cfg.data.recording_len != 0) jd["recording_len"] = cfg.data.recording_len;
    if (!cfg.data.classes.empty()) {
        jd["classes"] = ordered_json::array();
        for (const auto& m : cfg.data.classes) jd["classes"].push_back(model_to_json(m));
    }
    if (!cfg.data.manifest.empty()) jd["manifest"] = cfg.data.manifest;
    jd["split"] = {{"n_normal", cfg.data.split.n_normal},
                   {"ib_rate", cfg.data.split.ib_rate},
                   {"n_eval_per_class", cfg.data.split.n_eval_per_class}};
    j["data"] = jd;

    const auto& bb = cfg.train.backbone;
    ordered_json jm;
    jm["neuron"] = to_string(bb.neuron);
    jm["variant"] = to_string(bb.variant);
    jm["n_blocks"] = bb.n_blocks;
    jm["stem_kernel"] = bb.stem_kernel;
    jm["block_kernel"] = bb.block_kernel;
    jm["channels"] = bb.channels;
    jm["embed_dim"] = cfg.train.embed_dim;
    j["model"] = jm;

    ordered_json jt;
    jt["objective"] = to_string(cfg.train.objective);
    jt["batch_size"] = cfg.train.batch_size;
    jt["epochs"] = cfg.train.epochs;
    jt["base_lr"] = cfg.train.base_lr;
    jt["alpha"] = cfg.train.alpha;
    jt["tau_lc"] = cfg.train.tau_lc;
    jt["lr_direction"] = to_string(cfg.train.lr_direction);
    if (cfg.train.freeze_quadratic) jt["freeze_quadratic"] = true;
    j["train"] = jt;

    const auto& aug = cfg.train.augment;
    ordered_json ja;
    ja["p_noise"] = aug.p_noise;
    ja["p_scale"] = aug.p_scale;
    ja["p_stretch"] = aug.p_stretch;
    ja["p_crop"] = aug.p_crop;
    ja["noise_std"] = aug.noise_std;
    ja["scale_mean"] = aug.scale_mean;
    ja["scale_std"] = aug.scale_std;
    ja["crop_len"] = aug.crop_len;
    ja["retry_if_identity"] = aug.retry_if_identity;
    j["augment"] = ja;

    return j.dump(2) + "\n";
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("config: cannot write " + path.string());
    out << serialize_run_config(cfg);
}

SeedStreams SeedStreams::from_root(std::uint64_t root) {
    Rng rng(root);
    SeedStreams s;
    s.init = rng.split(0).next_u64();
    s.order = rng.split(1).next_u64();
    s.augment = rng.split(2).next_u64();
    s.data = rng.split(10).next_u64();
    s.split = rng.split(11).next_u64();
    return s;
}

Recordings load_recordings(const DataConfig& cfg, std::uint64_t data_seed,
                           const std::filesystem::path& base_dir) {
    Recordings recordings;
    if (cfg.source == "synthetic") {
        Rng root(data_seed);
        for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
            const std::uint64_t seed = root.split(c).next_u64();
            recordings[c].push_back(
                generate_signal(cfg.classes[c], cfg.effective_recording_len(), seed));
        }
        return recordings;
    }
    if (cfg.source == "ingest") {
        std::filesystem::path manifest_path = cfg.manifest;
        if (manifest_path.is_relative()) manifest_path = base_dir / manifest_path;
        const Manifest manifest = load_manifest(manifest_path);
        return ingest(manifest, manifest_path.parent_path());
    }
    throw ConfigError("config: unknown data source \"" + cfg.source + "\"");
}

}  // namespace qcl
