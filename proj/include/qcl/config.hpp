#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qcl/data.hpp"
#include "qcl/trainer.hpp"

namespace qcl {

// Where the recordings come from: generated impulse-train models or an
// ingest manifest on disk.
struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "ingest"
    std::size_t window = 2048;
    std::size_t recording_len = 0;  // 0 -> 64 * window
    std::vector<SyntheticFaultModel> classes;
    std::string manifest;  // ingest mode: path to the manifest JSON
    LongTailSpec split;

    std::size_t effective_recording_len() const {
        return recording_len == 0 ? 64 * window : recording_len;
    }
};

// Everything a run needs; a run is reproducible from (config, seed) alone.
struct RunConfig {
    int schema_version = 1;
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    DataConfig data;
    TrainConfig train;  // backbone and augment sections included

    void validate() const;
};

// JSON text with // and /* */ comments removed (string-literal aware).
std::string strip_json_comments(const std::string& text);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

// Deterministic per-purpose seed streams derived from the root seed.
struct SeedStreams {
    std::uint64_t data;
    std::uint64_t init;
    std::uint64_t augment;
    std::uint64_t order;
    std::uint64_t split;

    static SeedStreams from_root(std::uint64_t root);
};

// Generates (or ingests) the per-class recordings named by the config.
Recordings load_recordings(const DataConfig& cfg, std::uint64_t data_seed,
                           const std::filesystem::path& base_dir);

}  // namespace qcl
