#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qcl/qnn.hpp"

namespace qcl {

// Versioned binary checkpoint: 8-byte magic, u32 version, u64 config digest,
// then named blobs (name, shape, f64 little-endian data). Loading rejects a
// digest mismatch so weights never land on a differently shaped network.

struct NamedBlob {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

std::uint64_t fnv1a64(const std::string& bytes);

// Canonical architecture signature; any change to it invalidates checkpoints.
std::string arch_signature(const BackboneConfig& cfg, std::size_t num_classes,
                           std::size_t embed_dim);
std::uint64_t arch_digest(const BackboneConfig& cfg, std::size_t num_classes,
                          std::size_t embed_dim);
std::uint64_t arch_digest(const Network& net);

void save_blobs(const std::filesystem::path& path, std::uint64_t digest,
                const std::vector<NamedBlob>& blobs);
// expected_digest checked against the stored one; throws ContractError on
// mismatch or a corrupt stream.
std::vector<NamedBlob> load_blobs(const std::filesystem::path& path,
                                  std::uint64_t expected_digest);
std::uint64_t peek_digest(const std::filesystem::path& path);

// Trainable parameters plus BN running stats.
std::vector<NamedBlob> network_state_blobs(const Network& net);
void load_network_state(Network& net, const std::vector<NamedBlob>& blobs);

void save_checkpoint(const std::filesystem::path& path, const Network& net);
// Builds the network from cfg and loads the stored state; throws on digest
// mismatch.
Network load_checkpoint(const std::filesystem::path& path, const BackboneConfig& cfg,
                        std::size_t num_classes, std::size_t embed_dim = 64);

}  // namespace qcl
