#include "qcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace qcl {

namespace {

constexpr char kMagic[8] = {'Q', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ContractError("checkpoint: truncated stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ContractError("checkpoint: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string arch_signature(const BackboneConfig& cfg, std::size_t num_classes,
                           std::size_t embed_dim) {
    std::ostringstream os;
    os << "neuron=" << to_string(cfg.neuron) << ";variant=" << to_string(cfg.variant)
       << ";input_len=" << cfg.input_len << ";input_channels=" << cfg.input_channels
       << ";n_blocks=" << cfg.n_blocks << ";stem_kernel=" << cfg.stem_kernel
       << ";block_kernel=" << cfg.block_kernel << ";channels=";
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        if (i) os << ",";
        os << cfg.channels[i];
    }
    os << ";classes=" << num_classes << ";embed_dim=" << embed_dim;
    return os.str();
}

std::uint64_t arch_digest(const BackboneConfig& cfg, std::size_t num_classes,
                          std::size_t embed_dim) {
    return fnv1a64(arch_signature(cfg, num_classes, embed_dim));
}

std::uint64_t arch_digest(const Network& net) {
    return arch_digest(net.backbone.cfg, net.num_classes, net.heads.embed_dim);
}

void save_blobs(const std::filesystem::path& path, std::uint64_t digest,
                const std::vector<NamedBlob>& blobs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("checkpoint: cannot write " + path.string());
    out.write(kMagic, 8);
    put_u32(out, kVersion);
    put_u64(out, digest);
    put_u32(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& blob : blobs) {
        put_u32(out, static_cast<std::uint32_t>(blob.name.size()));
        out.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
        put_u32(out, static_cast<std::uint32_t>(blob.shape.size()));
        std::size_t count = 1;
        for (std::size_t d : blob.shape) {
            put_u64(out, d);
            count *= d;
        }
        if (count != blob.data.size()) {
            throw ContractError("checkpoint: blob " + blob.name + " shape/data mismatch");
        }
        for (double v : blob.data) put_f64(out, v);
    }
}

std::uint64_t peek_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw ContractError("checkpoint " + path.string() + ": bad magic");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw ContractError("checkpoint " + path.string() + ": unsupported version " +
                            std::to_string(version));
    }
    return get_u64(in);
}

std::vector<NamedBlob> load_blobs(const std::filesystem::path& path,
                                  std::uint64_t expected_digest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw ContractError("checkpoint " + path.string() + ": bad magic");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw ContractError("checkpoint " + path.string() + ": unsupported version " +
                            std::to_string(version));
    }
    const std::uint64_t digest = get_u64(in);
    if (digest != expected_digest) {
        std::ostringstream os;
        os << "checkpoint " << path.string() << ": config digest mismatch (stored 0x"
           << std::hex << digest << ", expected 0x" << expected_digest << ")";
        throw ContractError(os.str());
    }
    const std::uint32_t count = get_u32(in);
    std::vector<NamedBlob> blobs(count);
    for (auto& blob : blobs) {
        const std::uint32_t name_len = get_u32(in);
        blob.name.resize(name_len);
        in.read(blob.name.data(), name_len);
        if (!in) throw ContractError("checkpoint: truncated stream");
        const std::uint32_t ndim = get_u32(in);
        blob.shape.resize(ndim);
        std::size_t n = 1;
        for (auto& d : blob.shape) {
            d = static_cast<std::size_t>(get_u64(in));
            n *= d;
        }
        blob.data.resize(n);
        for (double& v : blob.data) v = get_f64(in);
    }
    return blobs;
}

std::vector<NamedBlob> network_state_blobs(const Network& net) {
    std::vector<NamedBlob> blobs;
    for (const auto& [name, p] : net.named_params()) {
        blobs.push_back({name, p->shape, p->data});
    }
    auto push_bn = [&blobs](const std::string& prefix, const BatchNormLayer& bn) {
        blobs.push_back({prefix + ".running_mean", {bn.stats.running_mean.size()},
                         bn.stats.running_mean});
        blobs.push_back({prefix + ".running_var", {bn.stats.running_var.size()},
                         bn.stats.running_var});
    };
    push_bn("stem_bn", net.backbone.stem_bn);
    for (std::size_t i = 0; i < net.backbone.blocks.size(); ++i) {
        const auto& block = net.backbone.blocks[i];
        const std::string p = "block" + std::to_string(i);
        push_bn(p + ".bn1", block.bn1);
        push_bn(p + ".bn2", block.bn2);
        if (block.projecting) push_bn(p + ".proj_bn", block.proj_bn);
    }
    return blobs;
}

void load_network_state(Network& net, const std::vector<NamedBlob>& blobs) {
    std::map<std::string, const NamedBlob*> index;
    for (const auto& blob : blobs) index[blob.name] = &blob;
    auto take = [&index](const std::string& name) -> const NamedBlob& {
        auto it = index.find(name);
        if (it == index.end()) {
            throw ContractError("checkpoint: missing parameter blob \"" + name + "\"");
        }
        return *it->second;
    };
    for (const auto& [name, p] : net.named_params()) {
        const NamedBlob& blob = take(name);
        if (blob.shape != p->shape) {
            throw ContractError("checkpoint: blob \"" + name + "\" has shape " +
                                shape_str(blob.shape) + ", network expects " +
                                shape_str(p->shape));
        }
        p->data = blob.data;
    }
    auto pull_bn = [&take](const std::string& prefix, BatchNormLayer& bn) {
        bn.stats.running_mean = take(prefix + ".running_mean").data;
        bn.stats.running_var = take(prefix + ".running_var").data;
    };
    pull_bn("stem_bn", net.backbone.stem_bn);
    for (std::size_t i = 0; i < net.backbone.blocks.size(); ++i) {
        auto& block = net.backbone.blocks[i];
        const std::string p = "block" + std::to_string(i);
        pull_bn(p + ".bn1", block.bn1);
        pull_bn(p + ".bn2", block.bn2);
        if (block.projecting) pull_bn(p + ".proj_bn", block.proj_bn);
    }
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
    save_blobs(path, arch_digest(net), network_state_blobs(net));
}

Network load_checkpoint(const std::filesystem::path& path, const BackboneConfig& cfg,
                        std::size_t num_classes, std::size_t embed_dim) {
    Network net = Network::build(cfg, num_classes, 0, embed_dim);
    auto blobs = load_blobs(path, arch_digest(net));
    load_network_state(net, blobs);
    return net;
}

}  // namespace qcl
