#include "weft/presets.hpp"

#include <array>
#include <utility>

namespace weft {

Lane default_lane(OperatorClass cls) {
    switch (cls) {
        case OperatorClass::AllGather:
        case OperatorClass::ReduceScatter:
            return Lane::local_comm;
        case OperatorClass::AllToAll:
        case OperatorClass::SendRecv:
            return Lane::cross_comm;
        default:
            return Lane::compute;
    }
}

bool is_comm_class(OperatorClass cls) {
    return default_lane(cls) != Lane::compute;
}

namespace {

constexpr std::array<std::pair<OperatorClass, std::string_view>, 13> kClassNames{{
    {OperatorClass::GEMM, "GEMM"},
    {OperatorClass::FlashAttention, "FlashAttention"},
    {OperatorClass::FlashAttentionBwd, "FlashAttentionBwd"},
    {OperatorClass::GroupGEMM, "GroupGEMM"},
    {OperatorClass::FusedBDA, "FusedBDA"},
    {OperatorClass::LayerNorm, "LayerNorm"},
    {OperatorClass::Router, "Router"},
    {OperatorClass::Permute, "Permute"},
    {OperatorClass::WeightGrad, "WeightGrad"},
    {OperatorClass::AllGather, "AllGather"},
    {OperatorClass::ReduceScatter, "ReduceScatter"},
    {OperatorClass::AllToAll, "AllToAll"},
    {OperatorClass::SendRecv, "SendRecv"},
}};

}  // namespace

std::string_view to_string(OperatorClass cls) {
    for (const auto& [c, name] : kClassNames) {
        if (c == cls) return name;
    }
    return "?";
}

OperatorClass parse_operator_class(std::string_view name) {
    for (const auto& [c, n] : kClassNames) {
        if (n == name) return c;
    }
    throw ConfigError("unknown operator class: " + std::string(name));
}

std::string_view to_string(Lane lane) {
    switch (lane) {
        case Lane::compute: return "compute";
        case Lane::local_comm: return "local_comm";
        case Lane::cross_comm: return "cross_comm";
    }
    return "?";
}

Lane parse_lane(std::string_view name) {
    if (name == "compute") return Lane::compute;
    if (name == "local_comm") return Lane::local_comm;
    if (name == "cross_comm") return Lane::cross_comm;
    throw ConfigError("unknown lane: " + std::string(name));
}

std::string_view to_string(Pass pass) {
    return pass == Pass::forward ? "forward" : "backward";
}

Pass parse_pass(std::string_view name) {
    if (name == "forward") return Pass::forward;
    if (name == "backward") return Pass::backward;
    throw ConfigError("unknown pass: " + std::string(name));
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::string_view to_string(ModelFamily family) {
    switch (family) {
        case ModelFamily::llama: return "llama";
        case ModelFamily::gpt: return "gpt";
        case ModelFamily::phi_moe: return "phi_moe";
    }
    return "?";
}

ModelFamily parse_model_family(std::string_view name) {
    if (name == "llama") return ModelFamily::llama;
    if (name == "gpt") return ModelFamily::gpt;
    if (name == "phi_moe") return ModelFamily::phi_moe;
    throw ConfigError("unknown model family: " + std::string(name));
}

void ModelSpec::validate() const {
    if (hidden <= 0 || intermediate <= 0 || layers <= 0 || seq_len <= 0) {
        throw ConfigError("model '" + name + "': dimensions must be positive");
    }
    if (family == ModelFamily::phi_moe) {
        if (!experts || *experts < 2) {
            throw ConfigError("model '" + name + "': phi_moe needs experts >= 2");
        }
    } else if (experts && *experts > 1) {
        throw ConfigError("model '" + name + "': experts set on a dense family");
    }
}

void ClusterSpec::validate() const {
    if (gpus <= 0 || per_node <= 0 || peak_tflops <= 0.0 || local_bw_gbs <= 0.0 ||
        cross_bw_gbs <= 0.0 || mem_gb <= 0.0) {
        throw ConfigError("cluster '" + name + "': fields must be positive");
    }
    if (gpus % per_node != 0) {
        throw ConfigError("cluster '" + name + "': gpus not divisible by per_node");
    }
    if (bw_efficiency <= 0.0 || bw_efficiency > 1.0) {
        throw ConfigError("cluster '" + name + "': bw_efficiency must be in (0, 1]");
    }
}

void ParallelismSpec::validate() const {
    if (dp < 1 || tp < 1 || pp < 1 || cp < 1 || ep < 1) {
        throw ConfigError("parallelism group sizes must be >= 1");
    }
    if (dp % ep != 0) {
        throw ConfigError("ep must divide dp (EP group is a subset of the DP group)");
    }
    if (sp && tp < 2) {
        throw ConfigError("sp requires tp > 1");
    }
}

void ParallelismSpec::validate(const ClusterSpec& cluster) const {
    validate();
    if (total_gpus() != cluster.gpus) {
        throw ConfigError("dp*tp*pp*cp = " + std::to_string(total_gpus()) +
                          " does not match cluster gpus = " + std::to_string(cluster.gpus));
    }
}

std::int64_t params_per_layer(const ModelSpec& model) {
    const std::int64_t h = model.hidden;
    const std::int64_t f = model.intermediate;
    const std::int64_t attn = 4 * h * h;  // qkv (3h^2) + output proj (h^2)
    const std::int64_t norms = 2 * h;
    switch (model.family) {
        case ModelFamily::llama:
            return attn + 3 * h * f + norms;  // gated MLP: gate, up, down
        case ModelFamily::gpt:
            return attn + 2 * h * f + norms;
        case ModelFamily::phi_moe: {
            const std::int64_t e = model.experts.value_or(1);
            return attn + e * 3 * h * f + e * h + norms;  // experts + router
        }
    }
    return 0;
}

namespace {

ModelSpec make_model(std::string name, ModelFamily family, int hidden, int intermediate,
                     int layers, int seq_len, std::optional<int> experts = std::nullopt,
                     std::optional<int> topk = std::nullopt) {
    ModelSpec m;
    m.name = std::move(name);
    m.family = family;
    m.hidden = hidden;
    m.intermediate = intermediate;
    m.layers = layers;
    m.seq_len = seq_len;
    m.experts = experts;
    m.topk = topk;
    return m;
}

const std::vector<ModelSpec>& model_catalog() {
    static const std::vector<ModelSpec> catalog = {
        make_model("llama-8B", ModelFamily::llama, 4096, 14336, 32, 8192),
        make_model("llama-25B", ModelFamily::llama, 8192, 28672, 28, 8192),
        make_model("llama-39B", ModelFamily::llama, 16384, 53248, 12, 8192),
        make_model("llama-66B", ModelFamily::llama, 8192, 28672, 76, 16384),
        make_model("gpt-6.7B", ModelFamily::gpt, 4096, 16384, 32, 8192),
        make_model("gpt-18B", ModelFamily::gpt, 6144, 24576, 40, 8192),
        make_model("gpt-30B", ModelFamily::gpt, 12288, 49152, 16, 8192),
        make_model("phi-16B", ModelFamily::phi_moe, 4096, 6400, 12, 3072, 16, 2),
        make_model("phi-31B", ModelFamily::phi_moe, 4096, 6400, 24, 3072, 16, 2),
        make_model("phi-42B", ModelFamily::phi_moe, 4096, 6400, 32, 3072, 16, 2),
    };
    return catalog;
}

ClusterSpec make_cluster(std::string name, int gpus, int per_node, double peak, double local_bw,
                         double cross_bw, double mem_gb) {
    ClusterSpec c;
    c.name = std::move(name);
    c.gpus = gpus;
    c.per_node = per_node;
    c.peak_tflops = peak;
    c.local_bw_gbs = local_bw;
    c.cross_bw_gbs = cross_bw;
    c.mem_gb = mem_gb;
    return c;
}

const std::vector<ClusterSpec>& cluster_catalog() {
    static const std::vector<ClusterSpec> catalog = {
        // 8 nodes x 8 A40, PCIe 4.0 local, 100 Gbps IB
        make_cluster("a40_64", 64, 8, 149.7, 32.0, 12.5, 48.0),
        // 8 nodes x 8 A800, NVLink 400 GB/s, 4x200 Gbps IB
        make_cluster("a800_64", 64, 8, 312.0, 400.0, 100.0, 80.0),
        // 1 node x 8 A100, NVLink 600 GB/s
        make_cluster("a100_8", 8, 8, 312.0, 600.0, 12.5, 80.0),
        // 4 nodes x 8 H100, NVLink 900 GB/s, 8x400 Gbps IB
        make_cluster("h100_32", 32, 8, 989.0, 900.0, 400.0, 80.0),
    };
    return catalog;
}

}  // namespace

ModelSpec model_preset(const std::string& name) {
    for (const auto& m : model_catalog()) {
        if (m.name == name) return m;
    }
    throw ConfigError("unknown model preset: " + name);
}

ClusterSpec cluster_preset(const std::string& name) {
    for (const auto& c : cluster_catalog()) {
        if (c.name == name) return c;
    }
    throw ConfigError("unknown cluster preset: " + name);
}

std::vector<std::string> model_preset_names() {
    std::vector<std::string> names;
    for (const auto& m : model_catalog()) names.push_back(m.name);
    return names;
}

std::vector<std::string> cluster_preset_names() {
    std::vector<std::string> names;
    for (const auto& c : cluster_catalog()) names.push_back(c.name);
    return names;
}

}  // namespace weft
