#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weft/core.hpp"

namespace weft {

enum class ModelFamily {
    llama,
    gpt,
    phi_moe,
};

std::string_view to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view name);

struct ModelSpec {
    std::string name;
    ModelFamily family = ModelFamily::llama;
    int hidden = 0;
    int intermediate = 0;
    int layers = 0;
    int seq_len = 0;
    std::optional<int> experts;
    std::optional<int> topk;

    bool is_moe() const { return experts.has_value() && *experts > 1; }
    void validate() const;
};

struct ClusterSpec {
    std::string name;
    int gpus = 0;
    int per_node = 0;
    double peak_tflops = 0.0;     // per GPU
    double local_bw_gbs = 0.0;    // intra-node, per direction
    double cross_bw_gbs = 0.0;    // inter-node, per GPU
    double mem_gb = 0.0;          // per GPU
    double bw_efficiency = 0.5;   // effective bandwidth = nominal * efficiency

    void validate() const;
};

struct ParallelismSpec {
    int dp = 1;
    int tp = 1;
    int pp = 1;
    int cp = 1;
    int ep = 1;
    bool sp = false;  // tied to tp

    int total_gpus() const { return dp * tp * pp * cp; }
    // dp*tp*pp*cp must cover the cluster; ep divides dp; sp needs tp > 1.
    void validate(const ClusterSpec& cluster) const;
    void validate() const;
};

// Transformer-layer parameter count implied by the model dimensions
// (attention + MLP/experts + norms; embeddings excluded).
std::int64_t params_per_layer(const ModelSpec& model);

// Catalog lookups. Unknown names raise ConfigError.
ModelSpec model_preset(const std::string& name);
ClusterSpec cluster_preset(const std::string& name);
std::vector<std::string> model_preset_names();
std::vector<std::string> cluster_preset_names();

}  // namespace weft
