#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "weft/core.hpp"
#include "weft/presets.hpp"

namespace weft {

struct SoloTimeTable;

struct OpNode {
    int id = 0;
    OperatorClass cls = OperatorClass::GEMM;
    Lane lane = Lane::compute;
    Pass pass = Pass::forward;
    std::string name;          // template node name, doubles as the shape key
    double duration_us = 0.0;  // solo execution time
    double flops = 0.0;        // arithmetic work, compute ops only
    std::int64_t bytes = 0;    // wire payload, communication ops only
};

struct LayerDag {
    std::vector<OpNode> nodes;
    std::vector<std::pair<int, int>> edges;  // (producer id, consumer id)
    Pass pass = Pass::forward;

    const OpNode* find(int id) const;
    // Throws ConfigError on dangling edge endpoints or cycles.
    void validate() const;
};

// One layer's forward/backward operator graph, shipped as data. Conditional
// nodes are dropped (with edge contraction) when the matching parallelism
// dimension is off: "tp_sp" needs tp>1 and sp, "cp" needs cp>1, "ep" needs
// ep>1.
struct DagTemplate {
    struct Node {
        int id = 0;
        std::string name;
        OperatorClass cls = OperatorClass::GEMM;
        Pass pass = Pass::forward;
        std::string requires_dim;  // empty = unconditional
    };
    std::string name;
    std::vector<Node> nodes;
    std::vector<std::pair<int, int>> edges;
};

// Shipped defaults: "dense_tp_sp" and "moe_ep". The same text lives in
// data/dag_templates.json for reference and user overrides.
const DagTemplate& builtin_template(const std::string& name);
std::string builtin_template_json();

// Parses a template file (same schema as the shipped defaults).
std::vector<DagTemplate> load_dag_templates(const std::string& path);
std::vector<DagTemplate> parse_dag_templates(const std::string& json_text);

// Instantiates the per-layer forward/backward DAGs for one model layer.
// Durations come from `solo` when an entry for (class, node name) exists,
// otherwise from a roofline estimate against `cluster`. Communication node
// byte counts are the analytic per-GPU wire volumes.
std::pair<LayerDag, LayerDag> build_layer_dag(const ModelSpec& model, const ParallelismSpec& par,
                                              const ClusterSpec& cluster,
                                              const SoloTimeTable* solo = nullptr);

// Same, from an explicit template (for user-supplied DAG files).
std::pair<LayerDag, LayerDag> build_layer_dag_from(const DagTemplate& tmpl, const ModelSpec& model,
                                                   const ParallelismSpec& par,
                                                   const ClusterSpec& cluster,
                                                   const SoloTimeTable* solo = nullptr);

// Up to `cap` distinct topological orders, emitted in lexicographic order by
// node id (the smallest order always comes first). Throws on cycles.
std::vector<std::vector<int>> enumerate_topological_orders(const LayerDag& dag, std::size_t cap);

// True iff seq is a permutation of the dag's nodes respecting every edge.
// Malformed input returns false.
bool validate_sequence(const LayerDag& dag, const std::vector<int>& seq);

}  // namespace weft
