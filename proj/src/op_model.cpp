#include "weft/op_model.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "weft/overlap_profile.hpp"

namespace weft {

using nlohmann::json;

const OpNode* LayerDag::find(int id) const {
    for (const auto& n : nodes) {
        if (n.id == id) return &n;
    }
    return nullptr;
}

void LayerDag::validate() const {
    std::set<int> ids;
    for (const auto& n : nodes) {
        if (!ids.insert(n.id).second) {
            throw ConfigError("duplicate node id " + std::to_string(n.id));
        }
    }
    for (const auto& [p, c] : edges) {
        if (!ids.count(p) || !ids.count(c)) {
            throw ConfigError("edge references missing node: " + std::to_string(p) + "->" +
                              std::to_string(c));
        }
    }
    // Kahn's algorithm; leftovers mean a cycle.
    std::map<int, int> indeg;
    std::map<int, std::vector<int>> adj;
    for (const auto& n : nodes) indeg[n.id] = 0;
    for (const auto& [p, c] : edges) {
        adj[p].push_back(c);
        ++indeg[c];
    }
    std::vector<int> ready;
    for (const auto& [id, d] : indeg) {
        if (d == 0) ready.push_back(id);
    }
    std::size_t seen = 0;
    while (!ready.empty()) {
        int id = ready.back();
        ready.pop_back();
        ++seen;
        for (int c : adj[id]) {
            if (--indeg[c] == 0) ready.push_back(c);
        }
    }
    if (seen != nodes.size()) {
        throw ConfigError("layer dag contains a cycle");
    }
}

// ---------------------------------------------------------------------------
// Templates

namespace {

// Canonical per-layer operator graphs. The 14-op forward / 18-op backward
// dense shape holds when tp > 1 and cp == 1; conditional nodes drop out (with
// edge contraction) for parallelism dimensions that are off. Weight-gradient
// nodes only depend on the node producing their output gradient and have no
// consumers, so enumeration is free to float them.
constexpr const char* kBuiltinTemplates = R"JSON({
  "templates": [
    {
      "name": "dense_tp_sp",
      "doc": "Dense transformer layer under TP(+SP); tp_sp nodes need tp>1, cp nodes need cp>1.",
      "nodes": [
        {"id": 0,  "name": "ln0",             "class": "LayerNorm",        "pass": "forward"},
        {"id": 1,  "name": "ag0",             "class": "AllGather",        "pass": "forward", "requires": "tp_sp"},
        {"id": 2,  "name": "qkv",             "class": "GEMM",             "pass": "forward"},
        {"id": 3,  "name": "cp_kv_exchange",  "class": "SendRecv",         "pass": "forward", "requires": "cp"},
        {"id": 4,  "name": "attn",            "class": "FlashAttention",   "pass": "forward"},
        {"id": 5,  "name": "attn_proj",       "class": "GEMM",             "pass": "forward"},
        {"id": 6,  "name": "rs0",             "class": "ReduceScatter",    "pass": "forward", "requires": "tp_sp"},
        {"id": 7,  "name": "bda0",            "class": "FusedBDA",         "pass": "forward"},
        {"id": 8,  "name": "ln1",             "class": "LayerNorm",        "pass": "forward"},
        {"id": 9,  "name": "ag1",             "class": "AllGather",        "pass": "forward", "requires": "tp_sp"},
        {"id": 10, "name": "mlp_gate",        "class": "GEMM",             "pass": "forward"},
        {"id": 11, "name": "mlp_up",          "class": "GEMM",             "pass": "forward"},
        {"id": 12, "name": "mlp_down",        "class": "GEMM",             "pass": "forward"},
        {"id": 13, "name": "rs1",             "class": "ReduceScatter",    "pass": "forward", "requires": "tp_sp"},
        {"id": 14, "name": "bda1",            "class": "FusedBDA",         "pass": "forward"},
        {"id": 20, "name": "bda1_bwd",        "class": "FusedBDA",         "pass": "backward"},
        {"id": 21, "name": "rs1_bwd_ag",      "class": "AllGather",        "pass": "backward", "requires": "tp_sp"},
        {"id": 22, "name": "mlp_down_dgrad",  "class": "GEMM",             "pass": "backward"},
        {"id": 23, "name": "mlp_down_wgrad",  "class": "WeightGrad",       "pass": "backward"},
        {"id": 24, "name": "mlp_gate_dgrad",  "class": "GEMM",             "pass": "backward"},
        {"id": 25, "name": "mlp_up_dgrad",    "class": "GEMM",             "pass": "backward"},
        {"id": 26, "name": "mlp_fc1_wgrad",   "class": "WeightGrad",       "pass": "backward"},
        {"id": 27, "name": "ag1_bwd_rs",      "class": "ReduceScatter",    "pass": "backward", "requires": "tp_sp"},
        {"id": 28, "name": "ln1_bwd",         "class": "LayerNorm",        "pass": "backward"},
        {"id": 29, "name": "bda0_bwd",        "class": "FusedBDA",         "pass": "backward"},
        {"id": 30, "name": "rs0_bwd_ag",      "class": "AllGather",        "pass": "backward", "requires": "tp_sp"},
        {"id": 31, "name": "attn_proj_dgrad", "class": "GEMM",             "pass": "backward"},
        {"id": 32, "name": "attn_proj_wgrad", "class": "WeightGrad",       "pass": "backward"},
        {"id": 33, "name": "cp_kv_exchange_bwd", "class": "SendRecv",      "pass": "backward", "requires": "cp"},
        {"id": 34, "name": "attn_bwd",        "class": "FlashAttentionBwd","pass": "backward"},
        {"id": 35, "name": "qkv_dgrad",       "class": "GEMM",             "pass": "backward"},
        {"id": 36, "name": "qkv_wgrad",       "class": "WeightGrad",       "pass": "backward"},
        {"id": 37, "name": "ag0_bwd_rs",      "class": "ReduceScatter",    "pass": "backward", "requires": "tp_sp"},
        {"id": 38, "name": "ln0_bwd",         "class": "LayerNorm",        "pass": "backward"}
      ],
      "edges": [
        [0,1],[1,2],[2,3],[3,4],[4,5],[5,6],[6,7],[7,8],[8,9],[9,10],[9,11],[10,12],[11,12],[12,13],[13,14],
        [20,21],[21,22],[21,23],[22,24],[22,25],[22,26],[24,27],[25,27],[27,28],[28,29],[29,30],
        [30,31],[30,32],[31,33],[33,34],[34,35],[34,36],[35,37],[37,38]
      ]
    },
    {
      "name": "moe_ep",
      "doc": "MoE transformer layer under EP; ep nodes need ep>1, tp_sp nodes need tp>1, cp nodes need cp>1.",
      "nodes": [
        {"id": 0,  "name": "ln0",             "class": "LayerNorm",        "pass": "forward"},
        {"id": 1,  "name": "ag0",             "class": "AllGather",        "pass": "forward", "requires": "tp_sp"},
        {"id": 2,  "name": "qkv",             "class": "GEMM",             "pass": "forward"},
        {"id": 3,  "name": "cp_kv_exchange",  "class": "SendRecv",         "pass": "forward", "requires": "cp"},
        {"id": 4,  "name": "attn",            "class": "FlashAttention",   "pass": "forward"},
        {"id": 5,  "name": "attn_proj",       "class": "GEMM",             "pass": "forward"},
        {"id": 6,  "name": "rs0",             "class": "ReduceScatter",    "pass": "forward", "requires": "tp_sp"},
        {"id": 7,  "name": "bda0",            "class": "FusedBDA",         "pass": "forward"},
        {"id": 8,  "name": "ln1",             "class": "LayerNorm",        "pass": "forward"},
        {"id": 9,  "name": "router",          "class": "Router",           "pass": "forward"},
        {"id": 10, "name": "permute",         "class": "Permute",          "pass": "forward"},
        {"id": 11, "name": "a2a_dispatch",    "class": "AllToAll",         "pass": "forward", "requires": "ep"},
        {"id": 12, "name": "expert_fc1",      "class": "GroupGEMM",        "pass": "forward"},
        {"id": 13, "name": "expert_fc2",      "class": "GroupGEMM",        "pass": "forward"},
        {"id": 14, "name": "a2a_combine",     "class": "AllToAll",         "pass": "forward", "requires": "ep"},
        {"id": 15, "name": "unpermute",       "class": "Permute",          "pass": "forward"},
        {"id": 16, "name": "bda1",            "class": "FusedBDA",         "pass": "forward"},
        {"id": 20, "name": "bda1_bwd",        "class": "FusedBDA",         "pass": "backward"},
        {"id": 21, "name": "unpermute_bwd",   "class": "Permute",          "pass": "backward"},
        {"id": 22, "name": "a2a_combine_bwd", "class": "AllToAll",         "pass": "backward", "requires": "ep"},
        {"id": 23, "name": "expert_fc2_dgrad","class": "GroupGEMM",        "pass": "backward"},
        {"id": 24, "name": "expert_fc2_wgrad","class": "WeightGrad",       "pass": "backward"},
        {"id": 25, "name": "expert_fc1_dgrad","class": "GroupGEMM",        "pass": "backward"},
        {"id": 26, "name": "expert_fc1_wgrad","class": "WeightGrad",       "pass": "backward"},
        {"id": 27, "name": "a2a_dispatch_bwd","class": "AllToAll",         "pass": "backward", "requires": "ep"},
        {"id": 28, "name": "permute_bwd",     "class": "Permute",          "pass": "backward"},
        {"id": 29, "name": "router_bwd",      "class": "Router",           "pass": "backward"},
        {"id": 30, "name": "ln1_bwd",         "class": "LayerNorm",        "pass": "backward"},
        {"id": 31, "name": "bda0_bwd",        "class": "FusedBDA",         "pass": "backward"},
        {"id": 32, "name": "rs0_bwd_ag",      "class": "AllGather",        "pass": "backward", "requires": "tp_sp"},
        {"id": 33, "name": "attn_proj_dgrad", "class": "GEMM",             "pass": "backward"},
        {"id": 34, "name": "attn_proj_wgrad", "class": "WeightGrad",       "pass": "backward"},
        {"id": 35, "name": "cp_kv_exchange_bwd", "class": "SendRecv",      "pass": "backward", "requires": "cp"},
        {"id": 36, "name": "attn_bwd",        "class": "FlashAttentionBwd","pass": "backward"},
        {"id": 37, "name": "qkv_dgrad",       "class": "GEMM",             "pass": "backward"},
        {"id": 38, "name": "qkv_wgrad",       "class": "WeightGrad",       "pass": "backward"},
        {"id": 39, "name": "ag0_bwd_rs",      "class": "ReduceScatter",    "pass": "backward", "requires": "tp_sp"},
        {"id": 40, "name": "ln0_bwd",         "class": "LayerNorm",        "pass": "backward"}
      ],
      "edges": [
        [0,1],[1,2],[2,3],[3,4],[4,5],[5,6],[6,7],[7,8],[8,9],[9,10],[10,11],[11,12],[12,13],[13,14],[14,15],[15,16],
        [20,21],[21,22],[22,23],[22,24],[23,25],[23,26],[25,27],[27,28],[28,29],[29,30],[30,31],[31,32],
        [32,33],[32,34],[33,35],[35,36],[36,37],[36,38],[37,39],[39,40]
      ]
    }
  ]
})JSON";

DagTemplate parse_template(const json& jt) {
    DagTemplate tmpl;
    tmpl.name = jt.at("name").get<std::string>();
    for (const auto& jn : jt.at("nodes")) {
        DagTemplate::Node n;
        n.id = jn.at("id").get<int>();
        n.name = jn.at("name").get<std::string>();
        n.cls = parse_operator_class(jn.at("class").get<std::string>());
        n.pass = parse_pass(jn.at("pass").get<std::string>());
        if (jn.contains("requires")) n.requires_dim = jn.at("requires").get<std::string>();
        tmpl.nodes.push_back(std::move(n));
    }
    for (const auto& je : jt.at("edges")) {
        tmpl.edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
    }
    return tmpl;
}

const std::vector<DagTemplate>& builtin_templates() {
    static const std::vector<DagTemplate> templates =
        parse_dag_templates(kBuiltinTemplates);
    return templates;
}

}  // namespace

std::vector<DagTemplate> parse_dag_templates(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dag template parse error: ") + e.what());
    }
    std::vector<DagTemplate> out;
    try {
        for (const auto& jt : j.at("templates")) out.push_back(parse_template(jt));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dag template schema error: ") + e.what());
    }
    return out;
}

std::vector<DagTemplate> load_dag_templates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dag template file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_dag_templates(ss.str());
}

const DagTemplate& builtin_template(const std::string& name) {
    for (const auto& t : builtin_templates()) {
        if (t.name == name) return t;
    }
    throw ConfigError("unknown builtin template: " + name);
}

std::string builtin_template_json() {
    return kBuiltinTemplates;
}

// ---------------------------------------------------------------------------
// Roofline instantiation

namespace {

struct NodeCost {
    double flops = 0.0;
    std::int64_t wire_bytes = 0;
    int group_size = 1;     // communication group, 1 = none
    int group_extent = 1;   // ranks spanned assuming tp-innermost placement
};

constexpr std::int64_t kElemBytes = 2;  // bf16 activations and gradients

// Per-GPU flops / wire bytes for one template node. Unknown names get zero
// cost and must be covered by a solo-time entry.
NodeCost node_cost(const std::string& name, const ModelSpec& model, const ParallelismSpec& par) {
    const double tokens = static_cast<double>(model.seq_len) / par.cp;  // micro-batch size 1
    const double h = model.hidden;
    const double f = model.intermediate;
    const double s = model.seq_len;
    const double tp = par.tp;
    const double ep = par.ep;
    const double topk = model.topk.value_or(1);

    NodeCost c;
    auto gemm = [&](double m, double k, double n) { c.flops = 2.0 * m * k * n; };

    if (name == "qkv" || name == "qkv_dgrad" || name == "qkv_wgrad") {
        gemm(tokens, h, 3.0 * h / tp);
    } else if (name == "attn") {
        c.flops = 2.0 * tokens * s * h / tp;  // causal
    } else if (name == "attn_bwd") {
        c.flops = 2.5 * 2.0 * tokens * s * h / tp;
    } else if (name == "attn_proj" || name == "attn_proj_dgrad" || name == "attn_proj_wgrad") {
        gemm(tokens, h / tp, h);
    } else if (name == "mlp_gate" || name == "mlp_up" || name == "mlp_gate_dgrad" ||
               name == "mlp_up_dgrad") {
        gemm(tokens, h, f / tp);
    } else if (name == "mlp_fc1_wgrad") {
        gemm(tokens, h, 2.0 * f / tp);
    } else if (name == "mlp_down" || name == "mlp_down_dgrad" || name == "mlp_down_wgrad") {
        gemm(tokens, f / tp, h);
    } else if (name == "ln0" || name == "ln1" || name == "ln0_bwd" || name == "ln1_bwd") {
        c.flops = 10.0 * tokens * h / (par.sp ? tp : 1.0);
    } else if (name == "bda0" || name == "bda1" || name == "bda0_bwd" || name == "bda1_bwd") {
        c.flops = 8.0 * tokens * h / (par.sp ? tp : 1.0);
    } else if (name == "router" || name == "router_bwd") {
        c.flops = 2.0 * tokens * h * model.experts.value_or(1);
    } else if (name == "permute" || name == "unpermute" || name == "permute_bwd" ||
               name == "unpermute_bwd") {
        c.flops = 2.0 * tokens * h * topk;
    } else if (name == "expert_fc1" || name == "expert_fc1_dgrad" || name == "expert_fc1_wgrad") {
        gemm(tokens * topk / ep, h, 2.0 * f / tp);
    } else if (name == "expert_fc2" || name == "expert_fc2_dgrad" || name == "expert_fc2_wgrad") {
        gemm(tokens * topk / ep, f / tp, h);
    } else if (name == "ag0" || name == "ag1" || name == "rs0" || name == "rs1" ||
               name == "rs1_bwd_ag" || name == "ag1_bwd_rs" || name == "rs0_bwd_ag" ||
               name == "ag0_bwd_rs") {
        const double payload = tokens * h * kElemBytes;
        c.wire_bytes = static_cast<std::int64_t>(payload * (tp - 1.0) / tp);
        c.group_size = par.tp;
        c.group_extent = par.tp;
    } else if (name == "cp_kv_exchange" || name == "cp_kv_exchange_bwd") {
        // ring exchange of K/V blocks, (cp-1) steps
        c.wire_bytes = static_cast<std::int64_t>(2.0 * tokens * (h / tp) * kElemBytes * (par.cp - 1.0));
        c.group_size = par.cp;
        c.group_extent = par.tp * par.cp;
    } else if (name == "a2a_dispatch" || name == "a2a_combine" || name == "a2a_dispatch_bwd" ||
               name == "a2a_combine_bwd") {
        const double payload = tokens * topk * h * kElemBytes;
        c.wire_bytes = static_cast<std::int64_t>(payload * (ep - 1.0) / ep);
        c.group_size = par.ep;
        c.group_extent = par.tp * par.cp * par.ep;
    }
    return c;
}

}  // namespace

std::pair<LayerDag, LayerDag> build_layer_dag_from(const DagTemplate& tmpl, const ModelSpec& model,
                                                   const ParallelismSpec& par,
                                                   const ClusterSpec& cluster,
                                                   const SoloTimeTable* solo) {
    model.validate();
    par.validate();
    cluster.validate();
    if (par.ep > 1 && !model.is_moe()) {
        throw ConfigError("EP requested with non-MoE model '" + model.name + "'");
    }

    auto active = [&](const DagTemplate::Node& n) {
        if (n.requires_dim.empty()) return true;
        if (n.requires_dim == "tp_sp") return par.tp > 1;
        if (n.requires_dim == "cp") return par.cp > 1;
        if (n.requires_dim == "ep") return par.ep > 1;
        throw ConfigError("template '" + tmpl.name + "': unknown requires tag '" +
                          n.requires_dim + "'");
    };

    // Drop inactive nodes, contracting their edges.
    std::map<int, const DagTemplate::Node*> kept;
    for (const auto& n : tmpl.nodes) {
        if (active(n)) kept[n.id] = &n;
    }
    std::set<std::pair<int, int>> edges(tmpl.edges.begin(), tmpl.edges.end());
    for (const auto& n : tmpl.nodes) {
        if (kept.count(n.id)) continue;
        std::vector<int> preds, succs;
        for (auto it = edges.begin(); it != edges.end();) {
            if (it->second == n.id) {
                preds.push_back(it->first);
                it = edges.erase(it);
            } else if (it->first == n.id) {
                succs.push_back(it->second);
                it = edges.erase(it);
            } else {
                ++it;
            }
        }
        for (int p : preds) {
            for (int s : succs) edges.insert({p, s});
        }
    }

    LayerDag fwd, bwd;
    fwd.pass = Pass::forward;
    bwd.pass = Pass::backward;
    for (const auto& [id, n] : kept) {
        OpNode op;
        op.id = id;
        op.cls = n->cls;
        op.pass = n->pass;
        op.name = n->name;

        const NodeCost cost = node_cost(n->name, model, par);
        op.flops = cost.flops;
        op.bytes = cost.wire_bytes;
        const bool local = cost.group_extent <= cluster.per_node;
        op.lane = is_comm_class(n->cls) ? (local ? Lane::local_comm : Lane::cross_comm)
                                        : Lane::compute;

        double dur = 0.0;
        if (solo != nullptr) {
            if (auto t = solo_lookup(*solo, n->cls, n->name)) dur = *t;
        }
        if (dur <= 0.0) {
            if (op.lane == Lane::compute) {
                dur = cost.flops / (cluster.peak_tflops * 1e6);
            } else {
                const double bw = local ? cluster.local_bw_gbs : cluster.cross_bw_gbs;
                dur = static_cast<double>(cost.wire_bytes) /
                      (bw * cluster.bw_efficiency * 1e3);
            }
        }
        op.duration_us = dur;

        (n->pass == Pass::forward ? fwd : bwd).nodes.push_back(std::move(op));
    }
    for (const auto& [p, c] : edges) {
        const Pass pp = kept.at(p)->pass;
        const Pass pc = kept.at(c)->pass;
        if (pp != pc) {
            throw ConfigError("template '" + tmpl.name + "': edge crosses passes");
        }
        (pp == Pass::forward ? fwd : bwd).edges.emplace_back(p, c);
    }
    fwd.validate();
    bwd.validate();
    return {std::move(fwd), std::move(bwd)};
}

std::pair<LayerDag, LayerDag> build_layer_dag(const ModelSpec& model, const ParallelismSpec& par,
                                              const ClusterSpec& cluster,
                                              const SoloTimeTable* solo) {
    const std::string tmpl_name = model.is_moe() ? "moe_ep" : "dense_tp_sp";
    return build_layer_dag_from(builtin_template(tmpl_name), model, par, cluster, solo);
}

// ---------------------------------------------------------------------------
// Linearizations

std::vector<std::vector<int>> enumerate_topological_orders(const LayerDag& dag, std::size_t cap) {
    if (cap == 0) throw ConfigError("enumeration cap must be >= 1");
    dag.validate();  // throws on cycles

    std::vector<int> ids;
    for (const auto& n : dag.nodes) ids.push_back(n.id);
    std::sort(ids.begin(), ids.end());
    std::map<int, int> indeg;
    std::map<int, std::vector<int>> adj;
    for (int id : ids) indeg[id] = 0;
    for (const auto& [p, c] : dag.edges) {
        adj[p].push_back(c);
        ++indeg[c];
    }

    std::vector<std::vector<int>> result;
    std::vector<int> current;
    std::set<int> used;
    // Depth-first over ids in ascending order at every choice point, so
    // sequences come out in lexicographic order.
    std::function<bool()> emit = [&]() -> bool {
        if (current.size() == ids.size()) {
            result.push_back(current);
            return result.size() < cap;
        }
        for (int id : ids) {
            if (used.count(id) || indeg[id] != 0) continue;
            used.insert(id);
            current.push_back(id);
            for (int c : adj[id]) --indeg[c];
            const bool keep_going = emit();
            for (int c : adj[id]) ++indeg[c];
            current.pop_back();
            used.erase(id);
            if (!keep_going) return false;
        }
        return true;
    };
    emit();
    return result;
}

bool validate_sequence(const LayerDag& dag, const std::vector<int>& seq) {
    if (seq.size() != dag.nodes.size()) return false;
    std::map<int, std::size_t> pos;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!pos.emplace(seq[i], i).second) return false;  // duplicate
    }
    for (const auto& n : dag.nodes) {
        if (!pos.count(n.id)) return false;
    }
    for (const auto& [p, c] : dag.edges) {
        if (pos.at(p) >= pos.at(c)) return false;
    }
    return true;
}

}  // namespace weft
