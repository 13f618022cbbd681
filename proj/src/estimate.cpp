#include "weft/estimate.hpp"

#include <algorithm>

namespace weft {

std::string_view to_string(PlanSource source) {
    switch (source) {
        case PlanSource::megatron_baseline: return "megatron_baseline";
        case PlanSource::intra_batch: return "intra_batch";
        case PlanSource::wavelet_rr: return "wavelet_rr";
        case PlanSource::dhelix: return "dhelix";
    }
    return "?";
}

PlanSource parse_plan_source(std::string_view name) {
    if (name == "megatron_baseline") return PlanSource::megatron_baseline;
    if (name == "intra_batch") return PlanSource::intra_batch;
    if (name == "wavelet_rr") return PlanSource::wavelet_rr;
    if (name == "dhelix") return PlanSource::dhelix;
    throw ConfigError("unknown plan source: " + std::string(name));
}

Discipline discipline_of(PlanSource source) {
    switch (source) {
        case PlanSource::megatron_baseline:
        case PlanSource::intra_batch:
            return Discipline::one_f_one_b;
        case PlanSource::wavelet_rr:
        case PlanSource::dhelix:
            return Discipline::w_shape;
    }
    return Discipline::one_f_one_b;
}

namespace {

double solo_of(const OpNode& op, const SoloTimeTable& solo) {
    return solo_lookup(solo, op.cls, op.name).value_or(op.duration_us);
}

double pass_total(const LayerDag& dag, const SoloTimeTable& solo) {
    double sum = 0.0;
    for (const auto& n : dag.nodes) sum += solo_of(n, solo);
    return sum;
}

double pass_comm(const LayerDag& dag, const SoloTimeTable& solo) {
    double sum = 0.0;
    for (const auto& n : dag.nodes) {
        if (n.lane != Lane::compute) sum += solo_of(n, solo);
    }
    return sum;
}

double pass_tp_comm(const LayerDag& dag, const SoloTimeTable& solo) {
    double sum = 0.0;
    for (const auto& n : dag.nodes) {
        if (n.cls == OperatorClass::AllGather || n.cls == OperatorClass::ReduceScatter) {
            sum += solo_of(n, solo);
        }
    }
    return sum;
}

// Fixed round-robin coupling: one operator from each strand per step, no
// search. Leftover operators of the longer strand run solo.
struct RoundRobinResult {
    double total_us = 0.0;
    double visible_comm_us = 0.0;
};

RoundRobinResult round_robin_pair(const LayerDag& fwd, const LayerDag& bwd,
                                  const OverlapTable& tbl, const SoloTimeTable& solo) {
    const auto fseq = enumerate_topological_orders(fwd, 1).at(0);
    const auto bseq = enumerate_topological_orders(bwd, 1).at(0);
    auto resolve = [](const LayerDag& dag, int id) {
        const OpNode* n = dag.find(id);
        if (n == nullptr) throw ConfigError("sequence references missing node");
        return *n;
    };
    RoundRobinResult r;
    const std::size_t steps = std::max(fseq.size(), bseq.size());
    for (std::size_t i = 0; i < steps; ++i) {
        std::vector<OpNode> a, b;
        if (i < fseq.size()) a.push_back(resolve(fwd, fseq[i]));
        if (i < bseq.size()) b.push_back(resolve(bwd, bseq[i]));
        const SegmentCost c = segment_pair_cost(a, b, tbl, solo);
        double comp = 0.0, comm = 0.0;
        for (const auto& op : a) (op.lane == Lane::compute ? comp : comm) += solo_of(op, solo);
        for (const auto& op : b) (op.lane == Lane::compute ? comp : comm) += solo_of(op, solo);
        r.total_us += c.p_us;
        r.visible_comm_us += std::clamp(c.p_us - comp, 0.0, comm);
    }
    return r;
}

}  // namespace

EstimateResult estimate_iteration_time(const ModelSpec& model, const ClusterSpec& cluster,
                                       const ParallelismSpec& par, PlanSource source,
                                       const Profile& profile, const EstimateOptions& opts) {
    par.validate(cluster);
    if (opts.microbatches < 1) throw ConfigError("microbatches must be >= 1");
    if (model.layers % par.pp != 0) {
        throw InfeasibleError("layers " + std::to_string(model.layers) +
                              " not divisible by pp = " + std::to_string(par.pp));
    }

    const auto [fwd, bwd] = build_layer_dag(model, par, cluster, &profile.solo);
    const SoloTimeTable& solo = profile.solo;

    EstimateResult r;
    r.layer_fwd_us = pass_total(fwd, solo);
    r.layer_bwd_us = pass_total(bwd, solo);
    const double comm_total = pass_comm(fwd, solo) + pass_comm(bwd, solo);
    const double sequential = r.layer_fwd_us + r.layer_bwd_us;

    double stage_f = r.layer_fwd_us;
    double stage_b = r.layer_bwd_us;
    switch (source) {
        case PlanSource::megatron_baseline:
            r.layer_pair_us = sequential;
            r.hidden_comm_frac = 0.0;
            break;
        case PlanSource::intra_batch: {
            const double hidden_f = opts.intra_batch_tp_hidden_frac * pass_tp_comm(fwd, solo);
            const double hidden_b = opts.intra_batch_tp_hidden_frac * pass_tp_comm(bwd, solo);
            stage_f -= hidden_f;
            stage_b -= hidden_b;
            r.layer_pair_us = sequential - hidden_f - hidden_b;
            r.hidden_comm_frac = comm_total > 0.0 ? (hidden_f + hidden_b) / comm_total : 0.0;
            break;
        }
        case PlanSource::wavelet_rr: {
            const RoundRobinResult rr = round_robin_pair(fwd, bwd, profile.overlap, solo);
            r.layer_pair_us = rr.total_us;
            r.hidden_comm_frac =
                comm_total > 0.0 ? 1.0 - rr.visible_comm_us / comm_total : 0.0;
            break;
        }
        case PlanSource::dhelix: {
            const BestPlan best = search_si_plan(fwd, bwd, profile.overlap, solo, opts.search);
            r.layer_pair_us = best.total_us;
            r.hidden_comm_frac = best.hidden_comm_frac;
            break;
        }
    }

    const double layers_per_stage = static_cast<double>(model.layers) / par.pp;
    const int m = opts.microbatches;
    const int p = par.pp;
    if (discipline_of(source) == Discipline::one_f_one_b) {
        r.makespan_us = (m + p - 1) * layers_per_stage * (stage_f + stage_b);
    } else {
        // warmup/cooldown run un-interleaved at solo pass times
        r.makespan_us = (m - 1) * layers_per_stage * r.layer_pair_us +
                        p * layers_per_stage * (r.layer_fwd_us + r.layer_bwd_us);
    }

    double layer_flops = 0.0;
    for (const auto& n : fwd.nodes) layer_flops += n.flops;
    for (const auto& n : bwd.nodes) layer_flops += n.flops;
    const double total_flops = layer_flops * layers_per_stage * m;
    r.tflops_per_gpu = r.makespan_us > 0.0 ? total_flops / r.makespan_us / 1e6 : 0.0;
    r.mfu = cluster.peak_tflops > 0.0 ? r.tflops_per_gpu / cluster.peak_tflops : 0.0;
    return r;
}

}  // namespace weft
