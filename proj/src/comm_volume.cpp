#include "weft/comm_volume.hpp"

namespace weft {

double cross_time_ratio(double local_us, double cross_us) {
    const double total = local_us + cross_us;
    return total > 0.0 ? cross_us / total : 0.0;
}

CommVolume comm_volume_estimate(const ModelSpec& model, const ClusterSpec& cluster,
                                const ParallelismSpec& par, std::int64_t tokens_per_microbatch,
                                int microbatches) {
    model.validate();
    cluster.validate();
    par.validate(cluster);
    if (tokens_per_microbatch <= 0 || microbatches <= 0) {
        throw ConfigError("comm_volume_estimate: tokens and microbatches must be positive");
    }

    constexpr double kElem = 2.0;  // bf16
    const double tokens_local = static_cast<double>(tokens_per_microbatch) / par.cp;
    const double h = model.hidden;

    CommVolume v;
    auto add = [&](double bytes_per_gpu, int group_extent) {
        if (bytes_per_gpu <= 0.0) return;
        const bool local = group_extent <= cluster.per_node;
        const double bw = (local ? cluster.local_bw_gbs : cluster.cross_bw_gbs) *
                          cluster.bw_efficiency;
        const double us = bytes_per_gpu / (bw * 1e3);
        if (local) {
            v.local_bytes += static_cast<std::int64_t>(bytes_per_gpu);
            v.local_us += us;
        } else {
            v.cross_bytes += static_cast<std::int64_t>(bytes_per_gpu);
            v.cross_us += us;
        }
    };

    const double per_layer_mb = static_cast<double>(model.layers) * microbatches;

    // TP/SP: 4 forward + 4 backward AG/RS per layer.
    if (par.tp > 1) {
        const double wire = tokens_local * h * kElem * (par.tp - 1.0) / par.tp;
        add(8.0 * wire * per_layer_mb, par.tp);
    }
    // CP: K/V ring exchange, forward and backward.
    if (par.cp > 1) {
        const double wire = 2.0 * tokens_local * (h / par.tp) * kElem * (par.cp - 1.0);
        add(2.0 * wire * per_layer_mb, par.tp * par.cp);
    }
    // EP: dispatch + combine All-to-All, forward and backward.
    if (par.ep > 1 && model.is_moe()) {
        const double wire =
            tokens_local * model.topk.value_or(1) * h * kElem * (par.ep - 1.0) / par.ep;
        add(4.0 * wire * per_layer_mb, par.tp * par.cp * par.ep);
    }
    // DP gradient sync, once per iteration (ring all-reduce on bf16 grads).
    if (par.dp > 1) {
        const double grads_per_gpu = static_cast<double>(params_per_layer(model)) / par.tp *
                                     model.layers / par.pp * kElem;
        add(2.0 * grads_per_gpu * (par.dp - 1.0) / par.dp, par.tp * par.cp * par.dp);
    }

    v.cross_time_ratio = cross_time_ratio(v.local_us, v.cross_us);
    return v;
}

}  // namespace weft
