#pragma once

#include <string>

#include "weft/folding_pipeline.hpp"
#include "weft/op_model.hpp"
#include "weft/overlap_profile.hpp"
#include "weft/pairing_search.hpp"
#include "weft/presets.hpp"

namespace weft {

enum class PlanSource {
    megatron_baseline,
    intra_batch,
    wavelet_rr,
    dhelix,
};

std::string_view to_string(PlanSource source);
PlanSource parse_plan_source(std::string_view name);

Discipline discipline_of(PlanSource source);

struct EstimateOptions {
    SearchOptions search;
    int microbatches = 8;
    // fraction of TP communication hidden by intra-batch decomposition
    double intra_batch_tp_hidden_frac = 0.261;
};

struct EstimateResult {
    double makespan_us = 0.0;
    double tflops_per_gpu = 0.0;
    double mfu = 0.0;
    double hidden_comm_frac = 0.0;
    // per-layer detail feeding the pipeline formulas
    double layer_fwd_us = 0.0;
    double layer_bwd_us = 0.0;
    double layer_pair_us = 0.0;  // fused forward+backward time per layer
};

// Per-layer timing per plan source (sequential, intra-batch discounted,
// fixed round-robin pairing, or the DP search), scaled to pipeline stages
// and folded into the steady-state makespan closed forms:
//   1F1B:    (m + p - 1) * (T_F + T_B)
//   W-shape: (m - 1) * T_pair + p * (T_F + T_B)
// which coincide when pairing yields no gain (T_pair = T_F + T_B).
EstimateResult estimate_iteration_time(const ModelSpec& model, const ClusterSpec& cluster,
                                       const ParallelismSpec& par, PlanSource source,
                                       const Profile& profile,
                                       const EstimateOptions& opts = {});

}  // namespace weft
