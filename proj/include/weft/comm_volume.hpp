#pragma once

#include <cstdint>

#include "weft/presets.hpp"

namespace weft {

struct CommVolume {
    std::int64_t local_bytes = 0;
    std::int64_t cross_bytes = 0;
    double local_us = 0.0;
    double cross_us = 0.0;
    double cross_time_ratio = 0.0;
};

// cross / (cross + local); 0 when both are zero.
double cross_time_ratio(double local_us, double cross_us);

// Analytic per-iteration collective volumes: TP/SP AllGather+ReduceScatter,
// CP Send/Recv, EP All-to-All (per layer, per micro-batch) plus one DP
// gradient synchronization. Groups are classified local or cross by the rank
// extent they span (tp innermost, then cp, then ep, dp outermost); times use
// effective bandwidth = nominal * efficiency.
CommVolume comm_volume_estimate(const ModelSpec& model, const ClusterSpec& cluster,
                                const ParallelismSpec& par, std::int64_t tokens_per_microbatch,
                                int microbatches = 1);

}  // namespace weft
