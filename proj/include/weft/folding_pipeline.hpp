#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weft/core.hpp"

namespace weft {

// U-shaped layer placement: GPU k hosts [k*c, (k+1)*c) and
// [L-(k+1)*c, L-k*c) with c = L/(2p).
struct FoldedLayout {
    struct Ranges {
        int front_lo = 0, front_hi = 0;  // [lo, hi)
        int back_lo = 0, back_hi = 0;
    };
    int layers = 0;
    std::vector<Ranges> gpus;
};

// Requires layers divisible by 2*stages; no implicit padding.
FoldedLayout fold_layers(int layers, int stages);

enum class Discipline {
    w_shape,
    one_f_one_b,
    bidirectional,
};

std::string_view to_string(Discipline d);
Discipline parse_discipline(std::string_view name);

enum class BlockKind { F, B, SI };
enum class HalfDir { down, up };

// One contiguous device visit. Under w_shape a visit covers one half-stage,
// except the turn at the innermost device (and the whole pass when p = 1)
// which covers two. Under the linear disciplines a visit is one full stage.
struct Block {
    int device = 0;
    BlockKind kind = BlockKind::F;
    std::optional<int> fwd_mb;  // 1-based micro-batch ids; SI carries both
    std::optional<int> bwd_mb;
    HalfDir half = HalfDir::down;
    int half_stages = 1;
    double start_us = 0.0;
    double dur_us = 0.0;

    double end_us() const { return start_us + dur_us; }
};

struct BlockDurations {
    double f_us = 1.0;   // per half-stage (w_shape) or per stage (linear)
    double b_us = 1.0;
    double si_us = 2.0;  // fused forward+backward half-stage, w_shape only
};

struct PipelineSchedule {
    std::vector<Block> blocks;
    int m = 0;
    int p = 0;
    Discipline discipline = Discipline::one_f_one_b;
    double model_state_factor = 1.0;  // 2.0 under bidirectional replication

    double makespan_us() const;
};

// W-shaped schedule: warmup runs the first p forwards un-interleaved, the
// steady phase fuses forward of micro-batch i with backward of i-p into SI
// blocks, cooldown drains the last p backwards. Placement is event-driven
// earliest-start under dependency and device-exclusivity constraints.
PipelineSchedule schedule_w_pipeline(int m, int p, BlockDurations d);

// Classic 1F1B over a linear layout (stage k warms up with p-1-k forwards).
PipelineSchedule schedule_1f1b(int m, int p, BlockDurations d);

// Two opposing 1F1B pipelines over a replicated model; odd micro-batches run
// down the device chain, even ones up.
PipelineSchedule schedule_bidirectional(int m, int p, BlockDurations d);

// Mean over devices of idle fraction within [first start, last end].
double bubble_ratio(const PipelineSchedule& sched);

struct PpVolume {
    std::int64_t transfers = 0;
    std::int64_t bytes = 0;
};

// Device-boundary crossings implied by consecutive visits of each
// micro-batch pass.
PpVolume pp_comm_volume(const PipelineSchedule& sched, std::int64_t bytes_per_boundary);

// Empty iff the schedule satisfies the structural invariants: per-device
// exclusivity, per-pass chain timing, micro-batch id rules.
std::vector<std::string> validate_schedule(const PipelineSchedule& sched);

// Chrome-trace JSON (one complete event per block, device as track) and a
// flat CSV of blocks.
std::string schedule_to_trace_json(const PipelineSchedule& sched);
std::string schedule_to_csv(const PipelineSchedule& sched);

}  // namespace weft
