#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "weft/core.hpp"
#include "weft/folding_pipeline.hpp"
#include "weft/presets.hpp"

namespace weft {

struct MemoryConfig {
    std::int64_t act_bytes_per_layer = 0;    // per micro-batch, per layer, per GPU
    std::int64_t state_bytes_per_layer = 0;  // params + grads + optimizer, per GPU
    std::int64_t capacity_bytes = 0;
    std::int64_t slack_bytes = 512ll << 20;  // tolerated interleaving overhead
    int layers = 0;

    void validate() const;
};

struct DeviceTimeline {
    std::vector<std::pair<double, std::int64_t>> points;  // piecewise-constant steps
    std::int64_t baseline_bytes = 0;  // model state
    std::int64_t peak_bytes = 0;
    std::int64_t end_bytes = 0;  // equals baseline when every activation is freed
};

struct MemoryTimeline {
    std::vector<DeviceTimeline> devices;

    std::int64_t peak_bytes() const;
    bool fits(std::int64_t capacity_bytes) const;
};

// Replays a schedule: a forward visit allocates activation bytes for its
// layer span at block end, a backward visit frees the matching bytes at
// block end (SI blocks do both). Model-state baseline is layers-per-device
// times state bytes, doubled under bidirectional replication. A peak above
// capacity is reported via fits(), never thrown.
MemoryTimeline simulate_memory(const PipelineSchedule& sched, const MemoryConfig& cfg);

struct MaxModelResult {
    int layers = 0;
    std::int64_t param_count = 0;
};

// Largest layer count whose simulated peak fits the capacity, searched in
// layout-legal steps (2p for w_shape, p otherwise). Binary search; peak
// memory is monotone in the layer count by construction.
MaxModelResult max_model_size(const ModelSpec& base, const ParallelismSpec& par,
                              const MemoryConfig& per_layer, Discipline discipline, int m);

// Per-trial peak used by max_model_size; exposed for oracle-style scans.
std::int64_t peak_for_layers(int layers, const ParallelismSpec& par,
                             const MemoryConfig& per_layer, Discipline discipline, int m);

// Standard transformer activation/state footprints (documented
// approximations; override via scenario when measured values exist).
std::int64_t default_act_bytes_per_layer(const ModelSpec& model, const ParallelismSpec& par);
std::int64_t default_state_bytes_per_layer(const ModelSpec& model, const ParallelismSpec& par);

std::string timeline_to_csv(const MemoryTimeline& tl);
std::string peaks_to_json(const MemoryTimeline& tl, const MemoryConfig& cfg);

}  // namespace weft
