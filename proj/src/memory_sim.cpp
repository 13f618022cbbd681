#include "weft/memory_sim.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "json.hpp"

namespace weft {

using nlohmann::json;

void MemoryConfig::validate() const {
    if (act_bytes_per_layer < 0 || state_bytes_per_layer < 0 || capacity_bytes < 0 ||
        slack_bytes < 0 || layers < 0) {
        throw ConfigError("memory config fields must be non-negative");
    }
}

std::int64_t MemoryTimeline::peak_bytes() const {
    std::int64_t peak = 0;
    for (const auto& d : devices) peak = std::max(peak, d.peak_bytes);
    return peak;
}

bool MemoryTimeline::fits(std::int64_t capacity_bytes) const {
    for (const auto& d : devices) {
        if (d.peak_bytes > capacity_bytes) return false;
    }
    return true;
}

MemoryTimeline simulate_memory(const PipelineSchedule& sched, const MemoryConfig& cfg) {
    cfg.validate();
    if (cfg.layers <= 0) throw ConfigError("simulate_memory: layers must be set");

    std::int64_t layers_per_half_stage = 0;
    if (sched.discipline == Discipline::w_shape) {
        if (cfg.layers % (2 * sched.p) != 0) {
            throw InfeasibleError("simulate_memory: layers not divisible by 2*p");
        }
        layers_per_half_stage = cfg.layers / (2 * sched.p);
    } else {
        if (cfg.layers % sched.p != 0) {
            throw InfeasibleError("simulate_memory: layers not divisible by p");
        }
        layers_per_half_stage = cfg.layers / sched.p;  // a visit is one full stage
    }
    const std::int64_t layers_per_device = cfg.layers / sched.p;

    MemoryTimeline tl;
    tl.devices.resize(static_cast<std::size_t>(sched.p));
    const std::int64_t baseline = static_cast<std::int64_t>(
        static_cast<double>(cfg.state_bytes_per_layer * layers_per_device) *
        sched.model_state_factor);

    // (time -> delta) per device; map keeps events time-ordered and merges
    // simultaneous alloc/free pairs from SI blocks.
    std::vector<std::map<double, std::int64_t>> deltas(static_cast<std::size_t>(sched.p));
    for (const auto& b : sched.blocks) {
        const std::int64_t span_bytes =
            cfg.act_bytes_per_layer * layers_per_half_stage * b.half_stages;
        auto& dev = deltas[static_cast<std::size_t>(b.device)];
        if (b.fwd_mb) dev[b.end_us()] += span_bytes;
        if (b.bwd_mb) dev[b.end_us()] -= span_bytes;
    }

    for (int d = 0; d < sched.p; ++d) {
        auto& out = tl.devices[static_cast<std::size_t>(d)];
        out.baseline_bytes = baseline;
        std::int64_t cur = baseline;
        out.points.emplace_back(0.0, cur);
        out.peak_bytes = cur;
        for (const auto& [t, delta] : deltas[static_cast<std::size_t>(d)]) {
            if (delta == 0) continue;
            cur += delta;
            out.points.emplace_back(t, cur);
            out.peak_bytes = std::max(out.peak_bytes, cur);
        }
        out.end_bytes = cur;
    }
    return tl;
}

std::int64_t peak_for_layers(int layers, const ParallelismSpec& par, const MemoryConfig& per_layer,
                             Discipline discipline, int m) {
    MemoryConfig cfg = per_layer;
    cfg.layers = layers;
    BlockDurations d;
    d.f_us = 1.0;
    d.b_us = 2.0;
    d.si_us = 3.0;
    PipelineSchedule sched;
    switch (discipline) {
        case Discipline::w_shape: sched = schedule_w_pipeline(m, par.pp, d); break;
        case Discipline::one_f_one_b: sched = schedule_1f1b(m, par.pp, d); break;
        case Discipline::bidirectional: sched = schedule_bidirectional(m, par.pp, d); break;
    }
    return simulate_memory(sched, cfg).peak_bytes();
}

MaxModelResult max_model_size(const ModelSpec& base, const ParallelismSpec& par,
                              const MemoryConfig& per_layer, Discipline discipline, int m) {
    per_layer.validate();
    const int step = discipline == Discipline::w_shape ? 2 * par.pp : par.pp;
    constexpr int kMaxSteps = 4096;

    auto fits = [&](int k) {
        return peak_for_layers(k * step, par, per_layer, discipline, m) <= per_layer.capacity_bytes;
    };
    if (!fits(1)) {
        throw InfeasibleError("max_model_size: even " + std::to_string(step) +
                              " layers exceed capacity");
    }
    int lo = 1, hi = 1;
    while (hi < kMaxSteps && fits(hi * 2)) hi *= 2;
    hi = std::min(hi * 2, kMaxSteps);
    // invariant: fits(lo), !fits(hi) unless hi capped
    while (lo + 1 < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (fits(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (hi == kMaxSteps && fits(hi)) lo = hi;

    MaxModelResult result;
    result.layers = lo * step;
    ModelSpec grown = base;
    grown.layers = result.layers;
    result.param_count = params_per_layer(grown) * result.layers;
    return result;
}

std::int64_t default_act_bytes_per_layer(const ModelSpec& model, const ParallelismSpec& par) {
    // s*b*h*34 bytes per layer (flash-attention regime), sharded by tp and cp.
    const double tokens = static_cast<double>(model.seq_len) / par.cp;
    double bytes = tokens * model.hidden * 34.0 / par.tp;
    if (model.is_moe()) {
        // dispatched expert activations scale with topk
        bytes += tokens * model.hidden * 10.0 * model.topk.value_or(1) / par.tp;
    }
    return static_cast<std::int64_t>(bytes);
}

std::int64_t default_state_bytes_per_layer(const ModelSpec& model, const ParallelismSpec& par) {
    // bf16 param + grad, fp32 master + two optimizer moments = 16 bytes/param
    constexpr double kBytesPerParam = 16.0;
    const double h = model.hidden;
    const double f = model.intermediate;
    double params = 0.0;
    if (model.is_moe()) {
        const double e = model.experts.value_or(1);
        params = (4.0 * h * h + 2.0 * h) / par.tp + e * 3.0 * h * f / (par.ep * par.tp) + e * h;
    } else {
        params = static_cast<double>(params_per_layer(model)) / par.tp;
    }
    return static_cast<std::int64_t>(params * kBytesPerParam);
}

std::string timeline_to_csv(const MemoryTimeline& tl) {
    std::ostringstream out;
    out << "device,t_us,bytes\n";
    for (std::size_t d = 0; d < tl.devices.size(); ++d) {
        for (const auto& [t, bytes] : tl.devices[d].points) {
            out << d << ',' << t << ',' << bytes << '\n';
        }
    }
    return out.str();
}

std::string peaks_to_json(const MemoryTimeline& tl, const MemoryConfig& cfg) {
    json j;
    j["devices"] = json::array();
    for (std::size_t d = 0; d < tl.devices.size(); ++d) {
        const auto& dev = tl.devices[d];
        j["devices"].push_back({{"device", d},
                                {"baseline_bytes", dev.baseline_bytes},
                                {"peak_bytes", dev.peak_bytes},
                                {"end_bytes", dev.end_bytes},
                                {"fits", dev.peak_bytes <= cfg.capacity_bytes}});
    }
    j["peak_bytes"] = tl.peak_bytes();
    j["capacity_bytes"] = cfg.capacity_bytes;
    j["fits"] = tl.fits(cfg.capacity_bytes);
    return j.dump(2) + "\n";
}

}  // namespace weft
