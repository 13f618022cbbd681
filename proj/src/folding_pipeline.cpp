#include "weft/folding_pipeline.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace weft {

using nlohmann::json;

FoldedLayout fold_layers(int layers, int stages) {
    if (layers <= 0 || stages <= 0) throw ConfigError("fold_layers: counts must be positive");
    if (layers % (2 * stages) != 0) {
        throw InfeasibleError("fold_layers: " + std::to_string(layers) +
                              " layers not divisible by 2*p = " + std::to_string(2 * stages));
    }
    const int c = layers / (2 * stages);
    FoldedLayout layout;
    layout.layers = layers;
    for (int k = 0; k < stages; ++k) {
        FoldedLayout::Ranges r;
        r.front_lo = k * c;
        r.front_hi = (k + 1) * c;
        r.back_lo = layers - (k + 1) * c;
        r.back_hi = layers - k * c;
        layout.gpus.push_back(r);
    }
    return layout;
}

std::string_view to_string(Discipline d) {
    switch (d) {
        case Discipline::w_shape: return "w_shape";
        case Discipline::one_f_one_b: return "one_f_one_b";
        case Discipline::bidirectional: return "bidirectional";
    }
    return "?";
}

Discipline parse_discipline(std::string_view name) {
    if (name == "w_shape") return Discipline::w_shape;
    if (name == "one_f_one_b" || name == "1f1b") return Discipline::one_f_one_b;
    if (name == "bidirectional") return Discipline::bidirectional;
    throw ConfigError("unknown discipline: " + std::string(name));
}

double PipelineSchedule::makespan_us() const {
    double end = 0.0;
    for (const auto& b : blocks) end = std::max(end, b.end_us());
    return end;
}

// ---------------------------------------------------------------------------
// Event engine: tasks with dependencies placed earliest-start under device
// exclusivity; ties broken by creation order.

namespace {

struct Task {
    int device = 0;
    double dur = 0.0;
    std::vector<int> deps;
    Block proto;  // start/dur filled at commit
};

std::vector<Block> run_engine(std::vector<Task>& tasks, int devices) {
    const std::size_t n = tasks.size();
    std::vector<double> end(n, -1.0);
    std::vector<bool> done(n, false);
    std::vector<double> device_free(static_cast<std::size_t>(devices), 0.0);
    std::vector<Block> blocks(n);

    for (std::size_t committed = 0; committed < n; ++committed) {
        std::size_t pick = n;
        double pick_start = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (done[i]) continue;
            double ready = 0.0;
            bool eligible = true;
            for (int d : tasks[i].deps) {
                if (!done[static_cast<std::size_t>(d)]) {
                    eligible = false;
                    break;
                }
                ready = std::max(ready, end[static_cast<std::size_t>(d)]);
            }
            if (!eligible) continue;
            const double start = std::max(ready, device_free[static_cast<std::size_t>(tasks[i].device)]);
            if (start < pick_start) {
                pick_start = start;
                pick = i;
            }
        }
        if (pick == n) throw ConfigError("schedule dependencies form a cycle");
        Task& t = tasks[pick];
        done[pick] = true;
        end[pick] = pick_start + t.dur;
        device_free[static_cast<std::size_t>(t.device)] = end[pick];
        t.proto.start_us = pick_start;
        t.proto.dur_us = t.dur;
        blocks[pick] = t.proto;
    }
    std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) {
        if (a.start_us != b.start_us) return a.start_us < b.start_us;
        return a.device < b.device;
    });
    return blocks;
}

struct Visit {
    int device = 0;
    int half_stages = 1;
    HalfDir half = HalfDir::down;
};

// Device path of one pass over the folded layout: 0..p-1..0 with the two
// half-stages at the turn merged into a single visit.
std::vector<Visit> u_path(int p) {
    std::vector<Visit> visits;
    if (p == 1) {
        visits.push_back({0, 2, HalfDir::down});
        return visits;
    }
    for (int d = 0; d < p - 1; ++d) visits.push_back({d, 1, HalfDir::down});
    visits.push_back({p - 1, 2, HalfDir::down});
    for (int d = p - 2; d >= 0; --d) visits.push_back({d, 1, HalfDir::up});
    return visits;
}

// Appends one chain of visits; returns index of its last task.
int add_chain(std::vector<Task>& tasks, const std::vector<Visit>& visits, BlockKind kind,
              std::optional<int> fwd_mb, std::optional<int> bwd_mb, double half_dur,
              int first_dep) {
    int prev = first_dep;
    for (std::size_t v = 0; v < visits.size(); ++v) {
        Task t;
        t.device = visits[v].device;
        t.dur = half_dur * visits[v].half_stages;
        if (prev >= 0) t.deps.push_back(prev);
        t.proto.device = visits[v].device;
        t.proto.kind = kind;
        t.proto.fwd_mb = fwd_mb;
        t.proto.bwd_mb = bwd_mb;
        t.proto.half = visits[v].half;
        t.proto.half_stages = visits[v].half_stages;
        tasks.push_back(std::move(t));
        prev = static_cast<int>(tasks.size()) - 1;
    }
    return prev;
}

}  // namespace

PipelineSchedule schedule_w_pipeline(int m, int p, BlockDurations d) {
    if (m < 1 || p < 1) throw ConfigError("schedule_w_pipeline: m, p must be >= 1");
    if (d.f_us <= 0.0 || d.b_us <= 0.0 || d.si_us <= 0.0) {
        throw ConfigError("schedule_w_pipeline: durations must be positive");
    }
    const auto path = u_path(p);
    std::vector<Task> tasks;
    std::vector<int> fwd_done(static_cast<std::size_t>(m) + 1, -1);

    // Warmup: first min(m, p) forwards run un-interleaved, injected in order.
    int prev_inject = -1;
    for (int mb = 1; mb <= std::min(m, p); ++mb) {
        const int first = static_cast<int>(tasks.size());
        fwd_done[static_cast<std::size_t>(mb)] =
            add_chain(tasks, path, BlockKind::F, mb, std::nullopt, d.f_us, prev_inject);
        prev_inject = first;  // next micro-batch enters after this one's first visit
    }
    // Steady: forward of micro-batch i fuses with backward of i-p.
    for (int mb = p + 1; mb <= m; ++mb) {
        fwd_done[static_cast<std::size_t>(mb)] =
            add_chain(tasks, path, BlockKind::SI, mb, mb - p, d.si_us,
                      fwd_done[static_cast<std::size_t>(mb - p)]);
    }
    // Cooldown: the last min(m, p) backwards run alone.
    for (int mb = std::max(1, m - p + 1); mb <= m; ++mb) {
        add_chain(tasks, path, BlockKind::B, std::nullopt, mb, d.b_us,
                  fwd_done[static_cast<std::size_t>(mb)]);
    }

    PipelineSchedule sched;
    sched.m = m;
    sched.p = p;
    sched.discipline = Discipline::w_shape;
    sched.blocks = run_engine(tasks, p);
    return sched;
}

PipelineSchedule schedule_1f1b(int m, int p, BlockDurations d) {
    if (m < 1 || p < 1) throw ConfigError("schedule_1f1b: m, p must be >= 1");
    if (d.f_us <= 0.0 || d.b_us <= 0.0) {
        throw ConfigError("schedule_1f1b: durations must be positive");
    }
    std::vector<Task> tasks;
    // task ids per (mb, stage)
    auto idx = [&](int mb, int stage, bool bwd) {
        return (static_cast<std::size_t>(mb - 1) * p + stage) * 2 + (bwd ? 1 : 0);
    };
    std::vector<int> id_map(static_cast<std::size_t>(m) * p * 2, -1);

    auto add_task = [&](int mb, int stage, bool bwd) {
        Task t;
        t.device = stage;
        t.dur = bwd ? d.b_us : d.f_us;
        if (!bwd) {
            if (stage > 0) t.deps.push_back(id_map[idx(mb, stage - 1, false)]);
        } else {
            if (stage < p - 1) {
                t.deps.push_back(id_map[idx(mb, stage + 1, true)]);
            } else {
                t.deps.push_back(id_map[idx(mb, p - 1, false)]);
            }
        }
        t.proto.device = stage;
        t.proto.kind = bwd ? BlockKind::B : BlockKind::F;
        if (bwd) {
            t.proto.bwd_mb = mb;
        } else {
            t.proto.fwd_mb = mb;
        }
        t.proto.half = HalfDir::down;
        tasks.push_back(std::move(t));
        id_map[idx(mb, stage, bwd)] = static_cast<int>(tasks.size()) - 1;
        return id_map[idx(mb, stage, bwd)];
    };

    // Data-dependency tasks must exist before device-order chaining; create
    // them in per-stage discipline order so forward deps resolve.
    // Stage-k order: F1..Fw, then alternate F/B, then trailing B's.
    std::vector<std::vector<std::pair<int, bool>>> order(static_cast<std::size_t>(p));
    for (int k = 0; k < p; ++k) {
        const int warm = std::min(m, p - 1 - k);
        auto& seq = order[static_cast<std::size_t>(k)];
        for (int mb = 1; mb <= warm; ++mb) seq.emplace_back(mb, false);
        int next_f = warm + 1, next_b = 1;
        while (next_f <= m || next_b <= m) {
            if (next_f <= m) seq.emplace_back(next_f++, false);
            if (next_b <= m) seq.emplace_back(next_b++, true);
        }
    }
    // Create forward tasks stage by stage, then backward (reverse stage), so
    // every dependency already exists.
    for (int k = 0; k < p; ++k) {
        for (int mb = 1; mb <= m; ++mb) add_task(mb, k, false);
    }
    for (int k = p - 1; k >= 0; --k) {
        for (int mb = 1; mb <= m; ++mb) add_task(mb, k, true);
    }
    // Chain each device's discipline order.
    for (int k = 0; k < p; ++k) {
        int prev = -1;
        for (const auto& [mb, bwd] : order[static_cast<std::size_t>(k)]) {
            const int id = id_map[idx(mb, k, bwd)];
            if (prev >= 0) tasks[static_cast<std::size_t>(id)].deps.push_back(prev);
            prev = id;
        }
    }

    PipelineSchedule sched;
    sched.m = m;
    sched.p = p;
    sched.discipline = Discipline::one_f_one_b;
    sched.blocks = run_engine(tasks, p);
    return sched;
}

PipelineSchedule schedule_bidirectional(int m, int p, BlockDurations d) {
    if (m < 1 || p < 1) throw ConfigError("schedule_bidirectional: m, p must be >= 1");
    std::vector<Task> tasks;

    // Two 1F1B pipelines sharing the devices: odd micro-batches flow
    // 0..p-1, even ones p-1..0, each against its own model replica.
    for (int dir = 0; dir < 2; ++dir) {
        std::vector<int> mbs;
        for (int mb = dir + 1; mb <= m; mb += 2) mbs.push_back(mb);
        if (mbs.empty()) continue;
        auto device_of = [&](int stage) { return dir == 0 ? stage : p - 1 - stage; };

        std::map<std::pair<int, int>, int> fwd_id, bwd_id;
        for (int k = 0; k < p; ++k) {
            for (int mb : mbs) {
                Task t;
                t.device = device_of(k);
                t.dur = d.f_us;
                if (k > 0) t.deps.push_back(fwd_id.at({mb, k - 1}));
                t.proto.device = t.device;
                t.proto.kind = BlockKind::F;
                t.proto.fwd_mb = mb;
                tasks.push_back(std::move(t));
                fwd_id[{mb, k}] = static_cast<int>(tasks.size()) - 1;
            }
        }
        for (int k = p - 1; k >= 0; --k) {
            for (int mb : mbs) {
                Task t;
                t.device = device_of(k);
                t.dur = d.b_us;
                t.deps.push_back(k < p - 1 ? bwd_id.at({mb, k + 1}) : fwd_id.at({mb, p - 1}));
                t.proto.device = t.device;
                t.proto.kind = BlockKind::B;
                t.proto.bwd_mb = mb;
                tasks.push_back(std::move(t));
                bwd_id[{mb, k}] = static_cast<int>(tasks.size()) - 1;
            }
        }
        // per-device 1F1B chaining within this direction
        for (int k = 0; k < p; ++k) {
            const int warm = std::min(static_cast<int>(mbs.size()), p - 1 - k);
            std::vector<int> seq;
            for (int i = 0; i < warm; ++i) seq.push_back(fwd_id.at({mbs[static_cast<std::size_t>(i)], k}));
            std::size_t next_f = static_cast<std::size_t>(warm), next_b = 0;
            while (next_f < mbs.size() || next_b < mbs.size()) {
                if (next_f < mbs.size()) seq.push_back(fwd_id.at({mbs[next_f++], k}));
                if (next_b < mbs.size()) seq.push_back(bwd_id.at({mbs[next_b++], k}));
            }
            for (std::size_t i = 1; i < seq.size(); ++i) {
                tasks[static_cast<std::size_t>(seq[i])].deps.push_back(seq[i - 1]);
            }
        }
    }

    PipelineSchedule sched;
    sched.m = m;
    sched.p = p;
    sched.discipline = Discipline::bidirectional;
    sched.model_state_factor = 2.0;
    sched.blocks = run_engine(tasks, p);
    return sched;
}

// ---------------------------------------------------------------------------
// Analyses

double bubble_ratio(const PipelineSchedule& sched) {
    if (sched.blocks.empty()) throw ConfigError("bubble_ratio: empty schedule");
    double sum = 0.0;
    int devices = 0;
    for (int dev = 0; dev < sched.p; ++dev) {
        double first = std::numeric_limits<double>::infinity();
        double last = 0.0, busy = 0.0;
        bool any = false;
        for (const auto& b : sched.blocks) {
            if (b.device != dev) continue;
            any = true;
            first = std::min(first, b.start_us);
            last = std::max(last, b.end_us());
            busy += b.dur_us;
        }
        if (!any) continue;
        const double span = last - first;
        sum += span > 0.0 ? (span - busy) / span : 0.0;
        ++devices;
    }
    return devices > 0 ? sum / devices : 0.0;
}

namespace {

// Ordered device visits of one micro-batch pass.
std::vector<const Block*> pass_visits(const PipelineSchedule& sched, int mb, bool backward) {
    std::vector<const Block*> visits;
    for (const auto& b : sched.blocks) {
        const auto& id = backward ? b.bwd_mb : b.fwd_mb;
        if (id && *id == mb) visits.push_back(&b);
    }
    std::sort(visits.begin(), visits.end(),
              [](const Block* a, const Block* b) { return a->start_us < b->start_us; });
    return visits;
}

}  // namespace

PpVolume pp_comm_volume(const PipelineSchedule& sched, std::int64_t bytes_per_boundary) {
    PpVolume v;
    for (int mb = 1; mb <= sched.m; ++mb) {
        for (bool backward : {false, true}) {
            const auto visits = pass_visits(sched, mb, backward);
            for (std::size_t i = 1; i < visits.size(); ++i) {
                if (visits[i]->device != visits[i - 1]->device) ++v.transfers;
            }
        }
    }
    v.bytes = v.transfers * bytes_per_boundary;
    return v;
}

std::vector<std::string> validate_schedule(const PipelineSchedule& sched) {
    std::vector<std::string> violations;
    auto report = [&](const std::string& msg) { violations.push_back(msg); };

    for (const auto& b : sched.blocks) {
        if (b.device < 0 || b.device >= sched.p) {
            report("block device " + std::to_string(b.device) + " out of range");
        }
        if (b.dur_us < 0.0) report("block with negative duration");
        switch (b.kind) {
            case BlockKind::SI:
                if (!b.fwd_mb || !b.bwd_mb) report("SI block missing a micro-batch id");
                break;
            case BlockKind::F:
                if (!b.fwd_mb || b.bwd_mb) report("F block must carry exactly the forward id");
                break;
            case BlockKind::B:
                if (!b.bwd_mb || b.fwd_mb) report("B block must carry exactly the backward id");
                break;
        }
    }

    // device exclusivity
    for (int dev = 0; dev < sched.p; ++dev) {
        std::vector<const Block*> dev_blocks;
        for (const auto& b : sched.blocks) {
            if (b.device == dev) dev_blocks.push_back(&b);
        }
        std::sort(dev_blocks.begin(), dev_blocks.end(),
                  [](const Block* a, const Block* b) { return a->start_us < b->start_us; });
        for (std::size_t i = 1; i < dev_blocks.size(); ++i) {
            if (dev_blocks[i]->start_us < dev_blocks[i - 1]->end_us() - 1e-9) {
                report("device " + std::to_string(dev) + " blocks overlap at t=" +
                       std::to_string(dev_blocks[i]->start_us));
            }
        }
    }

    // per-pass chain timing: each visit starts after the previous one ends
    for (int mb = 1; mb <= sched.m; ++mb) {
        for (bool backward : {false, true}) {
            const auto visits = pass_visits(sched, mb, backward);
            if (visits.empty()) {
                report(std::string(backward ? "backward" : "forward") + " pass of micro-batch " +
                       std::to_string(mb) + " missing");
                continue;
            }
            for (std::size_t i = 1; i < visits.size(); ++i) {
                if (visits[i]->start_us < visits[i - 1]->end_us() - 1e-9) {
                    report("micro-batch " + std::to_string(mb) +
                           (backward ? " backward" : " forward") + " visit starts before its " +
                           "predecessor ends");
                }
            }
        }
    }
    return violations;
}

std::string schedule_to_trace_json(const PipelineSchedule& sched) {
    json events = json::array();
    for (const auto& b : sched.blocks) {
        std::string name;
        switch (b.kind) {
            case BlockKind::F: name = "F mb" + std::to_string(*b.fwd_mb); break;
            case BlockKind::B: name = "B mb" + std::to_string(*b.bwd_mb); break;
            case BlockKind::SI:
                name = "SI f" + std::to_string(*b.fwd_mb) + "/b" + std::to_string(*b.bwd_mb);
                break;
        }
        json e;
        e["name"] = name;
        e["ph"] = "X";
        e["ts"] = b.start_us;
        e["dur"] = b.dur_us;
        e["pid"] = 0;
        e["tid"] = b.device;
        e["args"] = {{"half", b.half == HalfDir::down ? "down" : "up"},
                     {"half_stages", b.half_stages}};
        events.push_back(e);
    }
    json j;
    j["traceEvents"] = events;
    j["displayTimeUnit"] = "ms";
    return j.dump(2) + "\n";
}

std::string schedule_to_csv(const PipelineSchedule& sched) {
    std::ostringstream out;
    out << "device,kind,fwd_mb,bwd_mb,half,half_stages,start_us,dur_us\n";
    for (const auto& b : sched.blocks) {
        out << b.device << ',';
        switch (b.kind) {
            case BlockKind::F: out << 'F'; break;
            case BlockKind::B: out << 'B'; break;
            case BlockKind::SI: out << "SI"; break;
        }
        out << ',' << (b.fwd_mb ? std::to_string(*b.fwd_mb) : "") << ','
            << (b.bwd_mb ? std::to_string(*b.bwd_mb) : "") << ','
            << (b.half == HalfDir::down ? "down" : "up") << ',' << b.half_stages << ','
            << b.start_us << ',' << b.dur_us << '\n';
    }
    return out.str();
}

}  // namespace weft
