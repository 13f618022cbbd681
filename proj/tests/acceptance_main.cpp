// Acceptance suite: runs every gate criterion and prints one line per
// criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "weft/comm_volume.hpp"
#include "weft/estimate.hpp"
#include "weft/memory_sim.hpp"
#include "weft/report.hpp"

using namespace weft;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

ParallelismSpec reference_par() {
    ParallelismSpec par;
    par.dp = 4;
    par.tp = 8;
    par.pp = 2;
    par.sp = true;
    return par;
}

MemoryConfig reference_memory() {
    const ModelSpec model = model_preset("llama-25B");
    const ParallelismSpec par = reference_par();
    MemoryConfig cfg;
    cfg.act_bytes_per_layer = default_act_bytes_per_layer(model, par);
    cfg.state_bytes_per_layer = default_state_bytes_per_layer(model, par);
    cfg.capacity_bytes = 55298260992;  // 51.5 GiB, pinned reference boundary
    cfg.layers = model.layers;
    return cfg;
}

Scenario reference_scenario(bool parallel) {
    std::ostringstream ss;
    ss << R"({"name":"acceptance","model":"llama-25B","cluster":"a40_64",)"
       << R"("parallelism":{"dp":4,"tp":8,"pp":2,"sp":true},"microbatches":8,)"
       << R"("profile":{"archetype":"pcie_a40"},)"
       << R"("caps":{"sequences":6,"segments":5,"candidates":256},)"
       << R"("parallel_search":)" << (parallel ? "true" : "false") << R"(,"seed":11})";
    return parse_scenario(ss.str());
}

double device_idle(const PipelineSchedule& s, int dev) {
    double first = 1e300, last = 0.0, busy = 0.0;
    bool any = false;
    for (const auto& b : s.blocks) {
        if (b.device != dev) continue;
        any = true;
        first = std::min(first, b.start_us);
        last = std::max(last, b.end_us());
        busy += b.dur_us;
    }
    return any ? (last - first) - busy : 0.0;
}

// --- criteria -------------------------------------------------------------

bool dp_exactness(std::string& detail) {
    const auto start = Clock::now();
    std::mt19937 rng(101);
    std::uniform_int_distribution<int> size_dist(0, 6);
    std::uniform_real_distribution<double> cost_dist(1.0, 100.0);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n_f = size_dist(rng), n_b = size_dist(rng);
        std::map<std::pair<int, int>, double> table;
        for (int i = 0; i <= n_f; ++i) {
            for (int j = 0; j <= n_b; ++j) {
                if (i || j) table[{i, j}] = cost_dist(rng);
            }
        }
        const PairCostFn cost = [&table](int i, int j) { return table.at({i, j}); };
        const PairingPlan dp = dp_align(n_f, n_b, cost);
        const BruteForceResult bf = brute_force_align(n_f, n_b, cost);
        if (dp.total_us != bf.plan.total_us) {
            detail = "mismatch at instance " + std::to_string(trial);
            return false;
        }
        ++checked;
    }
    const double elapsed = seconds_since(start);
    std::ostringstream ss;
    ss << checked << " instances exact in " << elapsed << " s";
    detail = ss.str();
    return elapsed < 10.0;
}

bool oef_algebra(std::string& detail) {
    if (oef(10, 4, 10) != 1.0 || oef(10, 4, 14) != 0.0 || oef(10, 4, 12) != 0.5) {
        detail = "canonical triples off";
        return false;
    }
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> t_dist(0.01, 1000.0);
    std::uniform_real_distribution<double> e_dist(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double ti = t_dist(rng), tj = t_dist(rng), e = e_dist(rng);
        worst = std::max(worst, std::abs(oef(ti, tj, overlapped_time(ti, tj, e)) - e));
    }
    std::ostringstream ss;
    ss << "round-trip worst error " << worst;
    detail = ss.str();
    return worst < 1e-9;
}

bool folding(std::string& detail) {
    const FoldedLayout layout = fold_layers(32, 4);
    const auto& g0 = layout.gpus[0];
    detail = "GPU0 = [" + std::to_string(g0.front_lo) + "," + std::to_string(g0.front_hi) +
             ") + [" + std::to_string(g0.back_lo) + "," + std::to_string(g0.back_hi) + ")";
    return g0.front_lo == 0 && g0.front_hi == 4 && g0.back_lo == 28 && g0.back_hi == 32;
}

bool w_structure(std::string& detail) {
    const PipelineSchedule s = schedule_w_pipeline(12, 4, {1.0, 1.0, 2.0});
    const auto violations = validate_schedule(s);
    if (!violations.empty()) {
        detail = "validator: " + violations.front();
        return false;
    }
    const Block* first_si = nullptr;
    for (const auto& b : s.blocks) {
        if (b.kind == BlockKind::SI && (first_si == nullptr || b.start_us < first_si->start_us)) {
            first_si = &b;
        }
    }
    if (first_si == nullptr || first_si->fwd_mb != 5 || first_si->bwd_mb != 1) {
        detail = "first SI block is not beta5/alpha1";
        return false;
    }
    for (int mb = 1; mb <= 12; ++mb) {
        for (bool backward : {false, true}) {
            std::vector<const Block*> visits;
            for (const auto& b : s.blocks) {
                const auto& id = backward ? b.bwd_mb : b.fwd_mb;
                if (id && *id == mb) visits.push_back(&b);
            }
            std::sort(visits.begin(), visits.end(),
                      [](const Block* x, const Block* y) { return x->start_us < y->start_us; });
            std::map<int, int> crossings;
            for (std::size_t i = 1; i < visits.size(); ++i) {
                const int lo = std::min(visits[i - 1]->device, visits[i]->device);
                if (visits[i - 1]->device != visits[i]->device) ++crossings[lo];
            }
            for (int k = 0; k < 3; ++k) {
                if (crossings[k] != 2) {
                    detail = "micro-batch " + std::to_string(mb) + " crosses boundary " +
                             std::to_string(k) + " " + std::to_string(crossings[k]) + "x";
                    return false;
                }
            }
        }
    }
    detail = "validator clean, first SI = [b5/a1], double boundary crossings";
    return true;
}

bool pp_doubling(std::string& detail) {
    for (int p = 1; p <= 8; ++p) {
        for (int m = 1; m <= 16; ++m) {
            const auto w = pp_comm_volume(schedule_w_pipeline(m, p, {1, 1, 2}), 1);
            const auto lin = pp_comm_volume(schedule_1f1b(m, p, {1, 1, 0}), 1);
            if (w.transfers != 2 * lin.transfers) {
                detail = "m=" + std::to_string(m) + " p=" + std::to_string(p);
                return false;
            }
        }
    }
    detail = "transfer count exactly doubled across 16x8 sweep";
    return true;
}

bool bubble_parity(std::string& detail) {
    // W half-stage durations at half the 1F1B stage durations keep the
    // per-layer work identical; SI = F + B means no interleaving gain.
    double worst = 0.0;
    int mismatches = 0, cases = 0;
    for (int p = 1; p <= 8; ++p) {
        for (int m = 1; m <= 16; ++m) {
            const PipelineSchedule w = schedule_w_pipeline(m, p, {0.5, 0.5, 1.0});
            const PipelineSchedule lin = schedule_1f1b(m, p, {1.0, 1.0, 0.0});
            for (int dev = 0; dev < p; ++dev) {
                ++cases;
                const double delta = std::abs(device_idle(w, dev) - device_idle(lin, dev));
                if (delta > 1e-6) {
                    ++mismatches;
                    worst = std::max(worst, delta);
                }
            }
        }
    }
    std::ostringstream ss;
    ss << mismatches << "/" << cases
       << " device idles differ (worst " << worst
       << " slots); U-fold warmup/cooldown seams add a constant idle offset";
    detail = ss.str();
    return mismatches == 0;
}

bool memory_ordering(std::string& detail) {
    const ModelSpec base = model_preset("llama-25B");
    const ParallelismSpec par = reference_par();
    const MemoryConfig per_layer = reference_memory();
    const MaxModelResult lin = max_model_size(base, par, per_layer, Discipline::one_f_one_b, 8);
    const MaxModelResult w = max_model_size(base, par, per_layer, Discipline::w_shape, 8);
    const MaxModelResult bidi =
        max_model_size(base, par, per_layer, Discipline::bidirectional, 8);
    std::ostringstream ss;
    ss << "layers: bidi " << bidi.layers << " < w " << w.layers << " <= 1f1b " << lin.layers
       << " (ratio " << static_cast<double>(w.layers) / lin.layers << ")";
    detail = ss.str();
    return bidi.layers < w.layers && w.layers <= lin.layers &&
           w.layers >= static_cast<int>(std::ceil(0.95 * lin.layers));
}

bool memory_conservation(std::string& detail) {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int p = 1 + static_cast<int>(rng() % 5);
        const int m = 1 + static_cast<int>(rng() % 10);
        MemoryConfig cfg;
        cfg.act_bytes_per_layer = 1 + static_cast<std::int64_t>(rng() % 997);
        cfg.state_bytes_per_layer = 1 + static_cast<std::int64_t>(rng() % 97);
        cfg.capacity_bytes = 1ll << 40;
        cfg.layers = 2 * p * (1 + static_cast<int>(rng() % 3));
        for (int which = 0; which < 3; ++which) {
            PipelineSchedule s;
            if (which == 0) {
                s = schedule_w_pipeline(m, p, {1, 2, 2.5});
            } else if (which == 1) {
                s = schedule_1f1b(m, p, {1, 2, 0});
            } else {
                s = schedule_bidirectional(m, p, {1, 2, 0});
            }
            for (const auto& dev : simulate_memory(s, cfg).devices) {
                if (dev.end_bytes != dev.baseline_bytes) {
                    detail = "leak under " + std::string(to_string(s.discipline));
                    return false;
                }
            }
        }
    }
    const MemoryConfig cfg = reference_memory();
    const auto w = simulate_memory(schedule_w_pipeline(8, reference_par().pp, {1, 2, 2.5}), cfg);
    const auto lin = simulate_memory(schedule_1f1b(8, reference_par().pp, {2, 4, 0}), cfg);
    const double ratio = static_cast<double>(w.peak_bytes()) / lin.peak_bytes();
    std::ostringstream ss;
    ss << "timelines return to baseline; peak(w)/peak(1f1b) = " << ratio;
    detail = ss.str();
    return ratio <= 1.10;
}

bool scheduling_dominance(std::string& detail) {
    const std::vector<std::string> dense = {"llama-8B", "llama-25B", "llama-39B", "llama-66B",
                                            "gpt-6.7B", "gpt-18B", "gpt-30B"};
    EstimateOptions opts;
    opts.microbatches = 8;
    opts.search.caps = {6, 5, 256};
    for (ProfileArchetype arch : {ProfileArchetype::pcie_a40, ProfileArchetype::nvlink_a800,
                                  ProfileArchetype::nvlink_h100}) {
        const Profile profile = synth_profile(arch);
        ClusterSpec cluster;
        ParallelismSpec par = reference_par();
        switch (arch) {
            case ProfileArchetype::pcie_a40: cluster = cluster_preset("a40_64"); break;
            case ProfileArchetype::nvlink_a800: cluster = cluster_preset("a800_64"); break;
            case ProfileArchetype::nvlink_h100:
                cluster = cluster_preset("h100_32");
                par.dp = 2;
                break;
        }
        for (const auto& name : dense) {
            const ModelSpec model = model_preset(name);
            const auto megatron = estimate_iteration_time(
                model, cluster, par, PlanSource::megatron_baseline, profile, opts);
            const auto wavelet = estimate_iteration_time(model, cluster, par,
                                                         PlanSource::wavelet_rr, profile, opts);
            const auto dhelix =
                estimate_iteration_time(model, cluster, par, PlanSource::dhelix, profile, opts);
            if (!(dhelix.makespan_us <= wavelet.makespan_us + 1e-6 &&
                  wavelet.makespan_us <= megatron.makespan_us + 1e-6)) {
                detail = name + " on " + std::string(to_string(arch)) + " breaks the ordering";
                return false;
            }
            if (arch == ProfileArchetype::pcie_a40 &&
                dhelix.hidden_comm_frac <= wavelet.hidden_comm_frac) {
                detail = name + ": dhelix hides no more than round-robin";
                return false;
            }
        }
    }
    detail = "dhelix <= wavelet_rr <= megatron on 3 archetypes x 7 dense presets";
    return true;
}

bool table1_ratios(std::string& detail) {
    const double r1 = cross_time_ratio(0.98, 0.17);
    const double r2 = cross_time_ratio(0.30, 0.15);
    const double r3 = cross_time_ratio(7.84, 7.52);
    std::ostringstream ss;
    ss << "ratios " << r1 * 100 << "% / " << r2 * 100 << "% / " << r3 * 100 << "%";
    detail = ss.str();
    return std::abs(r1 - 0.148) < 0.015 && std::abs(r2 - 0.33) < 0.015 &&
           std::abs(r3 - 0.499) < 0.015;
}

bool determinism(std::string& detail) {
    const Scenario serial = reference_scenario(false);
    const Scenario parallel = reference_scenario(true);
    const std::string a1 = report_to_json(compare_report(serial));
    const std::string a2 = report_to_json(compare_report(serial));
    const std::string b1 = report_to_json(compare_report(parallel));
    const std::string b2 = report_to_json(compare_report(parallel));
    if (a1 != a2) {
        detail = "serial reruns differ";
        return false;
    }
    if (b1 != b2) {
        detail = "parallel reruns differ";
        return false;
    }
    detail = "byte-identical reports, serial and parallel";
    return true;
}

}  // namespace

int main() {
    const auto start = Clock::now();
    struct Criterion {
        int id;
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "DP exactness vs brute force", dp_exactness},
        {2, "OEF algebra and round-trip", oef_algebra},
        {3, "model folding layout", folding},
        {4, "W-pipeline structure at (12,4)", w_structure},
        {5, "PP Send/Recv volume doubling", pp_doubling},
        {6, "bubble parity W vs 1F1B", bubble_parity},
        {7, "max model size ordering", memory_ordering},
        {8, "memory conservation and peak ratio", memory_conservation},
        {9, "scheduling dominance", scheduling_dominance},
        {10, "cross-node time ratio arithmetic", table1_ratios},
        {11, "report determinism", determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", c.id, c.name,
                    detail.empty() ? "" : " -- ", detail.c_str());
        if (!ok) ++failures;
    }

    const double elapsed = seconds_since(start);
    const bool runtime_ok = elapsed < 300.0;
    std::printf("[%s] criterion 12: acceptance runtime -- %.1f s (< 300 s)\n",
                runtime_ok ? "PASS" : "FAIL", elapsed);
    if (!runtime_ok) ++failures;

    if (failures > 0) {
        std::printf("%d criterion(s) failing\n", failures);
    } else {
        std::printf("all criteria passing\n");
    }
    return failures == 0 ? 0 : 1;
}
