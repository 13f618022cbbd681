#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "weft/comm_volume.hpp"
#include "weft/estimate.hpp"
#include "weft/memory_sim.hpp"
#include "weft/report.hpp"

namespace fs = std::filesystem;
using namespace weft;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitMissingEntry = 4;

struct CommonArgs {
    std::string scenario_path;
    std::string profile_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::string caps;
    bool trace = false;
};

void apply_caps(const std::string& spec, SearchCaps& caps) {
    if (spec.empty()) return;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("bad --caps item: " + item);
        const std::string key = item.substr(0, eq);
        const std::size_t value = std::stoull(item.substr(eq + 1));
        if (key == "seq") {
            caps.sequences = value;
        } else if (key == "segs") {
            caps.segments = value;
        } else if (key == "cands") {
            caps.candidates = value;
        } else {
            throw ConfigError("bad --caps key: " + key);
        }
    }
}

Scenario load(const CommonArgs& args) {
    if (args.scenario_path.empty()) throw ConfigError("--scenario is required");
    Scenario sc = load_scenario(args.scenario_path);
    if (!args.profile_path.empty()) sc.profile_path = args.profile_path;
    if (args.seed) sc.seed = *args.seed;
    apply_caps(args.caps, sc.caps);
    return sc;
}

void emit(const std::string& path, const std::string& content) {
    write_atomic(path, content);
    std::cout << "wrote " << path << "\n";
}

int cmd_presets() {
    std::cout << "models:\n";
    for (const auto& name : model_preset_names()) {
        const ModelSpec m = model_preset(name);
        std::cout << "  " << name << "  hidden=" << m.hidden << " intermediate=" << m.intermediate
                  << " layers=" << m.layers << " seq=" << m.seq_len;
        if (m.experts) std::cout << " experts=" << *m.experts << " topk=" << m.topk.value_or(0);
        std::cout << "\n";
    }
    std::cout << "clusters:\n";
    for (const auto& name : cluster_preset_names()) {
        const ClusterSpec c = cluster_preset(name);
        std::cout << "  " << name << "  gpus=" << c.gpus << " per_node=" << c.per_node
                  << " peak_tflops=" << c.peak_tflops << " local_gbs=" << c.local_bw_gbs
                  << " cross_gbs=" << c.cross_bw_gbs << " mem_gb=" << c.mem_gb << "\n";
    }
    return kExitOk;
}

PipelineSchedule build_schedule(const Scenario& sc, PlanSource source, const Profile& profile,
                                EstimateResult* est_out) {
    EstimateOptions opts;
    opts.search.caps = sc.caps;
    opts.search.barrier_cost_us = sc.barrier_cost_us;
    opts.search.parallel = sc.parallel_search;
    opts.microbatches = sc.microbatches;
    const EstimateResult est =
        estimate_iteration_time(sc.model, sc.cluster, sc.par, source, profile, opts);
    if (est_out != nullptr) *est_out = est;
    const double per_stage = static_cast<double>(sc.model.layers) / sc.par.pp;
    BlockDurations d;
    if (discipline_of(source) == Discipline::one_f_one_b) {
        d.f_us = est.layer_fwd_us * per_stage;
        d.b_us = est.layer_bwd_us * per_stage;
        return schedule_1f1b(sc.microbatches, sc.par.pp, d);
    }
    d.f_us = est.layer_fwd_us * per_stage / 2.0;
    d.b_us = est.layer_bwd_us * per_stage / 2.0;
    d.si_us = est.layer_pair_us * per_stage / 2.0;
    return schedule_w_pipeline(sc.microbatches, sc.par.pp, d);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"planning and simulation toolkit for strand-interleaved LLM training"};
    app.require_subcommand(1);

    CommonArgs args;
    app.add_option("--scenario", args.scenario_path, "scenario JSON file");
    app.add_option("--profile", args.profile_path, "profile JSON file (overrides scenario)");
    app.add_option("--out", args.out_dir, "output directory");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "seed recorded in reports");
    app.add_option("--caps", args.caps, "search caps, e.g. seq=16,segs=6,cands=4096");
    app.add_flag("--trace", args.trace, "also write an event-trace JSON");

    auto* presets_cmd = app.add_subcommand("presets", "list model and cluster presets");

    auto* profile_cmd = app.add_subcommand("profile", "profile files");
    std::string archetype_name = "pcie_a40";
    std::string profile_out = "profile.json";
    auto* synth_cmd = profile_cmd->add_subcommand("synth", "write a synthetic archetype profile");
    synth_cmd->add_option("--archetype", archetype_name, "pcie_a40 | nvlink_a800 | nvlink_h100");
    synth_cmd->add_option("--out-file", profile_out, "output file name");
    std::string validate_path;
    auto* validate_cmd = profile_cmd->add_subcommand("validate", "schema-check a profile file");
    validate_cmd->add_option("file", validate_path, "profile JSON")->required();

    auto* search_cmd = app.add_subcommand("search", "search the SI pairing plan for one layer");
    auto* pipeline_cmd = app.add_subcommand("pipeline", "generate a pipeline schedule");
    auto* memory_cmd = app.add_subcommand("memory", "simulate per-device memory");
    auto* estimate_cmd = app.add_subcommand("estimate", "end-to-end iteration estimate");
    auto* compare_cmd = app.add_subcommand("compare", "compare all plan sources");

    std::string source_name = "dhelix";
    estimate_cmd->add_option("--plan-source", source_name,
                             "megatron_baseline | intra_batch | wavelet_rr | dhelix");
    std::string discipline_name = "w_shape";
    pipeline_cmd->add_option("--discipline", discipline_name,
                             "w_shape | one_f_one_b | bidirectional");
    std::string mem_source_name = "dhelix";
    memory_cmd->add_option("--plan-source", mem_source_name, "plan source for block durations");

    try {
        app.parse(argc, argv);
        if (seed_opt->count() > 0) args.seed = seed_value;

        if (presets_cmd->parsed()) return cmd_presets();

        if (profile_cmd->parsed()) {
            if (synth_cmd->parsed()) {
                const Profile p = synth_profile(parse_archetype(archetype_name));
                const std::string path = (fs::path(args.out_dir) / profile_out).string();
                save_profile(p, path);
                std::cout << "wrote " << path << "\n";
                return kExitOk;
            }
            if (validate_cmd->parsed()) {
                load_profile(validate_path);
                std::cout << "ok\n";
                return kExitOk;
            }
            throw ConfigError("profile needs a subcommand (synth | validate)");
        }

        const Scenario sc = load(args);
        const Profile profile = sc.resolve_profile();

        if (search_cmd->parsed()) {
            const auto [fwd, bwd] = build_layer_dag(sc.model, sc.par, sc.cluster, &profile.solo);
            SearchOptions opts;
            opts.caps = sc.caps;
            opts.barrier_cost_us = sc.barrier_cost_us;
            opts.parallel = sc.parallel_search;
            const BestPlan best = search_si_plan(fwd, bwd, profile.overlap, profile.solo, opts);
            emit((fs::path(args.out_dir) / "plan.json").string(),
                 plan_to_json(best, {{"scenario", sc.name},
                                     {"config_hash", hex64(fnv1a64(sc.canonical_json()))}}));
            std::cout << "total_us " << best.total_us << "\nhidden_comm_frac "
                      << best.hidden_comm_frac << "\n";
            return kExitOk;
        }

        if (pipeline_cmd->parsed()) {
            const Discipline disc = parse_discipline(discipline_name);
            EstimateResult est;
            PipelineSchedule sched;
            if (disc == Discipline::bidirectional) {
                EstimateOptions opts;
                opts.microbatches = sc.microbatches;
                est = estimate_iteration_time(sc.model, sc.cluster, sc.par,
                                              PlanSource::megatron_baseline, profile, opts);
                const double per_stage = static_cast<double>(sc.model.layers) / sc.par.pp;
                sched = schedule_bidirectional(
                    sc.microbatches, sc.par.pp,
                    {est.layer_fwd_us * per_stage, est.layer_bwd_us * per_stage, 0.0});
            } else {
                const PlanSource src = disc == Discipline::one_f_one_b
                                           ? PlanSource::megatron_baseline
                                           : PlanSource::dhelix;
                sched = build_schedule(sc, src, profile, &est);
            }
            emit((fs::path(args.out_dir) / "schedule.csv").string(), schedule_to_csv(sched));
            if (args.trace) {
                emit((fs::path(args.out_dir) / "trace.json").string(),
                     schedule_to_trace_json(sched));
            }
            std::cout << "makespan_us " << sched.makespan_us() << "\nbubble_ratio "
                      << bubble_ratio(sched) << "\n";
            return kExitOk;
        }

        if (memory_cmd->parsed()) {
            const PlanSource src = parse_plan_source(mem_source_name);
            const PipelineSchedule sched = build_schedule(sc, src, profile, nullptr);
            const MemoryConfig cfg = sc.memory_config();
            const MemoryTimeline tl = simulate_memory(sched, cfg);
            emit((fs::path(args.out_dir) / "memory_timeline.csv").string(), timeline_to_csv(tl));
            emit((fs::path(args.out_dir) / "memory_peaks.json").string(), peaks_to_json(tl, cfg));
            std::cout << "peak_bytes " << tl.peak_bytes() << "\n";
            return tl.fits(cfg.capacity_bytes) ? kExitOk : kExitInfeasible;
        }

        if (estimate_cmd->parsed()) {
            EstimateOptions opts;
            opts.search.caps = sc.caps;
            opts.search.barrier_cost_us = sc.barrier_cost_us;
            opts.search.parallel = sc.parallel_search;
            opts.microbatches = sc.microbatches;
            const EstimateResult est = estimate_iteration_time(
                sc.model, sc.cluster, sc.par, parse_plan_source(source_name), profile, opts);
            std::cout << "makespan_us " << est.makespan_us << "\ntflops_per_gpu "
                      << est.tflops_per_gpu << "\nmfu " << est.mfu << "\nhidden_comm_frac "
                      << est.hidden_comm_frac << "\n";
            return kExitOk;
        }

        if (compare_cmd->parsed()) {
            const CompareReport report = compare_report(sc);
            emit((fs::path(args.out_dir) / "report.json").string(), report_to_json(report));
            emit((fs::path(args.out_dir) / "report.csv").string(), report_to_csv(report));
            if (args.trace) {
                EstimateResult est;
                const PipelineSchedule sched =
                    build_schedule(sc, PlanSource::dhelix, profile, &est);
                emit((fs::path(args.out_dir) / "trace.json").string(),
                     schedule_to_trace_json(sched));
            }
            return kExitOk;
        }

        throw ConfigError("no subcommand");
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const MissingProfileEntry& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingEntry;
    } catch (const InfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}
