#include "weft/report.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace weft {

using nlohmann::json;

namespace {

ModelSpec model_from_json(const json& j) {
    if (j.is_string()) return model_preset(j.get<std::string>());
    ModelSpec m;
    m.name = j.value("name", "custom");
    m.family = parse_model_family(j.at("family").get<std::string>());
    m.hidden = j.at("hidden").get<int>();
    m.intermediate = j.at("intermediate").get<int>();
    m.layers = j.at("layers").get<int>();
    m.seq_len = j.at("seq_len").get<int>();
    if (j.contains("experts") && !j.at("experts").is_null()) m.experts = j.at("experts").get<int>();
    if (j.contains("topk") && !j.at("topk").is_null()) m.topk = j.at("topk").get<int>();
    m.validate();
    return m;
}

ClusterSpec cluster_from_json(const json& j) {
    if (j.is_string()) return cluster_preset(j.get<std::string>());
    ClusterSpec c;
    c.name = j.value("name", "custom");
    c.gpus = j.at("gpus").get<int>();
    c.per_node = j.at("per_node").get<int>();
    c.peak_tflops = j.at("peak_tflops").get<double>();
    c.local_bw_gbs = j.at("local_bw_gbs").get<double>();
    c.cross_bw_gbs = j.at("cross_bw_gbs").get<double>();
    c.mem_gb = j.at("mem_gb").get<double>();
    if (j.contains("bw_efficiency")) c.bw_efficiency = j.at("bw_efficiency").get<double>();
    c.validate();
    return c;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario parse error: ") + e.what());
    }
    static const std::set<std::string> known = {
        "name",       "model",           "cluster",      "parallelism", "microbatches",
        "profile",    "caps",            "barrier_cost_us", "parallel_search", "seed",
        "memory"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw ConfigError("scenario: unknown field '" + key + "'");
    }

    Scenario sc;
    try {
        sc.name = j.value("name", "scenario");
        sc.model = model_from_json(j.at("model"));
        sc.cluster = cluster_from_json(j.at("cluster"));
        const auto& jp = j.at("parallelism");
        sc.par.dp = jp.value("dp", 1);
        sc.par.tp = jp.value("tp", 1);
        sc.par.pp = jp.value("pp", 1);
        sc.par.cp = jp.value("cp", 1);
        sc.par.ep = jp.value("ep", 1);
        sc.par.sp = jp.value("sp", sc.par.tp > 1);
        sc.microbatches = j.value("microbatches", 8);
        if (j.contains("profile")) {
            const auto& jpr = j.at("profile");
            if (jpr.contains("path")) {
                sc.profile_path = jpr.at("path").get<std::string>();
            } else if (jpr.contains("archetype")) {
                sc.archetype = parse_archetype(jpr.at("archetype").get<std::string>());
            } else {
                throw ConfigError("scenario: profile needs 'path' or 'archetype'");
            }
        }
        if (j.contains("caps")) {
            const auto& jc = j.at("caps");
            sc.caps.sequences = jc.value("sequences", sc.caps.sequences);
            sc.caps.segments = jc.value("segments", sc.caps.segments);
            sc.caps.candidates = jc.value("candidates", sc.caps.candidates);
        }
        sc.barrier_cost_us = j.value("barrier_cost_us", 0.0);
        sc.parallel_search = j.value("parallel_search", false);
        sc.seed = j.value("seed", 0ull);
        if (j.contains("memory")) {
            const auto& jm = j.at("memory");
            if (jm.contains("act_bytes_per_layer"))
                sc.act_bytes_per_layer = jm.at("act_bytes_per_layer").get<std::int64_t>();
            if (jm.contains("state_bytes_per_layer"))
                sc.state_bytes_per_layer = jm.at("state_bytes_per_layer").get<std::int64_t>();
            if (jm.contains("capacity_bytes"))
                sc.capacity_bytes = jm.at("capacity_bytes").get<std::int64_t>();
            if (jm.contains("slack_bytes"))
                sc.slack_bytes = jm.at("slack_bytes").get<std::int64_t>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario schema error: ") + e.what());
    }
    sc.par.validate(sc.cluster);
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

Profile Scenario::resolve_profile() const {
    if (profile_path) return load_profile(*profile_path);
    return synth_profile(archetype);
}

MemoryConfig Scenario::memory_config() const {
    MemoryConfig cfg;
    cfg.act_bytes_per_layer =
        act_bytes_per_layer.value_or(default_act_bytes_per_layer(model, par));
    cfg.state_bytes_per_layer =
        state_bytes_per_layer.value_or(default_state_bytes_per_layer(model, par));
    cfg.capacity_bytes =
        capacity_bytes.value_or(static_cast<std::int64_t>(cluster.mem_gb * (1ll << 30)));
    cfg.slack_bytes = slack_bytes.value_or(cfg.slack_bytes);
    cfg.layers = model.layers;
    return cfg;
}

std::string Scenario::canonical_json() const {
    json j;
    j["name"] = name;
    j["model"] = {{"name", model.name},
                  {"family", std::string(to_string(model.family))},
                  {"hidden", model.hidden},
                  {"intermediate", model.intermediate},
                  {"layers", model.layers},
                  {"seq_len", model.seq_len},
                  {"experts", model.experts ? json(*model.experts) : json(nullptr)},
                  {"topk", model.topk ? json(*model.topk) : json(nullptr)}};
    j["cluster"] = {{"name", cluster.name},
                    {"gpus", cluster.gpus},
                    {"per_node", cluster.per_node},
                    {"peak_tflops", cluster.peak_tflops},
                    {"local_bw_gbs", cluster.local_bw_gbs},
                    {"cross_bw_gbs", cluster.cross_bw_gbs},
                    {"mem_gb", cluster.mem_gb},
                    {"bw_efficiency", cluster.bw_efficiency}};
    j["parallelism"] = {{"dp", par.dp}, {"tp", par.tp}, {"pp", par.pp},
                        {"cp", par.cp}, {"ep", par.ep}, {"sp", par.sp}};
    j["microbatches"] = microbatches;
    j["profile"] = profile_path ? json{{"path", *profile_path}}
                                : json{{"archetype", std::string(to_string(archetype))}};
    j["caps"] = {{"sequences", caps.sequences},
                 {"segments", caps.segments},
                 {"candidates", caps.candidates}};
    j["barrier_cost_us"] = barrier_cost_us;
    j["parallel_search"] = parallel_search;
    j["seed"] = seed;
    json jm = json::object();
    if (act_bytes_per_layer) jm["act_bytes_per_layer"] = *act_bytes_per_layer;
    if (state_bytes_per_layer) jm["state_bytes_per_layer"] = *state_bytes_per_layer;
    if (capacity_bytes) jm["capacity_bytes"] = *capacity_bytes;
    if (slack_bytes) jm["slack_bytes"] = *slack_bytes;
    j["memory"] = jm;
    return j.dump();
}

CompareReport compare_report(const Scenario& scenario) {
    const Profile profile = scenario.resolve_profile();
    EstimateOptions opts;
    opts.search.caps = scenario.caps;
    opts.search.barrier_cost_us = scenario.barrier_cost_us;
    opts.search.parallel = scenario.parallel_search;
    opts.microbatches = scenario.microbatches;

    CompareReport report;
    report.scenario_name = scenario.name;
    report.config_hash = hex64(fnv1a64(scenario.canonical_json()));
    report.seed = scenario.seed;

    const MemoryConfig mem = scenario.memory_config();
    double baseline_makespan = 0.0;
    for (PlanSource source : {PlanSource::megatron_baseline, PlanSource::intra_batch,
                              PlanSource::wavelet_rr, PlanSource::dhelix}) {
        CompareRow row;
        row.source = source;
        row.est = estimate_iteration_time(scenario.model, scenario.cluster, scenario.par, source,
                                          profile, opts);
        if (source == PlanSource::megatron_baseline) baseline_makespan = row.est.makespan_us;
        row.speedup = row.est.makespan_us > 0.0 ? baseline_makespan / row.est.makespan_us : 1.0;

        const double per_stage = static_cast<double>(scenario.model.layers) / scenario.par.pp;
        BlockDurations d;
        PipelineSchedule sched;
        if (discipline_of(source) == Discipline::one_f_one_b) {
            d.f_us = row.est.layer_fwd_us * per_stage;
            d.b_us = row.est.layer_bwd_us * per_stage;
            sched = schedule_1f1b(scenario.microbatches, scenario.par.pp, d);
        } else {
            d.f_us = row.est.layer_fwd_us * per_stage / 2.0;
            d.b_us = row.est.layer_bwd_us * per_stage / 2.0;
            d.si_us = row.est.layer_pair_us * per_stage / 2.0;
            sched = schedule_w_pipeline(scenario.microbatches, scenario.par.pp, d);
        }
        const MemoryTimeline tl = simulate_memory(sched, mem);
        row.peak_bytes = tl.peak_bytes();
        row.memory_fits = tl.fits(mem.capacity_bytes);
        row.bubble = bubble_ratio(sched);
        report.rows.push_back(row);
    }
    return report;
}

std::string report_to_json(const CompareReport& report) {
    json j;
    j["scenario"] = report.scenario_name;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["rows"] = json::array();
    for (const auto& row : report.rows) {
        j["rows"].push_back({{"plan_source", std::string(to_string(row.source))},
                             {"makespan_us", row.est.makespan_us},
                             {"speedup", row.speedup},
                             {"tflops_per_gpu", row.est.tflops_per_gpu},
                             {"mfu", row.est.mfu},
                             {"hidden_comm_frac", row.est.hidden_comm_frac},
                             {"peak_bytes", row.peak_bytes},
                             {"memory_fits", row.memory_fits},
                             {"bubble_ratio", row.bubble}});
    }
    return j.dump(2) + "\n";
}

std::string report_to_csv(const CompareReport& report) {
    std::ostringstream out;
    out << "plan_source,makespan_us,speedup,tflops_per_gpu,mfu,hidden_comm_frac,peak_bytes,"
           "memory_fits,bubble_ratio\n";
    for (const auto& row : report.rows) {
        out << to_string(row.source) << ',' << row.est.makespan_us << ',' << row.speedup << ','
            << row.est.tflops_per_gpu << ',' << row.est.mfu << ',' << row.est.hidden_comm_frac
            << ',' << row.peak_bytes << ',' << (row.memory_fits ? 1 : 0) << ',' << row.bubble
            << '\n';
    }
    return out.str();
}

void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ConfigError("cannot write: " + path);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace weft
