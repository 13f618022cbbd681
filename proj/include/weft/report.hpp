#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weft/estimate.hpp"
#include "weft/memory_sim.hpp"

namespace weft {

struct Scenario {
    std::string name = "scenario";
    ModelSpec model;
    ClusterSpec cluster;
    ParallelismSpec par;
    int microbatches = 8;
    ProfileArchetype archetype = ProfileArchetype::pcie_a40;
    std::optional<std::string> profile_path;  // overrides the archetype
    SearchCaps caps;
    double barrier_cost_us = 0.0;
    bool parallel_search = false;
    std::uint64_t seed = 0;
    // memory overrides; defaults come from the model/parallelism formulas
    std::optional<std::int64_t> act_bytes_per_layer;
    std::optional<std::int64_t> state_bytes_per_layer;
    std::optional<std::int64_t> capacity_bytes;
    std::optional<std::int64_t> slack_bytes;

    Profile resolve_profile() const;
    MemoryConfig memory_config() const;
    // Canonical JSON rendering; hashing it identifies the configuration.
    std::string canonical_json() const;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);

struct CompareRow {
    PlanSource source = PlanSource::megatron_baseline;
    EstimateResult est;
    double speedup = 1.0;  // vs megatron_baseline
    std::int64_t peak_bytes = 0;
    bool memory_fits = true;
    double bubble = 0.0;
};

struct CompareReport {
    std::string scenario_name;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<CompareRow> rows;
};

// One row per plan source; memory and bubble come from the generated
// schedule of that source's discipline. Deterministic for a fixed scenario.
CompareReport compare_report(const Scenario& scenario);

std::string report_to_json(const CompareReport& report);
std::string report_to_csv(const CompareReport& report);

// Whole-file atomic write (temp + rename).
void write_atomic(const std::string& path, const std::string& content);

}  // namespace weft
