#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weft/op_model.hpp"
#include "weft/overlap_profile.hpp"

namespace weft {

// A sequence partitioned into contiguous segments by cut indices.
struct Segmentation {
    std::vector<int> sequence;       // operator ids
    std::vector<std::size_t> cuts;   // strictly increasing, within (0, len)

    std::size_t segment_count() const {
        return sequence.empty() ? 0 : cuts.size() + 1;
    }
    // Half-open index range of 1-based segment `seg`.
    std::pair<std::size_t, std::size_t> segment_range(std::size_t seg) const;
    void validate() const;
};

// Capped enumeration of cut subsets, coarsest first (fewest segments), then
// lexicographic by cut positions.
std::vector<Segmentation> enumerate_segmentations(const std::vector<int>& seq,
                                                  std::size_t max_segments,
                                                  std::size_t max_candidates);

struct PairStep {
    std::optional<int> fwd_seg;  // 1-based segment index or none
    std::optional<int> bwd_seg;
};

struct PairingPlan {
    std::vector<PairStep> steps;
    double total_us = 0.0;
};

// Monotone, order-preserving, covers every segment exactly once.
bool plan_valid(const PairingPlan& plan, int n_f, int n_b);

// Pair cost: indices are 1-based; 0 means the empty side, so cost(i, 0) is
// segment i's solo time. Must be total and deterministic.
using PairCostFn = std::function<double(int fwd_seg_or_0, int bwd_seg_or_0)>;

// Minimum-makespan monotone alignment:
//   T(i,j) = min{ T(i-1,j-1)+P(i,j), T(i-1,j)+P(i,0), T(i,j-1)+P(0,j) }
// with T(0,0) = 0. Ties prefer the paired branch, then forward-solo, then
// backward-solo. Each step past the first adds barrier_cost_us.
PairingPlan dp_align(int n_f, int n_b, const PairCostFn& cost, double barrier_cost_us = 0.0);

struct BruteForceResult {
    PairingPlan plan;
    std::uint64_t alignments_enumerated = 0;
};

// Exhaustive oracle over all monotone alignments. Requires n_f + n_b <= 14.
BruteForceResult brute_force_align(int n_f, int n_b, const PairCostFn& cost,
                                   double barrier_cost_us = 0.0);

struct SearchCaps {
    std::size_t sequences = 16;    // topological orders per pass
    std::size_t segments = 6;      // max segments per strand
    std::size_t candidates = 4096; // sequence-pair x segmentation-pair evaluations
};

struct SearchOptions {
    SearchCaps caps;
    double barrier_cost_us = 0.0;
    bool parallel = false;
    int threads = 0;  // 0 = hardware concurrency
};

struct BestPlan {
    PairingPlan plan;
    std::vector<int> fwd_seq;
    std::vector<int> bwd_seq;
    Segmentation fwd_segmentation;
    Segmentation bwd_segmentation;
    double total_us = 0.0;
    double hidden_comm_frac = 0.0;
    std::uint64_t candidates_evaluated = 0;
};

// Joint search over candidate sequences x segmentations with the exact
// alignment DP inside. Deterministic under fixed caps; parallel evaluation
// reduces with an index tie-break, so serial and parallel runs agree.
BestPlan search_si_plan(const LayerDag& fwd_dag, const LayerDag& bwd_dag,
                        const OverlapTable& tbl, const SoloTimeTable& solo,
                        const SearchOptions& opts = {});

std::string plan_to_json(const BestPlan& best,
                         const std::map<std::string, std::string>& metadata = {});

}  // namespace weft
