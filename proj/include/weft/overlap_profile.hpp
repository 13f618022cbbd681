#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "weft/core.hpp"
#include "weft/op_model.hpp"

namespace weft {

// Per-operator solo execution times, keyed by (class, shape key).
struct SoloTimeTable {
    std::map<std::pair<OperatorClass, std::string>, double> entries;

    void set(OperatorClass cls, const std::string& shape, double t_us);
    std::optional<double> get(OperatorClass cls, const std::string& shape) const;
    void validate() const;  // all entries strictly positive
};

std::optional<double> solo_lookup(const SoloTimeTable& table, OperatorClass cls,
                                  const std::string& shape);

// Pairwise overlap effectiveness plus the two interference parameters. Keys
// are unordered; both (a,b) and (b,a) hit the same entry.
struct OverlapTable {
    std::map<std::pair<OperatorClass, OperatorClass>, double> entries;
    double slowdown_factor = 0.25;       // stretch applied while kernels co-run
    double launch_overhead_frac = 0.15;  // hiding lost per co-run involving a comm op
    std::map<std::string, std::string> metadata;

    void set(OperatorClass a, OperatorClass b, double value);
    std::optional<double> get(OperatorClass a, OperatorClass b) const;
    double get_or_throw(OperatorClass a, OperatorClass b) const;
    void validate() const;  // every value within [-0.05, 1.05]
};

struct Profile {
    SoloTimeTable solo;
    OverlapTable overlap;
};

// Overlap Effectiveness Factor: (t_i + t_j - p_ij) / min(t_i, t_j) — the
// fraction of the shorter operator hidden by co-execution.
double oef(double t_i_us, double t_j_us, double p_ij_us);

// Inverse: co-run duration t_i + t_j - oef_val * min(t_i, t_j).
double overlapped_time(double t_i_us, double t_j_us, double oef_val);

struct SegmentCost {
    double p_us = 0.0;
    std::array<double, 3> lane_busy_us{};  // indexed by Lane

    double lane_busy(Lane lane) const { return lane_busy_us[static_cast<int>(lane)]; }
};

// Co-execution cost of two dependency-ordered operator segments under the
// three-lane model:
//   - each strand runs its ops strictly in order;
//   - a lane holds one op at a time, so same-lane ops serialize;
//   - two ops co-running on different lanes both progress at rate
//     1 / ((2 - e) * (1 + slowdown_factor)), where e is the pair's OEF
//     clamped to [0,1] and reduced by launch_overhead_frac when a
//     communication op is involved (hiding lost to launch spacing).
// An op alone runs at unit rate, so P(a, empty) is exactly the solo sum.
// Solo times resolve through `solo` by (class, node name) first, then the
// node's own duration. A co-running pair with no OEF entry raises
// MissingProfileEntry naming the pair.
SegmentCost segment_pair_cost(std::span<const OpNode> seg_a, std::span<const OpNode> seg_b,
                              const OverlapTable& tbl, const SoloTimeTable& solo);

// Profile file IO (JSON; schema-validated, atomic write).
Profile load_profile(const std::string& path);
Profile parse_profile(const std::string& json_text);
void save_profile(const Profile& profile, const std::string& path);
std::string profile_to_json(const Profile& profile);

enum class ProfileArchetype {
    pcie_a40,
    nvlink_a800,
    nvlink_h100,
};

ProfileArchetype parse_archetype(std::string_view name);
std::string_view to_string(ProfileArchetype archetype);

// Synthetic tables following the measured qualitative ordering:
// comp x comm overlap best, local x cross comm next, comp x comp and
// same-type comm x comm poorly, FlashAttentionBwd x GEMM worst. Magnitudes
// are synthetic stand-ins, not measurements.
Profile synth_profile(ProfileArchetype archetype);

}  // namespace weft
