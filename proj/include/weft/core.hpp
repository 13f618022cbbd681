#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace weft {

// Operator bases of a transformer training layer.
enum class OperatorClass {
    GEMM,
    FlashAttention,
    FlashAttentionBwd,
    GroupGEMM,
    FusedBDA,
    LayerNorm,
    Router,
    Permute,
    WeightGrad,
    AllGather,
    ReduceScatter,
    AllToAll,
    SendRecv,
};

// Execution lane an operator is dispatched to. One lane runs one op at a
// time; co-execution happens only across lanes.
enum class Lane {
    compute,
    local_comm,
    cross_comm,
};

enum class Pass {
    forward,
    backward,
};

// Default lane by class; instances may override via configuration.
Lane default_lane(OperatorClass cls);

bool is_comm_class(OperatorClass cls);

std::string_view to_string(OperatorClass cls);
std::string_view to_string(Lane lane);
std::string_view to_string(Pass pass);

OperatorClass parse_operator_class(std::string_view name);
Lane parse_lane(std::string_view name);
Pass parse_pass(std::string_view name);

// Base error; subclasses map to CLI exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, schema violation, unknown preset (exit 2).
struct ConfigError : Error {
    using Error::Error;
};

// Capacity or divisibility makes the request unsatisfiable (exit 3).
struct InfeasibleError : Error {
    using Error::Error;
};

// Lookup hit a (class, shape) or OEF pair absent from the tables (exit 4).
struct MissingProfileEntry : Error {
    using Error::Error;
};

// FNV-1a over bytes; used for config hashes embedded in reports.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace weft
