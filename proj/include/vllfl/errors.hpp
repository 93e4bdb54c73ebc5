#pragma once

#include <stdexcept>
#include <string>

namespace vllfl {

// Error taxonomy. Each category corresponds to a distinct contract
// violation so tests can assert the failure kind, not just "it threw".
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up (matmul, backprop with a stale trace, ...).
struct shape_error : error {
    using error::error;
};

// Invalid configuration value (zero dims, empty class list, unknown config key).
struct config_error : error {
    using error::error;
};

// Malformed serialized payload (bad magic, truncated tensor data, bad scene line).
struct format_error : error {
    using error::error;
};

// Value outside the mathematical domain of the operation (degenerate box,
// label out of range, zero parameter count).
struct domain_error : error {
    using error::error;
};

// A function handed to a numeric routine produced a non-finite value.
struct eval_error : error {
    using error::error;
};

// Federation-level contract violation (mismatched update shapes).
struct protocol_error : error {
    using error::error;
};

}  // namespace vllfl
