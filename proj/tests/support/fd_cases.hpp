#pragma once

// Finite-difference cases covering every differentiable primitive and the
// end-to-end node loss; shared by the unit and acceptance suites.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"

namespace cgt::testing {

struct FdCase {
    using Make = std::function<std::pair<std::vector<Tensor>, std::function<Tensor()>>(Rng&)>;
    std::string name;
    Make make;
};

inline constexpr std::size_t kFdInstances = 10;
/// Entries checked per input tensor (all of them for small inputs).
inline constexpr std::size_t kFdMaxEntries = 40;

std::vector<FdCase> fd_cases();

/// Instance `instance` of a case: fresh random inputs, then check_gradients.
GradCheck run_fd_case(const FdCase& c, std::uint64_t instance);

} // namespace cgt::testing
