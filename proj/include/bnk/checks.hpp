#pragma once

#include <string>
#include <vector>

namespace bnk {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Cross-backend and numerical invariants on small random problems:
/// dense/Markov/sparse agreement, log Z against the direct density,
/// prediction at training inputs, energy parity, quadrature exactness and
/// Taylor = generalised Gauss-Newton.
std::vector<CheckResult> run_invariant_checks(unsigned seed = 0);

}  // namespace bnk
