#pragma once

// Self-check suite behind `rewindlab verify`: architecture parameter
// counts, finite-difference gradient checks, schedule values, pruning
// against a full sort, accounting identities, and the strategy-equivalence
// identity on a tiny run. Prints one PASS/FAIL line per check.

#include <ostream>

namespace rewindlab {

// Returns the number of failed checks (0 = all pass).
int run_verify(std::ostream& os);

}  // namespace rewindlab
