#pragma once

#include <iosfwd>

namespace flatlora {

// Runs the full invariant suite: gradient checks, the adapter identities,
// perturbation replay, the variance and equivalence propositions, cost
// counters, the flatness comparison, smoothing, and the landscape probes.
// Prints one pass/fail line per criterion and returns the failure count.
int run_validation_suite(std::ostream& out);

}  // namespace flatlora
