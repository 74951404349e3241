#pragma once

#include <string>
#include <vector>

#include "mttu/gradcheck.hpp"

namespace mttu {

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks over every differentiable primitive and every
// loss term, `reps` random instances each. `inject_bug` adds a negative
// control with a deliberately wrong analytic gradient, which must fail.
std::vector<NamedGradCheck> run_gradcheck_suite(int reps, double tol,
                                                uint64_t seed,
                                                bool inject_bug = false);

bool all_passed(const std::vector<NamedGradCheck>& results);

}  // namespace mttu
