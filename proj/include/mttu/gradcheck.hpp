#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mttu/tensor.hpp"

namespace mttu {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;
  bool passed = false;
  double tol = 0.0;
};

// Central finite differences against the analytic gradient of a scalar-valued
// function of x. f must be deterministic; it is re-evaluated 2·numel(x) times.
GradCheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f,
                          const Tensor& x, double eps = 1e-5,
                          double tol = 1e-6);

// Same, but checks the gradient w.r.t. a set of parameters of a closure with
// no free tensor argument (the closure reads the parameters directly).
GradCheckReport gradcheck_params(const std::function<Tensor()>& f,
                                 const std::vector<Parameter>& params,
                                 double eps = 1e-5, double tol = 1e-6);

}  // namespace mttu
