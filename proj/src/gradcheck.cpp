#include "mttu/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mttu {

namespace {

// Relative error with a floor so near-zero gradients compare on an absolute
// scale; the central-difference noise floor is far below 1e-3.
double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

// Central difference for one coordinate. `slot` is the live value the
// objective reads; it is restored before returning.
double central_diff(const std::function<double()>& eval, double* slot,
                    double eps) {
  const double orig = *slot;
  *slot = orig + eps;
  const double fp = eval();
  *slot = orig - eps;
  const double fm = eval();
  *slot = orig;
  return (fp - fm) / (2.0 * eps);
}

// A coordinate whose perturbation straddles a ReLU kink shows a one-sided
// error that shrinks as eps does; a wrong analytic gradient does not. Retry
// at eps/10 before counting an entry against the tolerance.
void check_entry(const std::function<double()>& eval, double* slot,
                 double analytic, double eps, double tol,
                 GradCheckReport& rep) {
  double numeric = central_diff(eval, slot, eps);
  double err = rel_err(analytic, numeric);
  if (err >= tol) {
    const double refined = central_diff(eval, slot, eps / 10.0);
    if (rel_err(analytic, refined) < err) {
      numeric = refined;
      err = rel_err(analytic, numeric);
    }
  }
  rep.max_rel_err = std::max(rep.max_rel_err, err);
  rep.max_abs_err = std::max(rep.max_abs_err, std::abs(analytic - numeric));
  ++rep.checked;
}

}  // namespace

GradCheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f,
                          const Tensor& x, double eps, double tol) {
  Tensor xg = Tensor::from(x.shape(), x.values(), /*requires_grad=*/true);
  Tensor out = f(xg);
  if (out.size() != 1) throw ContractError("gradcheck: f must be scalar-valued");
  backward(out);
  std::vector<double> analytic = xg.grad();

  GradCheckReport rep;
  rep.tol = tol;
  Tensor xp = Tensor::from(x.shape(), x.values());
  auto eval = [&]() { return f(xp).item(); };
  for (int i = 0; i < x.size(); ++i)
    check_entry(eval, xp.data() + i, analytic[i], eps, tol, rep);
  rep.passed = rep.max_rel_err < tol;
  return rep;
}

GradCheckReport gradcheck_params(const std::function<Tensor()>& f,
                                 const std::vector<Parameter>& params,
                                 double eps, double tol) {
  for (const auto& p : params) p.tensor.node()->grad.clear();
  Tensor out = f();
  if (out.size() != 1)
    throw ContractError("gradcheck_params: f must be scalar-valued");
  backward(out);

  GradCheckReport rep;
  rep.tol = tol;
  auto eval = [&]() { return f().item(); };
  for (const auto& p : params) {
    std::vector<double> analytic =
        p.tensor.has_grad() ? p.tensor.grad()
                            : std::vector<double>(p.tensor.size(), 0.0);
    Tensor t = p.tensor;
    for (int i = 0; i < t.size(); ++i)
      check_entry(eval, t.data() + i, analytic[i], eps, tol, rep);
  }
  rep.passed = rep.max_rel_err < tol;
  return rep;
}

}  // namespace mttu
