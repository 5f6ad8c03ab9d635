#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "osdg/numerics/tape.hpp"

namespace osdg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_param;          // empty when checking a plain input
  std::optional<std::size_t> non_finite_index;
  std::size_t checked = 0;

  bool ok(double tol) const { return !non_finite_index && max_rel_error < tol; }
};

namespace detail {

inline double rel_err(double ad, double fd) { return std::abs(ad - fd) / std::max(1.0, std::abs(fd)); }

}  // namespace detail

/// Compares the reverse-mode gradient of a scalar function at x with
/// central differences of step h.
template <typename T>
GradCheckResult gradient_check(const std::function<Var<T>(Tape<T>&, const Var<T>&)>& f,
                               const Tensor<T>& x, double h = 1e-3) {
  if (h < 1e-4 || h > 1e-2) throw std::invalid_argument("gradient_check: h must lie in [1e-4, 1e-2]");
  GradCheckResult res;
  Tensor<T> grad;
  {
    Tape<T> tape;
    Var<T> xv = tape.variable(x);
    Var<T> y = f(tape, xv);
    tape.backward(y);
    grad = tape.grad(xv);
  }
  auto eval = [&](const Tensor<T>& at) {
    Tape<T> tape(false);
    return static_cast<double>(f(tape, tape.constant(at)).value()[0]);
  };
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) {
      res.non_finite_index = i;
      return res;
    }
    probe[i] = static_cast<T>(x[i] + h);
    const double up = eval(probe);
    probe[i] = static_cast<T>(x[i] - h);
    const double dn = eval(probe);
    probe[i] = x[i];
    const double e = detail::rel_err(g, (up - dn) / (2.0 * h));
    ++res.checked;
    if (e > res.max_rel_error) {
      res.max_rel_error = e;
      res.worst_index = i;
    }
  }
  return res;
}

/// Same comparison for parameter gradients of a scalar loss. At most
/// `per_param` randomly chosen entries of each parameter are probed.
template <typename T>
GradCheckResult gradient_check_params(const std::function<Var<T>(Tape<T>&)>& loss,
                                      const std::vector<Param<T>*>& params, double h = 1e-3,
                                      std::size_t per_param = 16, std::uint64_t seed = 0) {
  GradCheckResult res;
  for (Param<T>* p : params) p->zero_grad();
  {
    Tape<T> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape<T> tape(false);
    return static_cast<double>(loss(tape).value()[0]);
  };
  std::mt19937_64 rng(seed);
  for (Param<T>* p : params) {
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_param, idx.size()));
    for (std::size_t i : idx) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        res.non_finite_index = i;
        res.worst_param = p->name;
        return res;
      }
      const T orig = p->value[i];
      p->value[i] = static_cast<T>(orig + h);
      const double up = eval();
      p->value[i] = static_cast<T>(orig - h);
      const double dn = eval();
      p->value[i] = orig;
      const double e = detail::rel_err(g, (up - dn) / (2.0 * h));
      ++res.checked;
      if (e > res.max_rel_error) {
        res.max_rel_error = e;
        res.worst_index = i;
        res.worst_param = p->name;
      }
    }
  }
  return res;
}

}  // namespace osdg
