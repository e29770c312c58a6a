#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ressenet/tape.hpp"
#include "ressenet/tensor.hpp"

// Finite-difference verification of tape gradients. The forward function is
// evaluated once with a tape to obtain analytic gradients, then twice per
// probed coordinate (tape == nullptr, pure forward) for a central difference.

namespace ressenet {

struct GradProbe {
  TensorPtr<double> tensor;
  std::vector<std::size_t> coords;
};

inline std::vector<std::size_t> all_coords(const Tensor<double>& t) {
  std::vector<std::size_t> c(t.data.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
  return c;
}

// Returns the worst relative error |a - n| / max(|a|, |n|, 1e-8) over all
// probed coordinates. f: (Tape<double>*) -> scalar TensorPtr.
//
// A coordinate whose +eps and -eps one-sided slopes disagree by more than 1%
// sits on a non-differentiable point (an activation kink inside the step) and
// is skipped. The skip decision uses measured slopes only, never the analytic
// gradient, so a wrong backward pass cannot hide behind it.
template <typename F>
double grad_check_probes(F&& f, std::span<const GradProbe> probes, double eps) {
  for (const auto& p : probes) {
    p.tensor->requires_grad = true;
    p.tensor->ensure_grad();
    p.tensor->zero_grad();
  }
  {
    Tape<double> tape;
    auto loss = f(&tape);
    tape.backward(loss);
  }
  const double l0 = f(nullptr)->data[0];
  double worst = 0.0;
  for (const auto& p : probes) {
    for (std::size_t idx : p.coords) {
      const double analytic = p.tensor->grad.empty() ? 0.0 : p.tensor->grad[idx];
      const double saved = p.tensor->data[idx];
      p.tensor->data[idx] = saved + eps;
      const double lp = f(nullptr)->data[0];
      p.tensor->data[idx] = saved - eps;
      const double lm = f(nullptr)->data[0];
      p.tensor->data[idx] = saved;
      const double sp = (lp - l0) / eps;
      const double sm = (l0 - lm) / eps;
      if (std::fabs(sp - sm) > 1e-2 * std::max({std::fabs(sp), std::fabs(sm), 1.0}))
        continue;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
  }
  return worst;
}

// Single-tensor convenience wrapper. f: (Tape<double>*, TensorPtr<double>)
// -> scalar TensorPtr. A nonzero entry in `exclude` skips that coordinate
// (used to mask points near activation kinks).
template <typename F>
double grad_check(F&& f, const TensorPtr<double>& x, double eps,
                  const std::vector<char>* exclude = nullptr) {
  std::vector<std::size_t> coords;
  coords.reserve(x->data.size());
  for (std::size_t i = 0; i < x->data.size(); ++i)
    if (!exclude || !(*exclude)[i]) coords.push_back(i);
  GradProbe probe{x, std::move(coords)};
  return grad_check_probes([&](Tape<double>* t) { return f(t, x); },
                           std::span<const GradProbe>(&probe, 1), eps);
}

}  // namespace ressenet
