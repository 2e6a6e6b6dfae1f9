#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace mohets {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t probes = 0;
  double h = 0.0;
  std::string worst;  // "tensor[flat_index]" of the worst probe
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of d(loss)/d(inputs) for a scalar-valued function.
//
// `loss_fn` must be a deterministic function of the listed input tensors: it
// is invoked once under a fresh tape to obtain analytic gradients, then twice
// per probe (input nudged by ±h) with no tape for the numeric quotient.
// When an input has more coordinates than `max_probes_per_tensor`, a random
// subset is probed.  Relative error per coordinate is
// |analytic − numeric| / max(1, |numeric|).
GradCheckReport grad_check(
    const std::function<TensorT<double>()>& loss_fn,
    const std::vector<std::pair<std::string, TensorT<double>>>& inputs,
    int64_t max_probes_per_tensor = 16, double h = 1e-5, uint64_t probe_seed = 0);

}  // namespace mohets
