#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace mohets {

GradCheckReport grad_check(
    const std::function<TensorT<double>()>& loss_fn,
    const std::vector<std::pair<std::string, TensorT<double>>>& inputs,
    int64_t max_probes_per_tensor, double h, uint64_t probe_seed) {
  GradCheckReport report;
  report.h = h;

  // Analytic pass.  Inputs must already carry gradient buffers (constructed
  // with requires_grad) — copies share storage, so zeroing here resets the
  // caller's tensors too.
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& [name, t] : inputs) {
      require(t.requires_grad(), ErrorCode::internal,
              "grad_check: input '" + name + "' must be constructed with requires_grad");
      TensorT<double> shared = t;
      shared.zero_grad();
    }
    TapeT<double> tape;
    TapeScopeT<double> scope(tape);
    TensorT<double> loss = loss_fn();
    require(loss.size() == 1, ErrorCode::internal, "grad_check: loss must be scalar");
    backward(loss, tape);
    for (auto& [name, t] : inputs) {
      const double* g = t.grad();
      require(g != nullptr, ErrorCode::internal,
              "grad_check: input '" + name + "' received no gradient buffer");
      std::vector<double> copy(g, g + t.size());
      for (int64_t i = 0; i < t.size(); ++i)
        require(std::isfinite(copy[static_cast<size_t>(i)]), ErrorCode::numeric,
                "grad_check: non-finite analytic gradient in '" + name + "' at index " +
                    std::to_string(i));
      analytic.push_back(std::move(copy));
    }
  }

  // Numeric probes (no tape active).
  Rng rng(probe_seed, "gradcheck-probes");
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    const auto& [name, t] = inputs[ti];
    TensorT<double> x = t;  // shares storage: nudging x nudges the input
    int64_t n = x.size();
    std::vector<int64_t> coords;
    if (n <= max_probes_per_tensor) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < max_probes_per_tensor; ++i) coords.push_back(rng.uniform_int(n));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (int64_t c : coords) {
      double saved = x.data()[c];
      x.data()[c] = saved + h;
      double up = loss_fn().item();
      x.data()[c] = saved - h;
      double down = loss_fn().item();
      x.data()[c] = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[ti][static_cast<size_t>(c)];
      double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++report.probes;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = name + "[" + std::to_string(c) + "]";
      }
    }
  }
  return report;
}

}  // namespace mohets
