#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lpose/tape.hpp"
#include "lpose/tensor.hpp"

namespace lpose::ad {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double g_ad = 0;
  double g_fd = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  bool pass = false;
  bool nonfinite = false;
  std::string diagnostic;
  double max_rel_err = 0;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> worst;  // top offenders, descending rel_err
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences, parameter scalar by parameter scalar.
/// `build` receives a tape plus one leaf per parameter (same order) and
/// returns the scalar loss node. Relative error per scalar is
/// |g_ad - g_fd| / max(1, |g_fd|).
template <typename T>
GradCheckReport gradcheck(std::vector<std::pair<std::string, Tensor<T>>> params,
                          const std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>& build,
                          T h, T tol, std::size_t max_worst = 10) {
  GradCheckReport report;

  auto eval_loss = [&](const std::vector<std::pair<std::string, Tensor<T>>>& theta, bool* finite) -> T {
    Tape<T> tape;
    tape.set_grad_enabled(false);
    std::vector<Var<T>> leaves;
    leaves.reserve(theta.size());
    for (const auto& [name, tensor] : theta) leaves.push_back(tape.leaf(tensor, false, name));
    Var<T> loss = build(tape, leaves);
    if (finite) {
      *finite = true;
      if (auto bad = tape.find_nonfinite()) {
        *finite = false;
        report.nonfinite = true;
        report.diagnostic = std::string("non-finite value in op '") + bad->op + "'" +
                            (bad->name.empty() ? "" : " (" + bad->name + ")");
      }
    }
    return loss.scalar();
  };

  // reverse-mode gradients
  std::vector<Tensor<T>> ad_grads;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    leaves.reserve(params.size());
    for (const auto& [name, tensor] : params) leaves.push_back(tape.leaf(tensor, true, name));
    Var<T> loss = build(tape, leaves);
    if (auto bad = tape.find_nonfinite()) {
      report.nonfinite = true;
      report.diagnostic = std::string("non-finite value in op '") + bad->op + "'" +
                          (bad->name.empty() ? "" : " (" + bad->name + ")");
      return report;
    }
    tape.backward(loss);
    for (const Var<T>& leaf : leaves) ad_grads.push_back(tape.grad(leaf.id));
  }

  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& theta = params[p].second;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      T saved = theta.data[i];
      bool ok1 = true, ok2 = true;
      theta.data[i] = saved + h;
      T lp = eval_loss(params, &ok1);
      theta.data[i] = saved - h;
      T lm = eval_loss(params, &ok2);
      theta.data[i] = saved;
      if (!ok1 || !ok2) return report;
      double g_fd = (static_cast<double>(lp) - static_cast<double>(lm)) / (2.0 * static_cast<double>(h));
      double g_ad = static_cast<double>(ad_grads[p].data[i]);
      double rel = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_fd));
      ++report.checked;
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      if (rel > static_cast<double>(tol) || report.worst.size() < max_worst) {
        report.worst.push_back({params[p].first, i, g_ad, g_fd, rel});
        std::sort(report.worst.begin(), report.worst.end(),
                  [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.rel_err > b.rel_err; });
        if (report.worst.size() > max_worst) report.worst.resize(max_worst);
      }
    }
  }
  report.pass = !report.nonfinite && report.max_rel_err <= static_cast<double>(tol);
  return report;
}

}  // namespace lpose::ad
