#ifndef SPARSEFUSE_NN_FINITE_DIFF_HPP
#define SPARSEFUSE_NN_FINITE_DIFF_HPP

#include <functional>
#include <string>
#include <vector>

#include "sparsefuse/nn/tensor.hpp"

namespace sparsefuse::nn {

// Central-difference gradient of a scalar function, per element.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x,
    double h = 1e-5) {
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    double fp = f(probe);
    probe[i] = x[i] - h;
    double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct GradCheck {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst;
};

// Compares the backward pass of `fwd` (a scalar-valued graph over the given
// leaf tensors) against central differences. For large inputs a random subset
// of coordinates per tensor keeps the cost bounded; `max_coords <= 0` checks
// every coordinate.
//
// A coordinate whose mismatch exceeds `refine_above` is re-checked with a
// 64x smaller step: a wrong analytic gradient fails at any step size, while a
// difference quotient that happened to straddle a relu/bilinear kink becomes
// valid once the step no longer crosses it.
inline GradCheck gradcheck(const std::function<TensorPtr()>& fwd,
                           const std::vector<std::pair<std::string, TensorPtr>>& inputs,
                           Rng& rng, int max_coords = 0, double h = 1e-5,
                           double refine_above = 1e-4) {
  for (auto& [name, t] : inputs) {
    t->requires_grad = true;
    t->ensure_grad();
    t->zero_grad();
  }
  auto root = fwd();
  if (root->size() != 1) throw ConfigError("gradcheck: forward must produce a scalar");
  backward(root);

  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : inputs) analytic.push_back(t->grad);

  GradCheck res;
  auto eval = [&]() {
    NoGradGuard ng;
    return fwd()->values[0];
  };
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti].second;
    size_t n = t->values.size();
    std::vector<size_t> coords;
    if (max_coords <= 0 || n <= static_cast<size_t>(max_coords)) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int k = 0; k < max_coords; ++k)
        coords.push_back(static_cast<size_t>(rng.next_u64() % n));
    }
    for (size_t i : coords) {
      double orig = t->values[i];
      auto central = [&](double step) {
        t->values[i] = orig + step;
        double fp = eval();
        t->values[i] = orig - step;
        double fm = eval();
        t->values[i] = orig;
        return (fp - fm) / (2.0 * step);
      };
      double num = central(h);
      double ana = analytic[ti][i];
      auto rel_of = [&](double n) {
        return std::abs(ana - n) / std::max({1.0, std::abs(ana), std::abs(n)});
      };
      double rel = rel_of(num);
      if (refine_above >= 0 && rel > refine_above) rel = std::min(rel, rel_of(central(h / 64.0)));
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = inputs[ti].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_FINITE_DIFF_HPP
