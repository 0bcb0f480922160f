#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pathogan/rng.hpp"
#include "pathogan/tape.hpp"
#include "pathogan/tensor.hpp"

// Central-difference gradient verification helpers. Loss builders must be
// pure functions of the checked tensors: any randomness has to come from a
// freshly seeded Rng inside the builder so repeated evaluations agree.

namespace gradcheck {

using pathogan::Parameter;
using pathogan::Tape;
using pathogan::Tensor;

struct Result {
  double max_rel_err = 0;
  int64_t checked = 0;
  std::string worst;
};

// Evaluates the loss once with backward() to collect analytic gradients,
// then perturbs every element (or a strided subset) of every listed tensor.
inline Result check(const std::function<double(bool)>& eval_with_backward,
                    const std::function<double()>& eval,
                    const std::vector<Parameter<double>*>& params,
                    double h = 1e-5, int64_t max_per_tensor = 0) {
  for (Parameter<double>* p : params) p->zero_grad();
  eval_with_backward(true);

  Result res;
  for (Parameter<double>* p : params) {
    const int64_t n = p->value.numel();
    const int64_t step =
        (max_per_tensor > 0 && n > max_per_tensor) ? n / max_per_tensor : 1;
    for (int64_t i = 0; i < n; i += step) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double lp = eval();
      p->value[i] = orig - h;
      const double lm = eval();
      p->value[i] = orig;
      const double numeric = (lp - lm) / (2 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      const double rel = std::abs(numeric - analytic) / denom;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = p->name + "[" + std::to_string(i) + "] analytic=" +
                    std::to_string(analytic) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

inline Tensor<double> random_tensor(std::vector<int> shape, pathogan::Rng& rng,
                                    double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace gradcheck
