#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "aoept/graph.hpp"
#include "aoept/tensor.hpp"

namespace aoept::testsupport {

// Central finite-difference oracle, independent of the tape: the forward
// callback is re-evaluated on perturbed copies of the inputs through a
// non-recording Graph. Errors are relative, with a floor under which the
// oracle itself cannot be trusted to the tested precision.
struct FdOptions {
  double h = 1e-5;
  double rel_floor = 1e-4;
};

using ScalarFn = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

inline double fd_max_rel_err(std::vector<Tensor> inputs, const ScalarFn& forward, FdOptions opt = {}) {
  for (Tensor& t : inputs) t.set_requires_grad(true);
  Graph g(true);
  Tensor loss = forward(g, inputs);
  g.backward(loss);

  const auto eval = [&](const std::vector<Tensor>& xs) {
    Graph ng(false);
    return forward(ng, xs).item();
  };

  double max_err = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double>& ad = inputs[k].grad();
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      std::vector<Tensor> plain;
      for (const Tensor& t : inputs) {
        Tensor c(t.shape(), t.data());
        plain.push_back(std::move(c));
      }
      const double x0 = plain[k][i];
      plain[k][i] = x0 + opt.h;
      const double fp = eval(plain);
      plain[k][i] = x0 - opt.h;
      const double fm = eval(plain);
      const double fd = (fp - fm) / (2.0 * opt.h);
      const double err = std::abs(ad[i] - fd) / std::max(opt.rel_floor, std::abs(fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace aoept::testsupport
