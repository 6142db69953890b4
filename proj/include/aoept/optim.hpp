#pragma once

#include <string>
#include <vector>

#include "aoept/tensor.hpp"

namespace aoept {

// Named parameter registry. Iteration order is insertion order, which keeps
// optimizer updates and checkpoints deterministic.
class ParamSet {
 public:
  void add(std::string name, Tensor* t);
  void merge(const ParamSet& other);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  const std::vector<std::pair<std::string, Tensor*>>& entries() const { return entries_; }

  Tensor* find(const std::string& name) const;
  void zero_grad() const;

 private:
  std::vector<std::pair<std::string, Tensor*>> entries_;
};

// AdamW with decoupled weight decay: the decay p <- p - lr*wd*p is applied
// before the adaptive update.
class AdamW {
 public:
  struct Options {
    double lr = 1e-2;
    double wd = 2e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(ParamSet params, Options opts);

  void step();
  std::uint64_t step_count() const { return step_; }
  const ParamSet& params() const { return params_; }

 private:
  ParamSet params_;
  Options opts_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace aoept
