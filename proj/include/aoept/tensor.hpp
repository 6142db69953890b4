#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "aoept/rng.hpp"

namespace aoept {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of 64-bit floats. Copies are deep for the data
// (value semantics); the gradient buffer is shared between copies so that
// Graph::backward can accumulate into the parameter a model actually holds.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool defined() const { return !shape_.empty(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double item() const;  // value of a one-element tensor
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);

  bool has_grad() const { return grad_ != nullptr; }
  const std::vector<double>& grad() const;
  void zero_grad();
  std::shared_ptr<std::vector<double>> grad_buffer();  // allocates when requires_grad

  // Tape linkage, written by Graph ops on the tensors they return.
  std::uint64_t tape_id_ = 0;
  int tape_node_ = -1;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::shared_ptr<std::vector<double>> grad_;
};

}  // namespace aoept
