#include "aoept/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace aoept {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
  if (shape_.empty()) throw std::invalid_argument("Tensor: rank must be >= 1");
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: extents must be positive");
  }
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not match buffer of " +
                                std::to_string(data_.size()));
  }
  if (requires_grad_) grad_ = std::make_shared<std::vector<double>>(data_.size(), 0.0);
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), fill), requires_grad) {}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> d(shape_numel(shape));
  for (double& x : d) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("from_rows: empty");
  const std::size_t n = rows[0].size();
  std::vector<double> d;
  d.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw std::invalid_argument("from_rows: ragged rows");
    d.insert(d.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), n}, std::move(d));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows(): tensor is not 2-D, shape " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols(): tensor is not 2-D, shape " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
  return data_[0];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  if (rank() != 2 || r >= shape_[0] || c >= shape_[1]) throw std::out_of_range("Tensor::at");
  return data_[r * shape_[1] + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2 || r >= shape_[0] || c >= shape_[1]) throw std::out_of_range("Tensor::at");
  return data_[r * shape_[1] + c];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on && !grad_) grad_ = std::make_shared<std::vector<double>>(data_.size(), 0.0);
  if (!on) grad_.reset();
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw std::logic_error("Tensor::grad: no gradient buffer (requires_grad is off)");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

std::shared_ptr<std::vector<double>> Tensor::grad_buffer() {
  if (!requires_grad_) return nullptr;
  if (!grad_) grad_ = std::make_shared<std::vector<double>>(data_.size(), 0.0);
  return grad_;
}

}  // namespace aoept
