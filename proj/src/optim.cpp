#include "aoept/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace aoept {

void ParamSet::add(std::string name, Tensor* t) {
  if (t == nullptr) throw std::invalid_argument("ParamSet::add: null tensor");
  for (const auto& [n, _] : entries_) {
    if (n == name) throw std::invalid_argument("ParamSet::add: duplicate name " + name);
  }
  entries_.emplace_back(std::move(name), t);
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& [n, t] : other.entries_) add(n, t);
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t->numel();
  return n;
}

Tensor* ParamSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  return nullptr;
}

void ParamSet::zero_grad() const {
  for (const auto& [_, t] : entries_) t->zero_grad();
}

AdamW::AdamW(ParamSet params, Options opts) : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, t] : params_.entries()) {
    if (!t->requires_grad()) {
      throw std::invalid_argument("AdamW: parameter " + name + " does not require gradients");
    }
    m_.emplace_back(t->numel(), 0.0);
    v_.emplace_back(t->numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& [name, t] = params_.entries()[k];
    if (!t->has_grad()) throw std::logic_error("AdamW: parameter " + name + " has no gradient buffer");
    const std::vector<double>& g = t->grad();
    std::vector<double>& p = t->data();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= opts_.lr * opts_.wd * p[i];
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

}  // namespace aoept
