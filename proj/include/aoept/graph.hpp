#pragma once

#include <functional>
#include <vector>

#include "aoept/tensor.hpp"

namespace aoept {

// Reverse-mode tape. Every differentiable operation is a method so that a
// forward pass is always explicit about which tape (if any) records it; a
// Graph constructed with recording=false computes values only and records
// nothing. A Graph is confined to one thread. backward() clears the tape.
class Graph {
 public:
  explicit Graph(bool recording = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  // --- binary / elementwise ---
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);  // same shape, or one operand scalar
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);  // elementwise; same shape or one scalar
  Tensor scale(const Tensor& a, double c);
  Tensor add_rowwise(const Tensor& a, const Tensor& v);  // a: [m x n], v: [n]
  Tensor mul_rowwise(const Tensor& a, const Tensor& v);

  // --- unary ---
  Tensor sigmoid(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor gelu(const Tensor& x);

  // --- reductions ---
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor mean_rows(const Tensor& x);  // [m x n] -> [n], mean over rows

  // --- shape / structure ---
  Tensor softmax(const Tensor& x, int axis);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor stack_rows(const std::vector<Tensor>& rows);  // k tensors [n] -> [k x n]
  Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
  Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
  Tensor transpose(const Tensor& x);
  Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);

  // --- fused, with hand derivatives ---
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
  Tensor adaptive_pool_rows(const Tensor& x, std::size_t m);
  Tensor normalize_rows(const Tensor& x);
  Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

  // Populates d(loss)/d(leaf) for every requires_grad leaf on the tape,
  // accumulating into the leaves' grad buffers, then clears the tape.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::size_t out_size = 0;
    bool needs_grad = false;
    std::shared_ptr<std::vector<double>> leaf_grad;  // leaves only
    std::function<void(const double*, Graph&)> backprop;
    std::vector<double> adjoint;
  };

  bool recording_;
  std::uint64_t tape_id_;
  std::vector<Node> nodes_;

  int ensure_input(const Tensor& t);
  bool input_needs_grad(const Tensor& t) const;
  void record(Tensor& out, bool needs_grad, std::function<void(const double*, Graph&)> backprop);
  double* adj(int id);
  void clear();

  friend struct GraphTestAccess;
};

}  // namespace aoept
