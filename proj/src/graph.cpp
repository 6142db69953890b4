#include "aoept/graph.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace aoept {

namespace {

std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in result (overflow or invalid input)");
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// out[m x n] += a[m x k] * b[k x n]
void matmul_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[k x m]^T * b[k x n]
void matmul_at_acc(const double* a, const double* b, double* out, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
void matmul_bt_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      orow[j] += acc;
    }
  }
}

}  // namespace

Graph::Graph(bool recording) : recording_(recording), tape_id_(next_tape_id()) {}

bool Graph::input_needs_grad(const Tensor& t) const {
  if (t.tape_id_ == tape_id_ && t.tape_node_ >= 0) return nodes_[static_cast<std::size_t>(t.tape_node_)].needs_grad;
  return t.requires_grad();
}

int Graph::ensure_input(const Tensor& t) {
  if (t.tape_id_ == tape_id_ && t.tape_node_ >= 0) return t.tape_node_;
  Node leaf;
  leaf.out_size = t.numel();
  leaf.needs_grad = t.requires_grad();
  if (leaf.needs_grad) leaf.leaf_grad = const_cast<Tensor&>(t).grad_buffer();
  nodes_.push_back(std::move(leaf));
  return static_cast<int>(nodes_.size() - 1);
}

void Graph::record(Tensor& out, bool needs_grad, std::function<void(const double*, Graph&)> backprop) {
  Node node;
  node.out_size = out.numel();
  node.needs_grad = needs_grad;
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  out.tape_id_ = tape_id_;
  out.tape_node_ = static_cast<int>(nodes_.size() - 1);
}

double* Graph::adj(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return nullptr;
  if (n.adjoint.empty()) n.adjoint.assign(n.out_size, 0.0);
  return n.adjoint.data();
}

void Graph::clear() {
  nodes_.clear();
  tape_id_ = next_tape_id();
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (loss.tape_id_ != tape_id_ || loss.tape_node_ < 0) {
    // Loss does not depend on anything recorded here; nothing to propagate.
    clear();
    return;
  }
  const int start = loss.tape_node_;
  {
    Node& n = nodes_[static_cast<std::size_t>(start)];
    n.adjoint.assign(1, 1.0);
  }
  for (int i = start; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.adjoint.empty()) continue;
    if (n.leaf_grad) {
      std::vector<double>& g = *n.leaf_grad;
      for (std::size_t j = 0; j < n.out_size; ++j) g[j] += n.adjoint[j];
    } else if (n.backprop) {
      n.backprop(n.adjoint.data(), *this);
    }
  }
  clear();
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
  require(a.cols() == b.rows(),
          "matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n}, 0.0);
  matmul_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  check_finite(out.data(), "matmul");
  const bool ng = input_needs_grad(a) || input_needs_grad(b);
  if (recording_ && ng) {
    const int ai = ensure_input(a), bi = ensure_input(b);
    std::vector<double> av = a.data(), bv = b.data();
    record(out, true, [ai, bi, av = std::move(av), bv = std::move(bv), m, k, n](const double* g, Graph& gr) {
      if (double* ga = gr.adj(ai)) matmul_bt_acc(g, bv.data(), ga, m, n, k);  // G * B^T
      if (double* gb = gr.adj(bi)) matmul_at_acc(av.data(), g, gb, m, k, n);  // A^T * G
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
  require(a.shape() == b.shape() || a_scalar || b_scalar,
          "add: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  Tensor out(out_shape, 0.0);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = a[a_scalar ? 0 : i] + b[b_scalar ? 0 : i];
  }
  check_finite(out.data(), "add");
  const bool ng = input_needs_grad(a) || input_needs_grad(b);
  if (recording_ && ng) {
    const int ai = ensure_input(a), bi = ensure_input(b);
    record(out, true, [ai, bi, a_scalar, b_scalar, n](const double* g, Graph& gr) {
      if (double* ga = gr.adj(ai)) {
        if (a_scalar) {
          for (std::size_t i = 0; i < n; ++i) ga[0] += g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (double* gb = gr.adj(bi)) {
        if (b_scalar) {
          for (std::size_t i = 0; i < n; ++i) gb[0] += g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
  require(a.shape() == b.shape() || a_scalar || b_scalar,
          "mul: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  Tensor out(out_shape, 0.0);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = a[a_scalar ? 0 : i] * b[b_scalar ? 0 : i];
  }
  check_finite(out.data(), "mul");
  const bool ng = input_needs_grad(a) || input_needs_grad(b);
  if (recording_ && ng) {
    const int ai = ensure_input(a), bi = ensure_input(b);
    std::vector<double> av = a.data(), bv = b.data();
    record(out, true,
           [ai, bi, a_scalar, b_scalar, n, av = std::move(av), bv = std::move(bv)](const double* g, Graph& gr) {
             if (double* ga = gr.adj(ai)) {
               for (std::size_t i = 0; i < n; ++i) ga[a_scalar ? 0 : i] += g[i] * bv[b_scalar ? 0 : i];
             }
             if (double* gb = gr.adj(bi)) {
               for (std::size_t i = 0; i < n; ++i) gb[b_scalar ? 0 : i] += g[i] * av[a_scalar ? 0 : i];
             }
           });
  }
  return out;
}

Tensor Graph::scale(const Tensor& a, double c) {
  Tensor out(a.shape(), 0.0);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
  check_finite(out.data(), "scale");
  if (recording_ && input_needs_grad(a)) {
    const int ai = ensure_input(a);
    const std::size_t n = a.numel();
    record(out, true, [ai, c, n](const double* g, Graph& gr) {
      if (double* ga = gr.adj(ai)) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += c * g[i];
      }
    });
  }
  return out;
}

Tensor Graph::add_rowwise(const Tensor& a, const Tensor& v) {
  require(a.rank() == 2 && v.rank() == 1 && v.shape()[0] == a.cols(),
          "add_rowwise: want [m x n] + [n], got " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(a.shape(), 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + v[c];
  }
  check_finite(out.data(), "add_rowwise");
  const bool ng = input_needs_grad(a) || input_needs_grad(v);
  if (recording_ && ng) {
    const int ai = ensure_input(a), vi = ensure_input(v);
    record(out, true, [ai, vi, m, n](const double* g, Graph& gr) {
      if (double* ga = gr.adj(ai)) {
        for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
      }
      if (double* gv = gr.adj(vi)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c];
      }
    });
  }
  return out;
}

Tensor Graph::mul_rowwise(const Tensor& a, const Tensor& v) {
  require(a.rank() == 2 && v.rank() == 1 && v.shape()[0] == a.cols(),
          "mul_rowwise: want [m x n] * [n], got " + shape_str(a.shape()) + " * " + shape_str(v.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(a.shape(), 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] * v[c];
  }
  check_finite(out.data(), "mul_rowwise");
  const bool ng = input_needs_grad(a) || input_needs_grad(v);
  if (recording_ && ng) {
    const int ai = ensure_input(a), vi = ensure_input(v);
    std::vector<double> av = a.data(), vv = v.data();
    record(out, true, [ai, vi, m, n, av = std::move(av), vv = std::move(vv)](const double* g, Graph& gr) {
      if (double* ga = gr.adj(ai)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] * vv[c];
      }
      if (double* gv = gr.adj(vi)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c] * av[r * n + c];
      }
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& x) {
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  check_finite(out.data(), "sigmoid");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    std::vector<double> y = out.data();
    record(out, true, [xi, y = std::move(y)](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      }
    });
  }
  return out;
}

Tensor Graph::exp(const Tensor& x) {
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::exp(x[i]);
  check_finite(out.data(), "exp");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    std::vector<double> y = out.data();
    record(out, true, [xi, y = std::move(y)](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i];
      }
    });
  }
  return out;
}

Tensor Graph::log(const Tensor& x) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!(x[i] > 0.0)) throw std::domain_error("log: input must be positive");
  }
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::log(x[i]);
  check_finite(out.data(), "log");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    std::vector<double> xv = x.data();
    record(out, true, [xi, xv = std::move(xv)](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] / xv[i];
      }
    });
  }
  return out;
}

Tensor Graph::gelu(const Tensor& x) {
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  }
  check_finite(out.data(), "gelu");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    std::vector<double> xv = x.data();
    record(out, true, [xi, xv = std::move(xv)](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
          gx[i] += g[i] * (cdf + xv[i] * pdf);
        }
      }
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  Tensor out = Tensor::scalar(acc);
  check_finite(out.data(), "sum");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    const std::size_t n = x.numel();
    record(out, true, [xi, n](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
      }
    });
  }
  return out;
}

Tensor Graph::mean(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  const std::size_t n = x.numel();
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  check_finite(out.data(), "mean");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    record(out, true, [xi, n](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        const double gi = g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) gx[i] += gi;
      }
    });
  }
  return out;
}

Tensor Graph::mean_rows(const Tensor& x) {
  require(x.rank() == 2, "mean_rows: want 2-D, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({n}, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c] += x[r * n + c];
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= static_cast<double>(m);
  check_finite(out.data(), "mean_rows");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    record(out, true, [xi, m, n](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c] / static_cast<double>(m);
      }
    });
  }
  return out;
}

Tensor Graph::softmax(const Tensor& x, int axis) {
  std::size_t slices, width, stride_s, stride_w;
  if (x.rank() == 1) {
    require(axis == 0, "softmax: axis out of range for 1-D input");
    slices = 1, width = x.shape()[0], stride_s = 0, stride_w = 1;
  } else if (x.rank() == 2) {
    require(axis == 0 || axis == 1, "softmax: axis out of range for 2-D input");
    if (axis == 1) {
      slices = x.rows(), width = x.cols(), stride_s = x.cols(), stride_w = 1;
    } else {
      slices = x.cols(), width = x.rows(), stride_s = 1, stride_w = x.cols();
    }
  } else {
    throw std::invalid_argument("softmax: rank must be 1 or 2");
  }
  Tensor out(x.shape(), 0.0);
  for (std::size_t s = 0; s < slices; ++s) {
    double mx = -1e300;
    for (std::size_t w = 0; w < width; ++w) mx = std::max(mx, x[s * stride_s + w * stride_w]);
    double z = 0.0;
    for (std::size_t w = 0; w < width; ++w) {
      const double e = std::exp(x[s * stride_s + w * stride_w] - mx);
      out[s * stride_s + w * stride_w] = e;
      z += e;
    }
    for (std::size_t w = 0; w < width; ++w) out[s * stride_s + w * stride_w] /= z;
  }
  check_finite(out.data(), "softmax");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    std::vector<double> y = out.data();
    record(out, true,
           [xi, y = std::move(y), slices, width, stride_s, stride_w](const double* g, Graph& gr) {
             if (double* gx = gr.adj(xi)) {
               for (std::size_t s = 0; s < slices; ++s) {
                 double dot = 0.0;
                 for (std::size_t w = 0; w < width; ++w) {
                   const std::size_t i = s * stride_s + w * stride_w;
                   dot += g[i] * y[i];
                 }
                 for (std::size_t w = 0; w < width; ++w) {
                   const std::size_t i = s * stride_s + w * stride_w;
                   gx[i] += y[i] * (g[i] - dot);
                 }
               }
             }
           });
  }
  return out;
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.cols() == n, "concat_rows: column extents differ");
    m += p.rows();
  }
  Tensor out({m, n}, 0.0);
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.data().data() + r * n, p.data().data(), p.numel() * sizeof(double));
    r += p.rows();
  }
  bool ng = false;
  for (const Tensor& p : parts) ng = ng || input_needs_grad(p);
  if (recording_ && ng) {
    std::vector<int> ids;
    std::vector<std::size_t> row_counts;
    for (const Tensor& p : parts) {
      ids.push_back(ensure_input(p));
      row_counts.push_back(p.rows());
    }
    record(out, true, [ids, row_counts, n](const double* g, Graph& gr) {
      std::size_t r0 = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (double* gp = gr.adj(ids[k])) {
          for (std::size_t i = 0; i < row_counts[k] * n; ++i) gp[i] += g[r0 * n + i];
        }
        r0 += row_counts[k];
      }
    });
  }
  return out;
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.rows() == m, "concat_cols: row extents differ");
    n += p.cols();
  }
  Tensor out({m, n}, 0.0);
  std::size_t c0 = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::memcpy(out.data().data() + r * n + c0, p.data().data() + r * w, w * sizeof(double));
    }
    c0 += w;
  }
  bool ng = false;
  for (const Tensor& p : parts) ng = ng || input_needs_grad(p);
  if (recording_ && ng) {
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      ids.push_back(ensure_input(p));
      widths.push_back(p.cols());
    }
    record(out, true, [ids, widths, m, n](const double* g, Graph& gr) {
      std::size_t c0 = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const std::size_t w = widths[k];
        if (double* gp = gr.adj(ids[k])) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * n + c0 + c];
        }
        c0 += w;
      }
    });
  }
  return out;
}

Tensor Graph::stack_rows(const std::vector<Tensor>& rows) {
  require(!rows.empty(), "stack_rows: no rows");
  const std::size_t n = rows[0].numel();
  for (const Tensor& r : rows) {
    require(r.rank() == 1 && r.numel() == n, "stack_rows: want 1-D rows of equal length");
  }
  Tensor out({rows.size(), n}, 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::memcpy(out.data().data() + k * n, rows[k].data().data(), n * sizeof(double));
  }
  bool ng = false;
  for (const Tensor& r : rows) ng = ng || input_needs_grad(r);
  if (recording_ && ng) {
    std::vector<int> ids;
    for (const Tensor& r : rows) ids.push_back(ensure_input(r));
    record(out, true, [ids, n](const double* g, Graph& gr) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (double* gp = gr.adj(ids[k])) {
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[k * n + i];
        }
      }
    });
  }
  return out;
}

Tensor Graph::slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  require(x.rank() == 2 && r0 < r1 && r1 <= x.rows(), "slice_rows: bad range");
  const std::size_t n = x.cols(), m = r1 - r0;
  Tensor out({m, n}, std::vector<double>(x.data().begin() + static_cast<long>(r0 * n),
                                         x.data().begin() + static_cast<long>(r1 * n)));
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    record(out, true, [xi, r0, m, n](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < m * n; ++i) gx[r0 * n + i] += g[i];
      }
    });
  }
  return out;
}

Tensor Graph::slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require(x.rank() == 2 && c0 < c1 && c1 <= x.cols(), "slice_cols: bad range");
  const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor out({m, w}, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * n + c0 + c];
  }
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    record(out, true, [xi, c0, m, n, w](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) gx[r * n + c0 + c] += g[r * w + c];
      }
    });
  }
  return out;
}

Tensor Graph::transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose: want 2-D");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({n, m}, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = x[r * n + c];
  }
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    record(out, true, [xi, m, n](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c * m + r];
      }
    });
  }
  return out;
}

Tensor Graph::gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  require(table.rank() == 2, "gather_rows: table must be 2-D");
  require(!ids.empty(), "gather_rows: empty id list");
  const std::size_t n = table.cols();
  for (std::size_t id : ids) require(id < table.rows(), "gather_rows: id out of range");
  Tensor out({ids.size(), n}, 0.0);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    std::memcpy(out.data().data() + k * n, table.data().data() + ids[k] * n, n * sizeof(double));
  }
  if (recording_ && input_needs_grad(table)) {
    const int ti = ensure_input(table);
    std::vector<std::size_t> idv = ids;
    record(out, true, [ti, idv = std::move(idv), n](const double* g, Graph& gr) {
      if (double* gt = gr.adj(ti)) {
        for (std::size_t k = 0; k < idv.size(); ++k) {
          for (std::size_t c = 0; c < n; ++c) gt[idv[k] * n + c] += g[k * n + c];
        }
      }
    });
  }
  return out;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() == 2, "layer_norm: want 2-D input");
  const std::size_t m = x.rows(), n = x.cols();
  require(gamma.rank() == 1 && gamma.numel() == n && beta.rank() == 1 && beta.numel() == n,
          "layer_norm: gamma/beta must be [n]");
  Tensor out(x.shape(), 0.0);
  std::vector<double> xhat(m * n), inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += x[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = x[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (x[r * n + c] - mu) * is;
      xhat[r * n + c] = h;
      out[r * n + c] = gamma[c] * h + beta[c];
    }
  }
  check_finite(out.data(), "layer_norm");
  const bool ng = input_needs_grad(x) || input_needs_grad(gamma) || input_needs_grad(beta);
  if (recording_ && ng) {
    const int xi = ensure_input(x), gi = ensure_input(gamma), bi = ensure_input(beta);
    std::vector<double> gv = gamma.data();
    record(out, true,
           [xi, gi, bi, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std),
            gv = std::move(gv)](const double* g, Graph& gr) {
             double* gx = gr.adj(xi);
             double* gg = gr.adj(gi);
             double* gb = gr.adj(bi);
             for (std::size_t r = 0; r < m; ++r) {
               if (gg || gb) {
                 for (std::size_t c = 0; c < n; ++c) {
                   if (gg) gg[c] += g[r * n + c] * xhat[r * n + c];
                   if (gb) gb[c] += g[r * n + c];
                 }
               }
               if (gx) {
                 double mean_gh = 0.0, mean_ghx = 0.0;
                 for (std::size_t c = 0; c < n; ++c) {
                   const double gh = g[r * n + c] * gv[c];
                   mean_gh += gh;
                   mean_ghx += gh * xhat[r * n + c];
                 }
                 mean_gh /= static_cast<double>(n);
                 mean_ghx /= static_cast<double>(n);
                 for (std::size_t c = 0; c < n; ++c) {
                   const double gh = g[r * n + c] * gv[c];
                   gx[r * n + c] += inv_std[r] * (gh - mean_gh - xhat[r * n + c] * mean_ghx);
                 }
               }
             }
           });
  }
  return out;
}

Tensor Graph::adaptive_pool_rows(const Tensor& x, std::size_t m) {
  require(x.rank() == 2, "adaptive_pool_rows: want 2-D");
  const std::size_t s = x.rows(), n = x.cols();
  require(m >= 1 && s >= m, "adaptive_pool_rows: need rows >= m >= 1, got rows=" + std::to_string(s) +
                                " m=" + std::to_string(m));
  // Balanced partition: the first (s mod m) windows take ceil(s/m) rows.
  const std::size_t q = s / m, rem = s % m;
  std::vector<std::size_t> starts(m + 1, 0);
  for (std::size_t i = 0; i < m; ++i) starts[i + 1] = starts[i] + q + (i < rem ? 1 : 0);
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t w = starts[i + 1] - starts[i];
    for (std::size_t r = starts[i]; r < starts[i + 1]; ++r) {
      for (std::size_t c = 0; c < n; ++c) out[i * n + c] += x[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[i * n + c] /= static_cast<double>(w);
  }
  check_finite(out.data(), "adaptive_pool_rows");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    record(out, true, [xi, starts, m, n](const double* g, Graph& gr) {
      if (double* gx = gr.adj(xi)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double w = static_cast<double>(starts[i + 1] - starts[i]);
          for (std::size_t r = starts[i]; r < starts[i + 1]; ++r) {
            for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[i * n + c] / w;
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::normalize_rows(const Tensor& x) {
  require(x.rank() == 2, "normalize_rows: want 2-D");
  const std::size_t m = x.rows(), n = x.cols();
  constexpr double kEps = 1e-24;  // keeps the zero row finite without disturbing generic inputs
  Tensor out(x.shape(), 0.0);
  std::vector<double> inv_norm(m);
  for (std::size_t r = 0; r < m; ++r) {
    double sq = kEps;
    for (std::size_t c = 0; c < n; ++c) sq += x[r * n + c] * x[r * n + c];
    inv_norm[r] = 1.0 / std::sqrt(sq);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] * inv_norm[r];
  }
  check_finite(out.data(), "normalize_rows");
  if (recording_ && input_needs_grad(x)) {
    const int xi = ensure_input(x);
    std::vector<double> xv = x.data();
    record(out, true,
           [xi, m, n, xv = std::move(xv), inv_norm = std::move(inv_norm)](const double* g, Graph& gr) {
             if (double* gx = gr.adj(xi)) {
               for (std::size_t r = 0; r < m; ++r) {
                 double dot = 0.0;
                 for (std::size_t c = 0; c < n; ++c) dot += xv[r * n + c] * g[r * n + c];
                 const double in1 = inv_norm[r], in3 = in1 * in1 * in1;
                 for (std::size_t c = 0; c < n; ++c) {
                   gx[r * n + c] += g[r * n + c] * in1 - xv[r * n + c] * dot * in3;
                 }
               }
             }
           });
  }
  return out;
}

Tensor Graph::cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  std::size_t b, c;
  if (logits.rank() == 1) {
    b = 1, c = logits.shape()[0];
  } else if (logits.rank() == 2) {
    b = logits.rows(), c = logits.cols();
  } else {
    throw std::invalid_argument("cross_entropy: logits must be 1-D or 2-D");
  }
  require(labels.size() == b, "cross_entropy: label count does not match rows");
  for (std::size_t y : labels) require(y < c, "cross_entropy: label out of range");
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    double mx = -1e300;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(logits[r * c + j] - mx);
      z += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    loss += std::log(z) + mx - logits[r * c + labels[r]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(b));
  check_finite(out.data(), "cross_entropy");
  if (recording_ && input_needs_grad(logits)) {
    const int li = ensure_input(logits);
    std::vector<std::size_t> lv = labels;
    record(out, true,
           [li, b, c, probs = std::move(probs), lv = std::move(lv)](const double* g, Graph& gr) {
             if (double* gl = gr.adj(li)) {
               const double s = g[0] / static_cast<double>(b);
               for (std::size_t r = 0; r < b; ++r) {
                 for (std::size_t j = 0; j < c; ++j) {
                   gl[r * c + j] += s * (probs[r * c + j] - (j == lv[r] ? 1.0 : 0.0));
                 }
               }
             }
           });
  }
  return out;
}

}  // namespace aoept
