#include "moledit/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace moledit::num {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool t_grad_enabled = true;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_size(shape)) {
    throw Error("ShapeMismatch",
                "value count " + std::to_string(values.size()) +
                    " does not match shape " + shape_string(shape),
                ErrorClass::Invariant);
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Builds an op result. The backward closure is kept only when recording is on
// and some input needs a gradient.
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = std::move(op);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw Error("ShapeMismatch",
                op + " expects rank " + std::to_string(rank) + ", got " +
                    shape_string(t.shape()),
                ErrorClass::Invariant);
  }
}

bool is_row_vector_for(const Shape& b, std::size_t cols) {
  return (b.size() == 1 && b[0] == cols) ||
         (b.size() == 2 && b[0] == 1 && b[1] == cols);
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

Tensor Tensor::randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.normal() * stddev;
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor(make_leaf({n, n}, std::move(v), false));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }

std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  require_rank("rows", *this, 2);
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank("cols", *this, 2);
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw Error("ShapeMismatch", "item() on shape " + shape_string(shape()),
                ErrorClass::Invariant);
  }
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * node_->shape[1] + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

bool Tensor::has_grad() const {
  return node_->grad.size() == node_->value.size() && !node_->value.empty();
}

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(node_->shape, node_->value, node_->requires_grad));
}

const std::string& Tensor::op() const { return node_->op; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeMismatch("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result(
      "matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [m, k, n](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const double* G = self.grad.data();
        if (na.requires_grad) {
          auto& ga = na.ensure_grad();
          const double* B = nb.value.data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* brow = B + p * n;
              const double* grow = G + i * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          const double* A = na.value.data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = G + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double av = A[i * k + p];
              if (av == 0.0) continue;
              double* gbrow = gb.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a.node_ptr()},
                     [m, n](Node& self) {
                       Node& na = *self.inputs[0];
                       auto& ga = na.ensure_grad();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           ga[i * n + j] += self.grad[j * m + i];
                     });
}

namespace {

Tensor add_impl(const Tensor& a, const Tensor& b, double sign,
                const char* name) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + sign * y[i];
    return make_result(name, a.shape(), std::move(out),
                       {a.node_ptr(), b.node_ptr()}, [sign](Node& self) {
                         Node& na = *self.inputs[0];
                         Node& nb = *self.inputs[1];
                         if (na.requires_grad) {
                           auto& g = na.ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += self.grad[i];
                         }
                         if (nb.requires_grad) {
                           auto& g = nb.ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += sign * self.grad[i];
                         }
                       });
  }
  if (a.rank() == 2 && is_row_vector_for(b.shape(), a.dim(1))) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.size());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out[i * n + j] = x[i * n + j] + sign * y[j];
    return make_result(name, a.shape(), std::move(out),
                       {a.node_ptr(), b.node_ptr()}, [m, n, sign](Node& self) {
                         Node& na = *self.inputs[0];
                         Node& nb = *self.inputs[1];
                         if (na.requires_grad) {
                           auto& g = na.ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += self.grad[i];
                         }
                         if (nb.requires_grad) {
                           auto& g = nb.ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               g[j] += sign * self.grad[i * n + j];
                         }
                       });
  }
  throw ShapeMismatch(name, a.shape(), b.shape());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out),
                     {a.node_ptr(), b.node_ptr()}, [](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       if (na.requires_grad) {
                         auto& g = na.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i] * nb.value[i];
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i] * na.value[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return make_result("scale", a.shape(), std::move(out), {a.node_ptr()},
                     [c](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += c * self.grad[i];
                     });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeMismatch("scale_by", a.shape(), s.shape());
  const double c = s.item();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return make_result("scale_by", a.shape(), std::move(out),
                     {a.node_ptr(), s.node_ptr()}, [](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& ns = *self.inputs[1];
                       const double c = ns.value[0];
                       if (na.requires_grad) {
                         auto& g = na.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += c * self.grad[i];
                       }
                       if (ns.requires_grad) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           acc += self.grad[i] * na.value[i];
                         ns.ensure_grad()[0] += acc;
                       }
                     });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a.node_ptr()},
                     [](Node& self) {
                       Node& na = *self.inputs[0];
                       auto& g = na.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (na.value[i] > 0.0) g[i] += self.grad[i];
                     });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw Error("ShapeMismatch", "softmax expects rank 1 or 2",
                ErrorClass::Invariant);
  }
  if (axis >= a.rank()) {
    throw Error("ShapeMismatch", "softmax axis out of range",
                ErrorClass::Invariant);
  }
  // Express the reduction as `lines` groups of `len` elements at `stride`.
  std::size_t lines, len, stride, line_step;
  if (a.rank() == 1) {
    lines = 1, len = a.dim(0), stride = 1, line_step = 0;
  } else if (axis == 1) {
    lines = a.dim(0), len = a.dim(1), stride = 1, line_step = a.dim(1);
  } else {
    lines = a.dim(1), len = a.dim(0), stride = a.dim(1), line_step = 1;
  }
  const auto x = a.data();
  std::vector<double> out(a.size());
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t base = l * line_step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(x[base + i * stride] - mx);
      out[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= total;
  }
  return make_result("softmax", a.shape(), std::move(out), {a.node_ptr()},
                     [lines, len, stride, line_step](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       const auto& y = self.value;
                       for (std::size_t l = 0; l < lines; ++l) {
                         const std::size_t base = l * line_step;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < len; ++i) {
                           const auto k = base + i * stride;
                           dot += self.grad[k] * y[k];
                         }
                         for (std::size_t i = 0; i < len; ++i) {
                           const auto k = base + i * stride;
                           g[k] += y[k] * (self.grad[k] - dot);
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank("layer_norm", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (!is_row_vector_for(gain.shape(), n))
    throw ShapeMismatch("layer_norm", x.shape(), gain.shape());
  if (!is_row_vector_for(bias.shape(), n))
    throw ShapeMismatch("layer_norm", x.shape(), bias.shape());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out),
      {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [m, n, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const double* G = self.grad.data();
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gg[j] += G[i * n + j] * xhat[i * n + j];
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j];
        }
        if (nx.requires_grad) {
          auto& gx = nx.ensure_grad();
          std::vector<double> dh(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = G[i * n + j] * ng.value[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[i * n + j];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[i * n + j] +=
                  inv[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dh_h);
            }
          }
        }
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank("embedding_lookup", table, 2);
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw Error("IndexOutOfRange",
                  "row " + std::to_string(ids[i]) + " of " + std::to_string(v),
                  ErrorClass::Invariant);
    }
    std::copy_n(t.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result("embedding_lookup", {ids.size(), d}, std::move(out),
                     {table.node_ptr()}, [d, idx = std::move(idx)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           g[idx[i] * d + j] += self.grad[i * d + j];
                     });
}

Tensor index_add_rows(const Tensor& base, const Tensor& src,
                      std::span<const std::size_t> rows) {
  require_rank("index_add_rows", base, 2);
  require_rank("index_add_rows", src, 2);
  const std::size_t d = base.dim(1);
  if (src.dim(1) != d || src.dim(0) != rows.size())
    throw ShapeMismatch("index_add_rows", base.shape(), src.shape());
  std::vector<double> out(base.data().begin(), base.data().end());
  const auto s = src.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= base.dim(0)) {
      throw Error("IndexOutOfRange", "index_add_rows row out of range",
                  ErrorClass::Invariant);
    }
    for (std::size_t j = 0; j < d; ++j) out[rows[i] * d + j] += s[i * d + j];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result("index_add_rows", base.shape(), std::move(out),
                     {base.node_ptr(), src.node_ptr()},
                     [d, idx = std::move(idx)](Node& self) {
                       Node& nb = *self.inputs[0];
                       Node& ns = *self.inputs[1];
                       if (nb.requires_grad) {
                         auto& g = nb.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                       if (ns.requires_grad) {
                         auto& g = ns.ensure_grad();
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < d; ++j)
                             g[i * d + j] += self.grad[idx[i] * d + j];
                       }
                     });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  require_rank("mean", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto x = a.data();
  if (axis == 0) {
    if (m == 0) throw Error("ShapeMismatch", "mean over empty axis", ErrorClass::Invariant);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
    for (auto& v : out) v /= static_cast<double>(m);
    return make_result("mean", {1, n}, std::move(out), {a.node_ptr()},
                       [m, n](Node& self) {
                         auto& g = self.inputs[0]->ensure_grad();
                         const double w = 1.0 / static_cast<double>(m);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             g[i * n + j] += w * self.grad[j];
                       });
  }
  if (axis == 1) {
    if (n == 0) throw Error("ShapeMismatch", "mean over empty axis", ErrorClass::Invariant);
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
      out[i] /= static_cast<double>(n);
    }
    return make_result("mean", {m, 1}, std::move(out), {a.node_ptr()},
                       [m, n](Node& self) {
                         auto& g = self.inputs[0]->ensure_grad();
                         const double w = 1.0 / static_cast<double>(n);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             g[i * n + j] += w * self.grad[i];
                       });
  }
  throw Error("ShapeMismatch", "mean axis out of range", ErrorClass::Invariant);
}

Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum_all", {1}, {total}, {a.node_ptr()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw Error("ShapeMismatch", "mean of empty tensor", ErrorClass::Invariant);
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw Error("ShapeMismatch", "concat of nothing", ErrorClass::Invariant);
  const auto rank = parts[0].rank();
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeMismatch("concat", parts[0].shape(), p.shape());
    inputs.push_back(p.node_ptr());
  }
  if (rank == 1 || (rank == 2 && axis == 0)) {
    // Row-major storage makes this a plain append.
    Shape shape = parts[0].shape();
    shape[0] = 0;
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
      if (rank == 2 && p.dim(1) != parts[0].dim(1))
        throw ShapeMismatch("concat", parts[0].shape(), p.shape());
      offsets.push_back(out.size());
      shape[0] += p.dim(0);
      out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return make_result("concat", shape, std::move(out), std::move(inputs),
                       [offsets = std::move(offsets)](Node& self) {
                         for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                           Node& in = *self.inputs[k];
                           if (!in.requires_grad) continue;
                           auto& g = in.ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += self.grad[offsets[k] + i];
                         }
                       });
  }
  if (rank == 2 && axis == 1) {
    const std::size_t m = parts[0].dim(0);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      if (p.dim(0) != m) throw ShapeMismatch("concat", parts[0].shape(), p.shape());
      widths.push_back(p.dim(1));
      total += p.dim(1);
    }
    std::vector<double> out(m * total);
    std::size_t col = 0;
    for (const auto& p : parts) {
      const auto w = p.dim(1);
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(p.data().data() + i * w, w, out.data() + i * total + col);
      col += w;
    }
    return make_result("concat", {m, total}, std::move(out), std::move(inputs),
                       [m, total, widths = std::move(widths)](Node& self) {
                         std::size_t col = 0;
                         for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                           Node& in = *self.inputs[k];
                           const auto w = widths[k];
                           if (in.requires_grad) {
                             auto& g = in.ensure_grad();
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < w; ++j)
                                 g[i * w + j] += self.grad[i * total + col + j];
                           }
                           col += w;
                         }
                       });
  }
  throw Error("ShapeMismatch", "concat axis out of range", ErrorClass::Invariant);
}

Tensor shift_rows(const Tensor& a, std::ptrdiff_t offset) {
  require_rank("shift_rows", a, 2);
  const auto m = static_cast<std::ptrdiff_t>(a.dim(0));
  const std::size_t n = a.dim(1);
  std::vector<double> out(a.size(), 0.0);
  const auto x = a.data();
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    const auto src = i - offset;
    if (src < 0 || src >= m) continue;
    std::copy_n(x.data() + src * n, n, out.data() + i * n);
  }
  return make_result("shift_rows", a.shape(), std::move(out), {a.node_ptr()},
                     [m, n, offset](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::ptrdiff_t i = 0; i < m; ++i) {
                         const auto src = i - offset;
                         if (src < 0 || src >= m) continue;
                         for (std::size_t j = 0; j < n; ++j)
                           g[src * n + j] += self.grad[i * n + j];
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank("slice_rows", a, 2);
  const std::size_t n = a.dim(1);
  if (begin > end || end > a.dim(0)) {
    throw Error("ShapeMismatch",
                "slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") out of range for " + shape_string(a.shape()),
                ErrorClass::Invariant);
  }
  const auto x = a.data();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result("slice_rows", {end - begin, n}, std::move(out), {a.node_ptr()},
                     [begin, n](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[begin * n + i] += self.grad[i];
                     });
}

Tensor prefix_mean_rows(const Tensor& a) {
  require_rank("prefix_mean_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  std::vector<double> run(n, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      run[j] += x[i * n + j];
      out[i * n + j] = run[j] / static_cast<double>(i + 1);
    }
  }
  return make_result("prefix_mean_rows", a.shape(), std::move(out),
                     {a.node_ptr()}, [m, n](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       // d out_i / d x_r = 1/(i+1) for r <= i; sweep suffix sums.
                       std::vector<double> acc(n, 0.0);
                       for (std::size_t ii = m; ii-- > 0;) {
                         const double w = 1.0 / static_cast<double>(ii + 1);
                         for (std::size_t j = 0; j < n; ++j) {
                           acc[j] += w * self.grad[ii * n + j];
                           g[ii * n + j] += acc[j];
                         }
                       }
                     });
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.size()) {
    throw Error("IndexOutOfRange", "pick index out of range", ErrorClass::Invariant);
  }
  return make_result("pick", {1}, {a.data()[index]}, {a.node_ptr()},
                     [index](Node& self) {
                       self.inputs[0]->ensure_grad()[index] += self.grad[0];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t t = logits.dim(0), v = logits.dim(1);
  if (targets.size() != t || t == 0) {
    throw ShapeMismatch("cross_entropy", logits.shape(), {targets.size()});
  }
  const auto x = logits.data();
  std::vector<double> probs(t * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (targets[i] >= v) {
      throw Error("IndexOutOfRange", "target id out of range", ErrorClass::Invariant);
    }
    const double* row = x.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      total += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= total;
    loss += (mx + std::log(total)) - row[targets[i]];
  }
  loss /= static_cast<double>(t);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make_result("cross_entropy", {1}, {loss}, {logits.node_ptr()},
                     [t, v, probs = std::move(probs), tg = std::move(tg)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       const double w = self.grad[0] / static_cast<double>(t);
                       for (std::size_t i = 0; i < t; ++i) {
                         for (std::size_t j = 0; j < v; ++j) {
                           const double onehot = (j == tg[i]) ? 1.0 : 0.0;
                           g[i * v + j] += w * (probs[i * v + j] - onehot);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Differentiation

namespace {

// Iterative post-order DFS so long graphs cannot overflow the stack.
std::vector<Node*> topo_order(Node* root, bool grad_only) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (grad_only && !child->requires_grad) continue;
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw NonScalarLoss(loss.shape());
  Node* root = loss.node_ptr().get();
  if (!root->requires_grad) return;
  const auto order = topo_order(root, true);
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) {
      node->backward_fn(*node);
    }
  }
}

std::vector<GraphRecord> record_graph(const Tensor& root) {
  const auto order = topo_order(root.node_ptr().get(), false);
  std::unordered_map<const Node*, std::size_t> index;
  std::vector<GraphRecord> records;
  records.reserve(order.size());
  for (const Node* node : order) {
    GraphRecord rec{node->op, {}};
    for (const auto& in : node->inputs) rec.inputs.push_back(index.at(in.get()));
    index.emplace(node, records.size());
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::span<Tensor> params) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (auto& p : params) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& mom = moments_[p.id()];
    if (mom.m.size() != p.size()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    auto w = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

double fd_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                const FdCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  {
    const Tensor loss = f();
    backward(loss);
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].size(); ++i) coords.emplace_back(k, i);
  if (coords.size() > options.max_coords) {
    Rng rng(options.seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(options.max_coords);
  }
  double worst = 0.0;
  NoGradGuard guard;
  for (const auto& [k, i] : coords) {
    const double analytic = params[k].has_grad() ? params[k].grad()[i] : 0.0;
    auto w = params[k].mutable_data();
    const double orig = w[i];
    w[i] = orig + options.h;
    const double fp = f().item();
    w[i] = orig - options.h;
    const double fm = f().item();
    w[i] = orig;
    const double numeric = (fp - fm) / (2.0 * options.h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric),
                                   options.denominator_floor});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'E', 'K', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

bool get_bytes(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!get_bytes(in, reinterpret_cast<char*>(b), 4))
    throw Error("CorruptCheckpoint", "truncated u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!get_bytes(in, reinterpret_cast<char*>(b), 8))
    throw Error("CorruptCheckpoint", "truncated f64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_checkpoint(std::ostream& out, const NamedTensors& tensors) {
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }
}

NamedTensors read_checkpoint(std::istream& in) {
  char magic[4];
  if (!get_bytes(in, magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw Error("CorruptCheckpoint", "bad magic");
  const auto version = get_u32(in);
  if (version != kCheckpointVersion)
    throw Error("CorruptCheckpoint", "unsupported version " + std::to_string(version));
  NamedTensors out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = get_u32(in);
    std::string name(name_len, '\0');
    if (!get_bytes(in, name.data(), name_len))
      throw Error("CorruptCheckpoint", "truncated name");
    const auto rank = get_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = get_f64(in);
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  write_checkpoint(out, tensors);
  if (!out) throw Error("IoError", "write failed for " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path);
  return read_checkpoint(in);
}

std::uint64_t checksum(const NamedTensors& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (auto d : t.shape()) mix(d);
    for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace moledit::num
