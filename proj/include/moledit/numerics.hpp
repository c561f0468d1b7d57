#pragma once

// Dense row-major f64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations record their
// inputs and a backward closure while gradient recording is enabled and at
// least one input requires a gradient; otherwise the result is a plain value.
// Broadcasting is limited to adding a row vector to every row of a matrix.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "moledit/error.hpp"
#include "moledit/rng.hpp"

namespace moledit::num {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeMismatch : public Error {
 public:
  ShapeMismatch(const std::string& op, const Shape& a, const Shape& b)
      : Error("ShapeMismatch", op + " got " + shape_string(a) + " and " +
                                   shape_string(b),
              ErrorClass::Invariant) {}
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, Rng& rng,
                      bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  std::span<const double> data() const;
  /// Writable view. Intended for leaves (parameters, optimizer updates).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Value copy severed from the graph.
  Tensor detach() const;
  /// Independent leaf with the same values and requires_grad flag.
  Tensor clone() const;

  const std::string& op() const;
  const detail::Node* id() const noexcept { return node_.get(); }

  // Internal.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Forward ops.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Same-shape add, or matrix + row vector (shape {n} or {1, n}).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// Multiplies every element of `a` by the single element of `s`.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor relu(const Tensor& a);
/// Softmax along `axis` of a rank-1 or rank-2 tensor (max-subtracted).
Tensor softmax(const Tensor& a, std::size_t axis);
/// Normalizes each row over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
/// Gathers rows of `table` ({V, d}) into a {ids.size(), d} matrix.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
/// Copy of `base` with row `rows[j]` incremented by row j of `src`.
Tensor index_add_rows(const Tensor& base, const Tensor& src,
                      std::span<const std::size_t> rows);
/// Mean over `axis` of a rank-2 tensor; result keeps rank 2 with that axis 1.
Tensor mean(const Tensor& a, std::size_t axis);
/// Mean over every element; returns a scalar.
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Row i of the result is row i - offset of `a`, or zero when out of range.
Tensor shift_rows(const Tensor& a, std::ptrdiff_t offset);
/// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// Row i of the result is the mean of rows 0..i of `a`.
Tensor prefix_mean_rows(const Tensor& a);
/// Element `index` of a tensor as a shape {1} tensor.
Tensor pick(const Tensor& a, std::size_t index);
/// Mean token cross-entropy of logits {T, V} against T target ids.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Differentiation.

class NonScalarLoss : public Error {
 public:
  explicit NonScalarLoss(const Shape& s)
      : Error("NonScalarLoss", "loss has shape " + shape_string(s),
              ErrorClass::Invariant) {}
};

/// Reverse accumulation from a scalar loss into every reachable tensor that
/// requires a gradient. Gradients accumulate across calls until zeroed.
void backward(const Tensor& loss);

/// One recorded operation, with inputs given as indices of earlier records.
struct GraphRecord {
  std::string op;
  std::vector<std::size_t> inputs;
};

/// Topologically ordered view of the graph that produced `root` (leaves
/// first, root last).
std::vector<GraphRecord> record_graph(const Tensor& root);

// Optimization.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one bias-corrected update to every parameter that has a
  /// gradient. Moment buffers are keyed by parameter identity.
  void step(std::span<Tensor> params);
  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::map<const detail::Node*, Moments> moments_;
};

// Gradient checking.

struct FdCheckOptions {
  double h = 1e-5;
  std::size_t max_coords = 200;
  double denominator_floor = 1e-8;
  std::uint64_t seed = 0;
};

/// Compares backward() gradients of `f` against central differences on up
/// to `max_coords` sampled coordinates across `params`. Returns the worst
/// relative error |analytic - numeric| / max(|analytic|, |numeric|, floor).
double fd_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                const FdCheckOptions& options = {});

// Checkpoints.

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_checkpoint(std::istream& in);

/// FNV-1a over names, shapes and value bits. Used to assert that frozen
/// parameters stay frozen.
std::uint64_t checksum(const NamedTensors& tensors);

}  // namespace moledit::num
