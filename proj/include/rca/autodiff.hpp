#pragma once

// Minimal tape-based reverse-mode autodiff over dense row-major matrices.
//
// Every tensor is two-dimensional; the leading dimension is the batch.
// A scalar is a 1x1 tensor. Operations record a backward rule on the
// thread's active Tape when at least one input requires a gradient.
// Without an active tape (or under NoGrad) nothing is recorded and outputs
// are plain constants.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rca/rng.hpp"

namespace rca::ad {

namespace detail {
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

/// Handle to a dense matrix. Copies share storage, like a reference.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0, bool requires_grad = false);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  /// Nested-initializer convenience for tests: Tensor::from({{1, 2}, {3, 4}}).
  static Tensor from(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad = false);

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::string shape_string() const;

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  double& at(std::size_t r, std::size_t c) { return node_->value[r * node_->cols + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  /// Value of a 1x1 tensor.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; empty span if no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, new storage, no gradient tracking.
  Tensor detach() const;
  /// Same values and requires_grad flag, new storage.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
};

/// Ordered record of operations. Constructing a Tape makes it the active
/// tape of the calling thread until it is destroyed (tapes nest). A tape
/// must not be shared between threads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// The innermost live tape of this thread, or nullptr.
  static Tape* active();

  /// Appends one operation. `nodes` lists every input and the output last.
  void record(std::vector<std::shared_ptr<detail::Node>> nodes, std::function<void()> backward);

  /// Seeds d(loss)=1 and replays the recorded rules in reverse order.
  /// Gradients of leaf tensors accumulate across calls; gradients of
  /// intermediate results are recomputed on every call.
  void backward(const Tensor& loss);

  /// Gradients of `loss` with respect to `wrt`, without touching the grad
  /// buffer of any tensor.
  std::vector<std::vector<double>> gradient(const Tensor& loss, std::span<const Tensor> wrt);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

/// Suspends recording on this thread for its lifetime.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape* saved_;
};

/// Backward pass on the active tape.
void backward(const Tensor& loss);

// ---- operations ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x [n x c] plus a bias row [1 x c] broadcast over the batch.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
/// log(max(x, floor)). The gradient is zero where the floor is active.
Tensor log_clamped(const Tensor& x, double floor = 1e-12);
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor concat(const Tensor& a, const Tensor& b);
/// Inverted dropout. Identity (same storage) when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per-row sum, [n x c] -> [n x 1].
Tensor row_sum(const Tensor& x);
/// Picks x[i, index[i]] for every row, [n x c] -> [n x 1].
Tensor gather(const Tensor& x, std::span<const int> index);

// ---- numerical checking -------------------------------------------------

/// Max over coordinates of |autodiff - central difference| /
/// max(|autodiff|, |central|, 1e-8), where f is re-evaluated with each
/// coordinate of `wrt` shifted by +-h in place. `wrt` must require grad.
double grad_check(const std::function<Tensor()>& f, Tensor& wrt, double h = 1e-5);

/// As above, but differentiates `analytic` and finite-differences
/// `numeric`. Used where the two are meant to agree only in their
/// derivative, e.g. a loss with a stop-gradient against its frozen form.
double grad_check(const std::function<Tensor()>& analytic, const std::function<Tensor()>& numeric, Tensor& wrt,
                  double h = 1e-5);

/// Same check for a function of a single input tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace rca::ad
