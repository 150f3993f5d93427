#include "rca/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "rca/error.hpp"

namespace rca::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(std::size_t rows, std::size_t cols) {
  auto n = std::make_shared<detail::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, 0.0);
  return n;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

std::string shapes(const char* op, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.shape_string() << " and " << b.shape_string();
  return os.str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(shapes(op, a, b));
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : node_(make_node(0, 0)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill, bool requires_grad) : node_(make_node(rows, cols)) {
  std::fill(node_->value.begin(), node_->value.end(), fill);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (values.size() != rows * cols) {
    std::ostringstream os;
    os << "tensor data of length " << values.size() << " does not fill shape [" << rows << "x" << cols << "]";
    throw DimensionError(os.str());
  }
  node_->rows = rows;
  node_->cols = cols;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor(1, 1, v, requires_grad); }

Tensor Tensor::from(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Tensor::from: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(values), requires_grad);
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "[" << rows() << "x" << cols() << "]";
  return os.str();
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_string());
  return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(rows(), cols(), node_->value, false); }

Tensor Tensor::clone() const { return Tensor(rows(), cols(), node_->value, node_->requires_grad); }

// ---- Tape -----------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<NodePtr> nodes, std::function<void()> backward) {
  entries_.push_back(Entry{std::move(nodes), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw UsageError("backward: loss must be a scalar, got " + loss.shape_string());
  // Intermediate gradients belong to a single pass; only leaves accumulate.
  for (auto& e : entries_) e.nodes.back()->grad.clear();
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->nodes.back()->grad.empty()) continue;  // not on a path to the loss
    it->backward();
  }
}

std::vector<std::vector<double>> Tape::gradient(const Tensor& loss, std::span<const Tensor> wrt) {
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::vector<double>>> stash;
  auto park = [&](detail::Node* n) {
    if (seen.insert(n).second) stash.emplace_back(n, std::move(n->grad)), n->grad.clear();
  };
  for (auto& e : entries_)
    for (auto& n : e.nodes) park(n.get());
  for (const auto& t : wrt) park(t.node().get());
  park(loss.node().get());

  backward(loss);

  std::vector<std::vector<double>> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto g = t.node()->grad;
    if (g.empty()) g.assign(t.size(), 0.0);
    out.push_back(std::move(g));
  }
  for (auto& [n, g] : stash) n->grad = std::move(g);
  return out;
}

NoGrad::NoGrad() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGrad::~NoGrad() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
  if (g_active_tape == nullptr) throw UsageError("backward: no active tape");
  g_active_tape->backward(loss);
}

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DimensionError(shapes("matmul", a, b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  // i-k-j order; zero entries of `a` are skipped, which pays off for
  // bag-of-words inputs.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &ov[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  if (tracking({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    g_active_tape->record({an, bn, on}, [an, bn, on, m, k, n] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->value[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = an->value[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw DimensionError(shapes("add_row", x, bias));
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + bias.data()[j];
  if (tracking({&x, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.node(), bn = bias.node(), on = out.node();
    g_active_tape->record({xn, bn, on}, [xn, bn, on, n, c] {
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < n * c; ++i) gx[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += on->grad[i * c + j];
      }
    });
  }
  return out;
}

namespace {

// Shared shape of the elementwise binary ops: out = f(a, b),
// da = g * dfa(a, b), db = g * dfb(a, b).
template <typename F, typename DA, typename DB>
Tensor elementwise(const char* name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  require_same_shape(name, a, b);
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i], b.data()[i]);
  if (tracking({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    g_active_tape->record({an, bn, on}, [an, bn, on, dfa, dfb] {
      const std::size_t len = on->value.size();
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) ga[i] += on->grad[i] * dfa(an->value[i], bn->value[i]);
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) gb[i] += on->grad[i] * dfb(an->value[i], bn->value[i]);
      }
    });
  }
  return out;
}

// out = f(x), dx = g * df(x, out).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = f(x.data()[i]);
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    g_active_tape->record({xn, on}, [xn, on, df] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * df(xn->value[i], on->value[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
  // Subgradient 0 at exactly 0. NaN passes through.
  return unary(
      x, [](double v) { return v < 0.0 ? 0.0 : v; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor log_softmax(const Tensor& x) {
  if (x.cols() < 2) throw DimensionError("log_softmax: need at least two columns, got " + x.shape_string());
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &x.data()[i * c];
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = row[j] - lse;
  }
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    g_active_tape->record({xn, on}, [xn, on, n, c] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < c; ++j) gs += on->grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += on->grad[i * c + j] - std::exp(on->value[i * c + j]) * gs;
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.cols() < 2) throw DimensionError("softmax: need at least two columns, got " + x.shape_string());
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &x.data()[i * c];
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = std::exp(row[j] - lse);
  }
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    g_active_tape->record({xn, on}, [xn, on, n, c] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += on->grad[i * c + j] * on->value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += on->value[i * c + j] * (on->grad[i * c + j] - dot);
      }
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw DimensionError(shapes("concat", a, b));
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  Tensor out(n, p + q);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(&a.data()[i * p], p, &out.data()[i * (p + q)]);
    std::copy_n(b.data().data() + i * q, q, &out.data()[i * (p + q) + p]);
  }
  if (tracking({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    g_active_tape->record({an, bn, on}, [an, bn, on, n, p, q] {
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += on->grad[i * (p + q) + j];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += on->grad[i * (p + q) + p + j];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    std::ostringstream os;
    os << "dropout rate must be in [0, 1), got " << rate;
    throw ConfigError(os.str());
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * mask[i];
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    g_active_tape->record({xn, on}, [xn, on, mask = std::move(mask)] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * mask[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    g_active_tape->record({xn, on}, [xn, on] {
      auto& gx = xn->ensure_grad();
      for (auto& g : gx) g += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw UsageError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor row_sum(const Tensor& x) {
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x.data()[i * c + j];
    out.data()[i] = s;
  }
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    g_active_tape->record({xn, on}, [xn, on, n, c] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += on->grad[i];
    });
  }
  return out;
}

Tensor gather(const Tensor& x, std::span<const int> index) {
  const std::size_t n = x.rows(), c = x.cols();
  if (index.size() != n) {
    std::ostringstream os;
    os << "gather: " << index.size() << " indices for " << x.shape_string();
    throw DimensionError(os.str());
  }
  for (int k : index)
    if (k < 0 || static_cast<std::size_t>(k) >= c) {
      std::ostringstream os;
      os << "gather: index " << k << " out of range for " << c << " columns";
      throw UsageError(os.str());
    }
  Tensor out(n, 1);
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i * c + static_cast<std::size_t>(index[i])];
  if (tracking({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    std::vector<int> idx(index.begin(), index.end());
    g_active_tape->record({xn, on}, [xn, on, c, idx = std::move(idx)] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) gx[i * c + static_cast<std::size_t>(idx[i])] += on->grad[i];
    });
  }
  return out;
}

// ---- numerical checking ---------------------------------------------------

double grad_check(const std::function<Tensor()>& f, Tensor& wrt, double h) { return grad_check(f, f, wrt, h); }

double grad_check(const std::function<Tensor()>& analytic_fn, const std::function<Tensor()>& f, Tensor& wrt,
                  double h) {
  if (!wrt.requires_grad()) throw UsageError("grad_check: tensor does not require grad");
  std::vector<double> analytic;
  {
    Tape tape;
    const Tensor loss = analytic_fn();
    analytic = tape.gradient(loss, std::span<const Tensor>(&wrt, 1)).front();
  }
  double worst = 0.0;
  NoGrad off;
  auto values = wrt.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f().item();
    values[i] = saved - h;
    const double down = f().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  return grad_check([&] { return f(probe); }, probe, h);
}

}  // namespace rca::ad
