#include "rca/vat.hpp"

#include <cmath>
#include <sstream>

#include "rca/error.hpp"
#include "rca/losses.hpp"

namespace rca {

void VatConfig::validate() const {
  if (!(epsilon > 0.0) || !(xi > 0.0) || power_iterations < 1) {
    std::ostringstream os;
    os << "vat: need epsilon > 0, xi > 0, power_iterations >= 1 (got " << epsilon << ", " << xi << ", "
       << power_iterations << ")";
    throw ConfigError(os.str());
  }
}

namespace {

// Normalises each row of `src` into `dst`; rows with zero or non-finite
// norm leave `dst` unchanged.
void normalize_rows_into(std::span<const double> src, std::span<double> dst, std::size_t cols) {
  const std::size_t rows = cols == 0 ? 0 : src.size() / cols;
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sq += src[i * cols + j] * src[i * cols + j];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) continue;
    for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] = src[i * cols + j] / norm;
  }
}

// Temporarily clears requires_grad on a set of tensors.
class Frozen {
 public:
  explicit Frozen(std::vector<Tensor> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      flags_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~Frozen() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(flags_[i]);
  }
  Frozen(const Frozen&) = delete;
  Frozen& operator=(const Frozen&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> flags_;
};

ProbsFn eval_classifier(const RcaModel& model, std::size_t domain) {
  return [&model, domain](const Tensor& in) { return model.classify(in, domain); };
}

}  // namespace

Tensor vat_perturbation(const ProbsFn& f, const Tensor& x, const VatConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = x.rows(), c = x.cols();
  Tensor anchor;
  {
    ad::NoGrad off;
    anchor = f(x).detach();
  }

  std::vector<double> raw(n * c);
  for (double& v : raw) v = rng.normal();
  Tensor direction(n, c, 0.0);
  // A zero-norm draw is measure-zero; fall back to the first axis.
  for (std::size_t i = 0; i < n && c > 0; ++i) direction.at(i, 0) = 1.0;
  normalize_rows_into(raw, direction.data(), c);

  for (int it = 0; it < cfg.power_iterations; ++it) {
    ad::Tape tape;
    Tensor probe = direction.clone();
    probe.set_requires_grad(true);
    const Tensor shifted = ad::add(x, ad::scale(probe, cfg.xi));
    const Tensor divergence = kl_divergence(anchor, f(shifted));
    const auto grads = tape.gradient(divergence, std::span<const Tensor>(&probe, 1));
    normalize_rows_into(grads.front(), direction.data(), c);
  }

  Tensor r(n, c);
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = cfg.epsilon * direction.data()[i];
  return r;
}

Tensor vat_perturbation(const RcaModel& model, const Tensor& x, std::size_t domain, const VatConfig& cfg,
                        Rng& rng) {
  Frozen frozen(model.parameters());
  return vat_perturbation(eval_classifier(model, domain), x, cfg, rng);
}

Tensor vat_loss(const ProbsFn& f, const Tensor& x, const Tensor& r) {
  Tensor anchor;
  {
    ad::NoGrad off;
    anchor = f(x).detach();
  }
  return kl_divergence(anchor, f(ad::add(x, r.detach())));
}

Tensor vat_loss(const RcaModel& model, const Tensor& x, std::size_t domain, const Tensor& r) {
  return vat_loss(eval_classifier(model, domain), x, r);
}

}  // namespace rca
