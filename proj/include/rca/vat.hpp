#pragma once

#include <cstddef>
#include <functional>

#include "rca/autodiff.hpp"
#include "rca/model.hpp"
#include "rca/rng.hpp"

namespace rca {

struct VatConfig {
  double epsilon = 1.0;  // radius of the perturbation, per row
  double xi = 0.1;       // probe step along the unit direction
  int power_iterations = 1;

  void validate() const;
};

/// Any differentiable map from a batch of inputs to class distributions.
using ProbsFn = std::function<Tensor(const Tensor&)>;

/// Approximates argmax_{|r_i| <= eps} KL(f(x_i) || f(x_i + r_i)) row by row
/// with power iteration: start from a random unit direction d, replace d
/// by the normalised gradient of KL(f(x) || f(x + xi d)) w.r.t. d, repeat.
/// Rows whose gradient vanishes keep their previous direction. The result
/// is a constant (no gradient tracking) with every row norm equal to eps.
Tensor vat_perturbation(const ProbsFn& f, const Tensor& x, const VatConfig& cfg, Rng& rng);

/// Classifier of `domain` in eval mode (dropout off). Parameter gradients
/// are neither computed nor touched.
Tensor vat_perturbation(const RcaModel& model, const Tensor& x, std::size_t domain, const VatConfig& cfg,
                        Rng& rng);

/// KL(f(x) || f(x + r)) averaged over rows. f(x) is evaluated without
/// gradient tracking, so only the perturbed branch is differentiated.
Tensor vat_loss(const ProbsFn& f, const Tensor& x, const Tensor& r);

Tensor vat_loss(const RcaModel& model, const Tensor& x, std::size_t domain, const Tensor& r);

}  // namespace rca
