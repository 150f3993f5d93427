#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rca/error.hpp"
#include "rca/losses.hpp"
#include "rca/vat.hpp"

using namespace rca;

namespace {

// Two-class logistic model: P(class 0) = sigmoid(w . x + b).
ProbsFn logistic(double w0, double w1, double b) {
  const Tensor weight = Tensor::from({{w0, 0.0}, {w1, 0.0}});
  const Tensor bias = Tensor::from({{b, 0.0}});
  return [weight, bias](const Tensor& x) { return ad::softmax(ad::add_row(ad::matmul(x, weight), bias)); };
}

double row_norm(const Tensor& t, std::size_t i) {
  double s = 0.0;
  for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(i, j) * t.at(i, j);
  return std::sqrt(s);
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.num_domains = 2;
  cfg.input_dim = 6;
  cfg.extractor_hidden = {8};
  cfg.shared_dim = 4;
  cfg.private_dim = 3;
  cfg.classifier_hidden = 5;
  cfg.discriminator_hidden = 4;
  return cfg;
}

Tensor random_input(std::size_t n, std::size_t d, Rng& rng) {
  Tensor x(n, d);
  for (double& v : x.data()) v = rng.uniform(0.0, 1.0);
  return x;
}

}  // namespace

// 40-digit reference from tests/oracles/loss_oracles.py.
constexpr double kLogisticKl = 0.028387843878886182738;

TEST_CASE("perturbation rows have norm epsilon") {
  Rng rng(1);
  Rng init(2);
  const RcaModel model = RcaModel::init(tiny_model(), init);
  const Tensor x = random_input(16, 6, rng);
  for (double eps : {0.05, 1.0, 3.0}) {
    VatConfig cfg;
    cfg.epsilon = eps;
    const Tensor r = vat_perturbation(model, x, 1, cfg, rng);
    CHECK_FALSE(r.requires_grad());
    for (std::size_t i = 0; i < r.rows(); ++i) CHECK(std::abs(row_norm(r, i) - eps) < 1e-9);
  }
}

TEST_CASE("perturbation is deterministic given the seed and leaves parameters alone") {
  Rng init(3);
  const RcaModel model = RcaModel::init(tiny_model(), init);
  Rng data(4);
  const Tensor x = random_input(5, 6, data);
  const auto before = hash_parameters(model.parameters());
  Rng a(9), b(9);
  const Tensor r1 = vat_perturbation(model, x, 0, {}, a);
  const Tensor r2 = vat_perturbation(model, x, 0, {}, b);
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
  CHECK(hash_parameters(model.parameters()) == before);
  for (const Tensor& p : model.parameters()) {
    CHECK_FALSE(p.has_grad());
    CHECK(p.requires_grad());
  }
}

TEST_CASE("logistic model: direction matches the dense angle search") {
  const ProbsFn f = logistic(1.5, -0.5, 0.25);
  const Tensor x = Tensor::from({{0.4, 0.8}});
  VatConfig cfg;
  cfg.epsilon = 0.5;
  Rng rng(5);
  const Tensor r = vat_perturbation(f, x, cfg, rng);

  double best_kl = -1.0, best_angle = 0.0;
  for (int k = 0; k < 3600; ++k) {
    const double theta = 2.0 * std::numbers::pi * k / 3600.0;
    const Tensor cand = Tensor::from({{cfg.epsilon * std::cos(theta), cfg.epsilon * std::sin(theta)}});
    const double kl = vat_loss(f, x, cand).item();
    if (kl > best_kl) best_kl = kl, best_angle = theta;
  }
  const double cosine = (r.at(0, 0) * std::cos(best_angle) + r.at(0, 1) * std::sin(best_angle)) / cfg.epsilon;
  CHECK(std::abs(cosine) > 0.99);
}

TEST_CASE("logistic model: closed-form KL") {
  const ProbsFn f = logistic(1.5, -0.5, 0.25);
  const Tensor x = Tensor::from({{0.4, 0.8}});
  CHECK(std::abs(vat_loss(f, x, Tensor::from({{0.6, 0.8}})).item() - kLogisticKl) < 1e-12);
  CHECK(vat_loss(f, x, Tensor(1, 2)).item() == 0.0);
}

TEST_CASE("zero perturbation gives zero loss for a model") {
  Rng init(6), data(7);
  const RcaModel model = RcaModel::init(tiny_model(), init);
  const Tensor x = random_input(4, 6, data);
  CHECK(vat_loss(model, x, 1, Tensor(4, 6)).item() == 0.0);
}

TEST_CASE("constant-output model: loss 0, rows still unit scaled") {
  const ProbsFn constant = [](const Tensor& x) {
    return ad::add_row(ad::matmul(x, Tensor(x.cols(), 2)), Tensor::from({{0.3, 0.7}}));
  };
  Rng rng(8);
  const Tensor x = random_input(3, 4, rng);
  const Tensor r = vat_perturbation(constant, x, {}, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(row_norm(r, i) - 1.0) < 1e-9);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::isfinite(r.at(i, j)));
  }
  CHECK(vat_loss(constant, x, r).item() == 0.0);
}

TEST_CASE("gradient flows only through the perturbed branch") {
  Rng init(9), data(10);
  RcaModel model = RcaModel::init(tiny_model(), init);
  const Tensor x = random_input(3, 6, data);
  const Tensor r = vat_perturbation(model, x, 0, {}, data);
  Tensor w = model.classifier().layers()[0].weight;
  const double err = ad::grad_check(
      [&] { return vat_loss(model, x, 0, r); },
      [&, anchor = model.classify(x, 0).detach()] {
        ad::NoGrad off;
        return kl_divergence(anchor, model.classify(ad::add(x, r), 0));
      },
      w);
  model.zero_grad();
  CHECK(err < 1e-4);
}

TEST_CASE("adversarial direction beats random directions on a smooth model") {
  Rng init(11);
  auto random_matrix = [&init](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.data()) v = init.uniform(-1.5, 1.5);
    return t;
  };
  const Tensor w1 = random_matrix(6, 5), b1 = random_matrix(1, 5), w2 = random_matrix(5, 2), b2 = random_matrix(1, 2);
  const ProbsFn smooth = [&](const Tensor& x) {
    return ad::softmax(ad::add_row(ad::matmul(ad::softmax(ad::add_row(ad::matmul(x, w1), b1)), ad::scale(w2, 4.0)), b2));
  };
  Rng data(12);
  VatConfig cfg;
  cfg.epsilon = 0.5;
  int wins = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const Tensor x = random_input(1, 6, data);
    const Tensor r = vat_perturbation(smooth, x, cfg, data);
    Tensor random(1, 6);
    for (double& v : random.data()) v = data.normal();
    const double n = row_norm(random, 0);
    for (double& v : random.data()) v *= cfg.epsilon / n;
    if (vat_loss(smooth, x, r).item() >= vat_loss(smooth, x, random).item()) ++wins;
  }
  MESSAGE("adversarial wins: " << wins << " / " << trials);
  CHECK(wins >= 0.9 * trials);
}

TEST_CASE("invalid configuration") {
  VatConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.power_iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
