#include "rca/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "rca/autodiff.hpp"
#include "rca/losses.hpp"
#include "rca/model.hpp"
#include "rca/training.hpp"
#include "rca/vat.hpp"

namespace rca {

namespace {

using ad::Tensor;

constexpr double kSmooth = 1e-6;
constexpr double kComposite = 1e-4;

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values in [0.1, 1] with a random sign: keeps ReLU checks off the kink.
Tensor off_kink(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Rows that are valid distributions bounded away from zero.
Tensor random_probs(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (t.at(i, j) = rng.uniform(0.2, 1.0));
    for (std::size_t j = 0; j < c; ++j) t.at(i, j) /= s;
  }
  return t;
}

// Scalar reduction with random weights so that every output coordinate
// carries a distinct gradient.
std::function<Tensor(const Tensor&)> weighted(std::function<Tensor(const Tensor&)> op, Tensor weights) {
  return [op = std::move(op), weights](const Tensor& x) { return ad::sum(ad::mul(op(x), weights)); };
}

double worst_over(const std::vector<Tensor>& params, const std::function<Tensor()>& f) {
  double worst = 0.0;
  for (Tensor p : params) worst = std::max(worst, ad::grad_check(f, p));
  return worst;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.num_domains = 2;
  cfg.input_dim = 6;
  cfg.shared_dim = 4;
  cfg.private_dim = 3;
  cfg.extractor_hidden = {5};
  cfg.classifier_hidden = 5;
  cfg.discriminator_hidden = 4;
  cfg.dropout_rate = 0.4;
  return cfg;
}

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  Rng rng(seed);

  auto unary_case = [&](const std::string& name, std::function<Tensor(const Tensor&)> op, Tensor x,
                        std::size_t out_rows, std::size_t out_cols) {
    const Tensor w = random_tensor(out_rows, out_cols, rng);
    auto f = weighted(std::move(op), w);
    cases.push_back({name, [f, x] { return ad::grad_check(f, x); }, kSmooth});
  };

  {
    const Tensor b = random_tensor(4, 3, rng);
    unary_case("matmul (lhs)", [b](const Tensor& a) { return ad::matmul(a, b); }, random_tensor(2, 4, rng), 2, 3);
    const Tensor a = random_tensor(2, 4, rng);
    unary_case("matmul (rhs)", [a](const Tensor& bb) { return ad::matmul(a, bb); }, random_tensor(4, 3, rng), 2, 3);
  }
  {
    const Tensor x = random_tensor(3, 4, rng);
    unary_case("add_row (bias)", [x](const Tensor& b) { return ad::add_row(x, b); }, random_tensor(1, 4, rng), 3, 4);
    const Tensor other = random_tensor(3, 4, rng);
    unary_case("add", [other](const Tensor& t) { return ad::add(t, other); }, random_tensor(3, 4, rng), 3, 4);
    unary_case("sub (rhs)", [other](const Tensor& t) { return ad::sub(other, t); }, random_tensor(3, 4, rng), 3, 4);
    unary_case("mul", [other](const Tensor& t) { return ad::mul(t, other); }, random_tensor(3, 4, rng), 3, 4);
    unary_case("scale", [](const Tensor& t) { return ad::scale(t, -2.5); }, random_tensor(3, 4, rng), 3, 4);
  }
  unary_case("relu", [](const Tensor& t) { return ad::relu(t); }, off_kink(3, 4, rng), 3, 4);
  unary_case("exp", [](const Tensor& t) { return ad::exp(t); }, random_tensor(3, 4, rng), 3, 4);
  unary_case("log_clamped", [](const Tensor& t) { return ad::log_clamped(t); }, random_tensor(3, 4, rng, 0.2, 2.0), 3, 4);
  unary_case("log_softmax", [](const Tensor& t) { return ad::log_softmax(t); }, random_tensor(3, 4, rng, -2, 2), 3, 4);
  unary_case("softmax", [](const Tensor& t) { return ad::softmax(t); }, random_tensor(3, 4, rng, -2, 2), 3, 4);
  {
    const Tensor right = random_tensor(3, 2, rng);
    unary_case("concat", [right](const Tensor& t) { return ad::concat(t, right); }, random_tensor(3, 4, rng), 3, 6);
  }
  unary_case("dropout (fixed mask)",
             [](const Tensor& t) {
               Rng mask_rng(99);
               return ad::dropout(t, 0.4, mask_rng, true);
             },
             random_tensor(3, 4, rng), 3, 4);
  unary_case("row_sum", [](const Tensor& t) { return ad::row_sum(t); }, random_tensor(3, 4, rng), 3, 1);
  {
    const std::vector<int> idx{2, 0, 3};
    unary_case("gather", [idx](const Tensor& t) { return ad::gather(t, idx); }, random_tensor(3, 4, rng), 3, 1);
  }
  {
    const Tensor x = random_tensor(3, 4, rng);
    cases.push_back({"sum", [x] { return ad::grad_check([](const Tensor& t) { return ad::sum(t); }, x); }, kSmooth});
    cases.push_back({"mean", [x] { return ad::grad_check([](const Tensor& t) { return ad::mean(t); }, x); }, kSmooth});
  }

  // Loss terms as functions of their probability inputs.
  {
    const Tensor p = random_probs(4, 2, rng);
    const std::vector<int> labels{0, 1, 1, 0};
    cases.push_back({"classification_loss",
                     [p, labels] {
                       return ad::grad_check([labels](const Tensor& t) { return classification_loss(t, labels); }, p);
                     },
                     kComposite});
    const Tensor d = random_probs(4, 6, rng);
    const std::vector<int> joint{0, 5, 3, 2};
    cases.push_back({"joint_adversarial_loss",
                     [d, joint] {
                       return ad::grad_check([joint](const Tensor& t) { return joint_adversarial_loss(t, joint); }, d);
                     },
                     kComposite});
    cases.push_back({"entropy_loss", [p] { return ad::grad_check([](const Tensor& t) { return entropy_loss(t); }, p); },
                     kComposite});
    const Tensor q = random_probs(4, 2, rng);
    cases.push_back({"kl_divergence (p)",
                     [p, q] { return ad::grad_check([q](const Tensor& t) { return kl_divergence(t, q); }, p); },
                     kComposite});
    cases.push_back({"kl_divergence (q)",
                     [p, q] { return ad::grad_check([p](const Tensor& t) { return kl_divergence(p, t); }, q); },
                     kComposite});
  }

  // Composite losses through a small model, w.r.t. every parameter tensor.
  {
    Rng init(seed + 1);
    auto model = std::make_shared<RcaModel>(RcaModel::init(tiny_model(), init));
    const Tensor x = random_tensor(3, 6, rng, 0.0, 2.0);
    const std::vector<int> y{0, 1, 0};
    const std::size_t domain = 1;

    cases.push_back({"L_c (classifier loss, one sample, train-mode dropout)",
                     [model, x] {
                       const Tensor one(1, 6, std::vector<double>(x.data().begin(), x.data().begin() + 6));
                       return worst_over(model->min_player_parameters(), [model, one] {
                         Rng drop(3);
                         return classification_loss(model->classify(one, 0, Mode::train, drop), std::vector<int>{1});
                       });
                     },
                     kComposite});
    cases.push_back({"L_d (joint adversarial loss)",
                     [model, x, y] {
                       const auto targets = adversary_targets(model->config(), domain, y);
                       auto params = model->discriminator_parameters();
                       auto shared = std::vector<Tensor>();
                       model->shared_extractor().collect(shared);
                       params.insert(params.end(), shared.begin(), shared.end());
                       return worst_over(params, [model, x, targets] {
                         return joint_adversarial_loss(model->discriminate(x), targets);
                       });
                     },
                     kComposite});
    cases.push_back({"L_e (entropy)",
                     [model, x] {
                       return worst_over(model->min_player_parameters(),
                                         [model, x] { return entropy_loss(model->classify(x, domain)); });
                     },
                     kComposite});
    auto vat_case = [&](const std::string& name) {
      cases.push_back({name,
                       [model, x] {
                         Rng vat_rng(11);
                         const Tensor r = vat_perturbation(*model, x, domain, VatConfig{}, vat_rng);
                         Tensor anchor;
                         {
                           ad::NoGrad off;
                           anchor = model->classify(x, domain).detach();
                         }
                         const Tensor shifted = ad::add(x, r);
                         double worst = 0.0;
                         for (Tensor p : model->min_player_parameters()) {
                           worst = std::max(worst, ad::grad_check([&] { return vat_loss(*model, x, domain, r); },
                                                                  [&] {
                                                                    return kl_divergence(anchor,
                                                                                         model->classify(shifted, domain));
                                                                  },
                                                                  p));
                         }
                         return worst;
                       },
                       kComposite});
    };
    vat_case("L_uvt / L_lvt (VAT, detached anchor)");
  }
  return cases;
}

std::vector<GradCheckResult> run_gradcheck(const std::vector<GradCheckCase>& cases) {
  std::vector<GradCheckResult> out;
  for (const auto& c : cases) {
    const double err = c.run();
    out.push_back({c.name, err, c.threshold, std::isfinite(err) && err < c.threshold});
  }
  return out;
}

}  // namespace rca
