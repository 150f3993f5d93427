#include <doctest.h>

#include <cmath>

#include "rca/error.hpp"
#include "rca/training.hpp"

using namespace rca;

namespace {

ModelConfig tiny_model(std::size_t domains) {
  ModelConfig cfg;
  cfg.num_domains = domains;
  cfg.input_dim = 4;
  cfg.extractor_hidden = {6};
  cfg.shared_dim = 4;
  cfg.private_dim = 3;
  cfg.classifier_hidden = 5;
  cfg.discriminator_hidden = 4;
  return cfg;
}

std::vector<DomainDataset> small_domains(std::size_t domains, std::uint64_t seed) {
  SyntheticScenario s;
  s.dims = 2;
  s.samples_per_class = 40;
  s.test_per_class = 10;
  s.seed = seed;
  for (std::size_t d = 0; d < domains; ++d)
    s.domains.push_back({"d" + std::to_string(d), {1.0, 0.5 * d}, {-1.0, -0.5 * d}, {1.0, 1.0}, 0.25});
  return generate_synthetic(s);
}

std::vector<DomainBatch> batches_for(const std::vector<DomainDataset>& data, std::size_t n) {
  std::vector<DomainBatch> out;
  for (const auto& ds : data) {
    std::vector<LabeledExample> lab(ds.labeled.begin(), ds.labeled.begin() + n);
    std::vector<SparseVector> unl(ds.unlabeled.begin(), ds.unlabeled.begin() + n);
    DomainBatch b{to_dense(std::span<const LabeledExample>(lab), ds.input_dim), {},
                  to_dense(std::span<const SparseVector>(unl), ds.input_dim)};
    for (const auto& ex : lab) b.labels.push_back(ex.label);
    out.push_back(std::move(b));
  }
  return out;
}

double adversary_loss(const RcaModel& model, const PreparedStep& prep) {
  double total = 0.0;
  for (std::size_t d = 0; d < prep.targets.size(); ++d)
    total += joint_adversarial_loss(model.discriminate(prep.adversary_inputs[d]), prep.targets[d]).item();
  return total;
}

}  // namespace

TEST_CASE("pseudo-labels: argmax with ties to the positive class") {
  CHECK(pseudo_label(Tensor::from({{0.5, 0.5}})) == 0);
  CHECK(pseudo_label(Tensor::from({{0.4, 0.6}})) == 1);
  CHECK(pseudo_label(Tensor::from({{0.7, 0.3}})) == 0);
  CHECK_THROWS_AS(pseudo_label(Tensor::from({{0.2, 0.3, 0.5}})), DimensionError);
}

TEST_CASE("Adam") {
  SUBCASE("first step moves by lr against the gradient sign") {
    std::vector<Tensor> p{Tensor::scalar(0.0)};
    std::vector<std::vector<double>> g{{1.0}};
    std::vector<AdamState> st(1);
    std::uint64_t step = 0;
    adam_update(p, g, st, step, 0.1, 0.9, 0.999, 1e-8);
    // lr * 1 / (1 + 1e-8), reference computed in tests/oracles/loss_oracles.py
    CHECK(std::abs(p[0].item() - (-0.09999999900000001)) < 1e-15);
    CHECK(step == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p{Tensor::from({{0.3, -2.0}})};
    std::vector<std::vector<double>> g{{0.0, 0.0}};
    std::vector<AdamState> st(1);
    std::uint64_t step = 0;
    for (int i = 0; i < 5; ++i) adam_update(p, g, st, step, 0.1, 0.9, 0.999, 1e-8);
    CHECK(p[0].at(0, 0) == 0.3);
    CHECK(p[0].at(0, 1) == -2.0);
  }
  SUBCASE("mismatched lists are rejected") {
    std::vector<Tensor> p{Tensor::scalar(0.0)};
    std::vector<std::vector<double>> g{{1.0, 2.0}};
    std::vector<AdamState> st(1);
    std::uint64_t step = 0;
    CHECK_THROWS_AS(adam_update(p, g, st, step, 0.1, 0.9, 0.999, 1e-8), UsageError);
  }
  SUBCASE("minimises a quadratic") {
    Tensor x = Tensor::from({{3.0, -4.0}}, true);
    Adam adam({x}, 0.1);
    for (int i = 0; i < 500; ++i) {
      adam.zero_grad();
      ad::Tape tape;
      tape.backward(ad::sum(ad::mul(x, x)));
      adam.step();
    }
    CHECK(std::abs(x.at(0, 0)) < 1e-2);
    CHECK(std::abs(x.at(0, 1)) < 1e-2);
  }
}

TEST_CASE("adversary targets") {
  ModelConfig cfg = tiny_model(3);
  const std::vector<int> s{kPositive, kNegative};
  CHECK(adversary_targets(cfg, 2, s) == std::vector<int>{2, 5});
  cfg.alignment = Alignment::marginal;
  CHECK(adversary_targets(cfg, 2, s) == std::vector<int>{2, 2});
}

TEST_CASE("phases touch disjoint parameter sets") {
  const auto data = small_domains(3, 1);
  Rng init(2);
  ModelConfig mc = tiny_model(3);
  mc.dropout_rate = 0.0;
  RcaModel model = RcaModel::init(mc, init);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  Optimizers opt = Optimizers::for_model(model, cfg);
  StepRngs rngs = StepRngs::from_seed(3);
  const auto batches = batches_for(data, 8);
  for (int step = 0; step < 3; ++step) {
    const auto min0 = hash_parameters(model.min_player_parameters());
    const auto disc0 = hash_parameters(model.discriminator_parameters());
    StepMetrics m;
    const PreparedStep prep = prepare_step(model, batches);
    const double before = adversary_loss(model, prep);
    discriminator_phase(model, prep, opt, rngs, m);
    CHECK(hash_parameters(model.min_player_parameters()) == min0);
    CHECK(hash_parameters(model.discriminator_parameters()) != disc0);
    CHECK(adversary_loss(model, prep) <= before + 1e-9);
    const auto disc1 = hash_parameters(model.discriminator_parameters());
    min_player_phase(model, batches, prep, cfg, opt, rngs, m);
    CHECK(hash_parameters(model.discriminator_parameters()) == disc1);
    CHECK(hash_parameters(model.min_player_parameters()) != min0);
  }
}

TEST_CASE("lambda_d = 0 leaves the adversary out of the min-player update") {
  const auto data = small_domains(2, 4);
  TrainConfig cfg;
  cfg.weights = {0.0, 1.0, 0.01};
  Rng i1(5), i2(5);
  RcaModel a = RcaModel::init(tiny_model(2), i1);
  ModelConfig marginal = tiny_model(2);
  marginal.alignment = Alignment::marginal;
  RcaModel b = RcaModel::init(marginal, i2);
  Optimizers oa = Optimizers::for_model(a, cfg), ob = Optimizers::for_model(b, cfg);
  StepRngs ra = StepRngs::from_seed(6), rb = StepRngs::from_seed(6);
  const auto batches = batches_for(data, 8);
  for (int s = 0; s < 3; ++s) {
    train_step(a, batches, cfg, oa, ra);
    train_step(b, batches, cfg, ob, rb);
  }
  // With no adversarial term, the adversary's shape cannot influence F_s, F_d or C.
  CHECK(hash_parameters(a.min_player_parameters()) == hash_parameters(b.min_player_parameters()));
}

TEST_CASE("M = 1 with regularisers off reproduces a plain supervised step bit for bit") {
  const auto data = small_domains(1, 7);
  TrainConfig cfg;
  cfg.weights = {0.0, 0.0, 0.0};
  cfg.learning_rate = 1e-2;
  Rng init(8);
  RcaModel model = RcaModel::init(tiny_model(1), init);
  RcaModel plain = model.clone();
  Optimizers opt = Optimizers::for_model(model, cfg);
  StepRngs rngs = StepRngs::from_seed(9);
  Adam adam(plain.min_player_parameters(), cfg.learning_rate);
  Rng dropout = StepRngs::from_seed(9).dropout;
  const auto batches = batches_for(data, 8);
  for (int s = 0; s < 4; ++s) {
    const StepMetrics m = train_step(model, batches, cfg, opt, rngs);
    adam.zero_grad();
    ad::Tape tape;
    const Tensor loss = classification_loss(plain.classify(batches[0].labeled_x, 0, Mode::train, dropout),
                                            batches[0].labels);
    tape.backward(loss);
    adam.step();
    CHECK(m.loss_c == loss.item());
    CHECK(m.loss_e == 0.0);
    CHECK(m.loss_uvt == 0.0);
    CHECK(m.loss_lvt == 0.0);
    CHECK(hash_parameters(model.min_player_parameters()) == hash_parameters(plain.min_player_parameters()));
  }
}

TEST_CASE("scheduling errors") {
  const auto data = small_domains(2, 1);
  Rng init(1);
  RcaModel model = RcaModel::init(tiny_model(2), init);
  TrainConfig cfg;
  Optimizers opt = Optimizers::for_model(model, cfg);
  StepRngs rngs = StepRngs::from_seed(1);
  auto batches = batches_for(data, 4);
  batches.pop_back();
  CHECK_THROWS_AS(train_step(model, batches, cfg, opt, rngs), SchedulingError);
  batches = batches_for(data, 4);
  batches[1].labeled_x = Tensor(0, 4);
  batches[1].labels.clear();
  CHECK_THROWS_AS(train_step(model, batches, cfg, opt, rngs), SchedulingError);
}

TEST_CASE("non-finite losses are reported with the term name") {
  const auto data = small_domains(1, 1);
  Rng init(1);
  RcaModel model = RcaModel::init(tiny_model(1), init);
  model.classifier().layers()[0].weight.data()[0] = std::nan("");
  TrainConfig cfg;
  Optimizers opt = Optimizers::for_model(model, cfg);
  StepRngs rngs = StepRngs::from_seed(1);
  try {
    train_step(model, batches_for(data, 4), cfg, opt, rngs);
    FAIL("no error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("L_c") != std::string::npos);
  }
}

TEST_CASE("evaluate") {
  const std::vector<std::vector<LabeledExample>> sets{{{{}, 0}, {{}, 1}, {{}, 0}, {{}, 1}}, {{{}, 0}, {{}, 0}}};
  const auto report = evaluate([](std::size_t, const LabeledExample&) { return 0; }, sets);
  CHECK(report.per_domain == std::vector<double>{0.5, 1.0});
  CHECK(report.average == 0.75);
  const std::vector<std::vector<LabeledExample>> empty_fold{{{{}, 0}}, {}};
  CHECK_THROWS_AS(evaluate([](std::size_t, const LabeledExample&) { return 0; }, empty_fold), UsageError);
}

TEST_CASE("fit") {
  auto data = small_domains(2, 11);
  ModelConfig mc = tiny_model(2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  FitOptions options;
  for (const auto& ds : data) options.held_out.push_back(ds.test);

  SUBCASE("identical seeds give identical runs") {
    const FitResult a = fit(data, mc, cfg, options);
    const FitResult b = fit(data, mc, cfg, options);
    CHECK(a.history == b.history);
    CHECK(hash_parameters(a.model.parameters()) == hash_parameters(b.model.parameters()));
    // 20 labeled per domain, batch 8: three steps per epoch.
    CHECK(a.history.size() == 9);
    CHECK(a.history[2].domain_accuracy.size() == 2);
    CHECK(a.history[0].domain_accuracy.empty());
    cfg.seed = 2;
    CHECK_FALSE(fit(data, mc, cfg, options).history == a.history);
  }
  SUBCASE("a domain without labels is a config error") {
    data[1].labeled.clear();
    CHECK_THROWS_AS(fit(data, mc, cfg, options), ConfigError);
  }
  SUBCASE("callbacks") {
    std::vector<std::size_t> epochs;
    std::size_t steps = 0;
    options.on_epoch = [&](std::size_t e, const RcaModel&) { epochs.push_back(e); };
    options.on_step = [&](const StepMetrics&) { ++steps; };
    fit(data, mc, cfg, options);
    CHECK(epochs == std::vector<std::size_t>{1, 2, 3});
    CHECK(steps == 9);
  }
}

TEST_CASE("metrics JSON line") {
  StepMetrics m;
  m.step = 3;
  m.loss_c = 0.5;
  m.domain_accuracy = {1.0};
  const std::string line = to_json_line(m);
  CHECK(line.rfind("{\"step\":3,\"epoch\":0,\"loss_c\":0.5,", 0) == 0);
  CHECK(line.find("\"domain_accuracy\":[1.0]") != std::string::npos);
}
