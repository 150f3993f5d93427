#include "rca/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rca/error.hpp"

namespace rca {

void TrainConfig::validate() const {
  weights.validate();
  vat.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train: Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
}

// ---- Adam -----------------------------------------------------------------

void adam_update(std::span<Tensor> params, std::span<const std::vector<double>> grads, std::span<AdamState> states,
                 std::uint64_t& step, double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size() || params.size() != states.size())
    throw UsageError("adam_update: parameter, gradient and state lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size()) {
      std::ostringstream os;
      os << "adam_update: gradient of length " << grads[i].size() << " for parameter " << params[i].shape_string();
      throw UsageError(os.str());
    }
    if (states[i].m.empty()) {
      states[i].m.assign(params[i].size(), 0.0);
      states[i].v.assign(params[i].size(), 0.0);
    }
    if (states[i].m.size() != params[i].size()) throw UsageError("adam_update: state shape mismatch");
  }
  ++step;
  const double t = static_cast<double>(step);
  const double bias1 = 1.0 - std::pow(beta1, t);
  const double bias2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto& m = states[i].m;
    auto& v = states[i].v;
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), states_(params_.size()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) {
    if (p.has_grad())
      grads.emplace_back(p.grad().begin(), p.grad().end());
    else
      grads.emplace_back(p.size(), 0.0);
  }
  adam_update(params_, grads, states_, step_, lr_, beta1_, beta2_, eps_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- metrics --------------------------------------------------------------

std::string to_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss_c"] = m.loss_c;
  j["loss_d"] = m.loss_d;
  j["loss_e"] = m.loss_e;
  j["loss_uvt"] = m.loss_uvt;
  j["loss_lvt"] = m.loss_lvt;
  j["disc_accuracy"] = m.disc_accuracy;
  if (!m.domain_accuracy.empty()) j["domain_accuracy"] = m.domain_accuracy;
  return j.dump();
}

StepRngs StepRngs::from_seed(std::uint64_t seed) {
  Rng root(seed);
  StepRngs r{root.split(), root.split(), root.split()};
  return r;
}

Optimizers Optimizers::for_model(const RcaModel& model, const TrainConfig& cfg) {
  return Optimizers{
      Adam(model.discriminator_parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      Adam(model.min_player_parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)};
}

// ---- pseudo-labels and targets --------------------------------------------

int pseudo_label(const Tensor& probs_row) {
  if (probs_row.rows() != 1 || probs_row.cols() != kNumClasses)
    throw DimensionError("pseudo_label: expected a [1x2] row, got " + probs_row.shape_string());
  return probs_row.at(0, 1) > probs_row.at(0, 0) ? kNegative : kPositive;
}

std::vector<int> pseudo_labels(const RcaModel& model, const Tensor& x, std::size_t domain) {
  ad::NoGrad off;
  const Tensor probs = model.classify(x, domain);
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = probs.at(i, 1) > probs.at(i, 0) ? kNegative : kPositive;
  return out;
}

std::vector<int> adversary_targets(const ModelConfig& cfg, std::size_t domain, std::span<const int> sentiments) {
  std::vector<int> out;
  out.reserve(sentiments.size());
  const int m = static_cast<int>(cfg.num_domains);
  const int d = static_cast<int>(domain);
  for (int s : sentiments) {
    out.push_back(cfg.alignment == Alignment::joint ? build_joint_label(d, s, m).index
                                                     : build_joint_label(d, kPositive, m).index);
  }
  return out;
}

// ---- train step -----------------------------------------------------------

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  if (b.rows() == 0) return a;
  if (a.cols() != b.cols()) throw DimensionError("stack_rows: " + a.shape_string() + " vs " + b.shape_string());
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return Tensor(a.rows() + b.rows(), a.cols(), std::move(v));
}

void require_finite(double v, const char* term, std::size_t domain_count) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite " << term << " (" << v << ") in a step over " << domain_count << " domains";
    throw NumericError(os.str());
  }
}

// Mean of two batch means weighted by their sizes: the expectation over
// the union of labeled and unlabeled samples.
Tensor pooled_mean(const Tensor& mean_a, std::size_t n_a, const Tensor& mean_b, std::size_t n_b) {
  const double total = static_cast<double>(n_a + n_b);
  return ad::add(ad::scale(mean_a, static_cast<double>(n_a) / total),
                 ad::scale(mean_b, static_cast<double>(n_b) / total));
}

}  // namespace

PreparedStep prepare_step(const RcaModel& model, std::span<const DomainBatch> batches) {
  const ModelConfig& mc = model.config();
  const std::size_t num_domains = mc.num_domains;
  if (batches.size() != num_domains) {
    std::ostringstream os;
    os << "train_step: " << batches.size() << " batches for " << num_domains << " domains";
    throw SchedulingError(os.str());
  }
  for (std::size_t d = 0; d < num_domains; ++d) {
    const auto& b = batches[d];
    if (b.labeled_x.rows() == 0) throw SchedulingError("train_step: empty labeled batch for domain " + std::to_string(d));
    if (b.labels.size() != b.labeled_x.rows()) throw SchedulingError("train_step: label count does not match batch");
    if (b.unlabeled_x.rows() > 0 && b.unlabeled_x.cols() != b.labeled_x.cols())
      throw DimensionError("train_step: unlabeled batch width differs from labeled batch");
  }
  PreparedStep prep;
  prep.targets.resize(num_domains);
  prep.adversary_inputs.resize(num_domains);
  for (std::size_t d = 0; d < num_domains; ++d) {
    std::vector<int> sentiments = batches[d].labels;
    if (batches[d].unlabeled_x.rows() > 0) {
      const auto pl = pseudo_labels(model, batches[d].unlabeled_x, d);
      sentiments.insert(sentiments.end(), pl.begin(), pl.end());
    }
    prep.targets[d] = adversary_targets(mc, d, sentiments);
    prep.adversary_inputs[d] = stack_rows(batches[d].labeled_x, batches[d].unlabeled_x);
  }
  return prep;
}

void discriminator_phase(RcaModel& model, const PreparedStep& prep, Optimizers& opt, StepRngs& rngs,
                         StepMetrics& metrics) {
  const std::size_t num_domains = model.config().num_domains;
  opt.discriminator.zero_grad();
  ad::Tape tape;
  Tensor total = Tensor::scalar(0.0);
  std::size_t correct = 0, seen = 0;
  for (std::size_t d = 0; d < num_domains; ++d) {
    Tensor features;
    {
      ad::NoGrad off;
      features = model.shared_features(prep.adversary_inputs[d], Mode::train, rngs.adversary);
    }
    const Tensor dprobs = ad::softmax(model.discriminator_logits(features, Mode::train, rngs.adversary));
    total = ad::add(total, joint_adversarial_loss(dprobs, prep.targets[d]));
    for (std::size_t i = 0; i < dprobs.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < dprobs.cols(); ++j)
        if (dprobs.at(i, j) > dprobs.at(i, best)) best = j;
      correct += best == static_cast<std::size_t>(prep.targets[d][i]) ? 1 : 0;
      ++seen;
    }
  }
  metrics.loss_d = total.item();
  metrics.disc_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  require_finite(metrics.loss_d, "L_d (discriminator phase)", num_domains);
  tape.backward(total);
  opt.discriminator.step();
}

void min_player_phase(RcaModel& model, std::span<const DomainBatch> batches, const PreparedStep& prep,
                      const TrainConfig& cfg, Optimizers& opt, StepRngs& rngs, StepMetrics& metrics) {
  const std::size_t num_domains = model.config().num_domains;
  const LossWeights& w = cfg.weights;
  const auto& targets = prep.targets;
  opt.min_players.zero_grad();
  std::vector<Tensor> r_unlabeled(num_domains), r_labeled(num_domains);
  for (std::size_t d = 0; d < num_domains; ++d) {
    if (w.lambda_uvt > 0.0 && batches[d].unlabeled_x.rows() > 0)
      r_unlabeled[d] = vat_perturbation(model, batches[d].unlabeled_x, d, cfg.vat, rngs.vat);
    if (w.lambda_lvt > 0.0) r_labeled[d] = vat_perturbation(model, batches[d].labeled_x, d, cfg.vat, rngs.vat);
  }
  {
    ad::Tape tape;
    Tensor loss_c = Tensor::scalar(0.0), loss_d = Tensor::scalar(0.0), loss_e = Tensor::scalar(0.0);
    Tensor loss_uvt = Tensor::scalar(0.0), loss_lvt = Tensor::scalar(0.0);
    for (std::size_t d = 0; d < num_domains; ++d) {
      const auto& b = batches[d];
      const bool has_unlabeled = b.unlabeled_x.rows() > 0;
      const Tensor s_l = model.shared_features(b.labeled_x, Mode::train, rngs.dropout);
      const Tensor p_l = model.private_features(d, b.labeled_x, Mode::train, rngs.dropout);
      const Tensor probs_l = ad::softmax(model.classifier_logits(s_l, p_l, Mode::train, rngs.dropout));
      loss_c = ad::add(loss_c, classification_loss(probs_l, b.labels));

      Tensor s_u;
      if (has_unlabeled && (w.lambda_d > 0.0 || w.lambda_uvt > 0.0))
        s_u = model.shared_features(b.unlabeled_x, Mode::train, rngs.dropout);
      if (w.lambda_uvt > 0.0 && has_unlabeled) {
        const Tensor p_u = model.private_features(d, b.unlabeled_x, Mode::train, rngs.dropout);
        const Tensor probs_u = ad::softmax(model.classifier_logits(s_u, p_u, Mode::train, rngs.dropout));
        loss_e = ad::add(loss_e, entropy_loss(probs_u));
        loss_uvt = ad::add(loss_uvt, vat_loss(model, b.unlabeled_x, d, r_unlabeled[d]));
      }
      if (w.lambda_lvt > 0.0) loss_lvt = ad::add(loss_lvt, vat_loss(model, b.labeled_x, d, r_labeled[d]));
      if (w.lambda_d > 0.0) {
        const std::size_t n_l = b.labeled_x.rows();
        const std::span<const int> t_l(targets[d].data(), n_l);
        const Tensor dl = joint_adversarial_loss(
            ad::softmax(model.discriminator_logits(s_l, Mode::train, rngs.dropout)), t_l);
        if (has_unlabeled) {
          const std::size_t n_u = b.unlabeled_x.rows();
          const std::span<const int> t_u(targets[d].data() + n_l, n_u);
          const Tensor du = joint_adversarial_loss(
              ad::softmax(model.discriminator_logits(s_u, Mode::train, rngs.dropout)), t_u);
          loss_d = ad::add(loss_d, pooled_mean(dl, n_l, du, n_u));
        } else {
          loss_d = ad::add(loss_d, dl);
        }
      }
    }
    metrics.loss_c = loss_c.item();
    metrics.loss_e = loss_e.item();
    metrics.loss_uvt = loss_uvt.item();
    metrics.loss_lvt = loss_lvt.item();
    require_finite(metrics.loss_c, "L_c", num_domains);
    require_finite(loss_d.item(), "L_d (feature phase)", num_domains);
    require_finite(metrics.loss_e, "L_e", num_domains);
    require_finite(metrics.loss_uvt, "L_uvt", num_domains);
    require_finite(metrics.loss_lvt, "L_lvt", num_domains);

    Tensor objective = loss_c;
    if (w.lambda_d > 0.0) objective = ad::sub(objective, ad::scale(loss_d, w.lambda_d));
    if (w.lambda_uvt > 0.0) objective = ad::add(objective, ad::scale(ad::add(loss_e, loss_uvt), w.lambda_uvt));
    if (w.lambda_lvt > 0.0) objective = ad::add(objective, ad::scale(loss_lvt, w.lambda_lvt));
    tape.backward(objective);
  }
  opt.min_players.step();
  // The adversary picked up gradients through L_d above; they are not used.
  opt.discriminator.zero_grad();
}

StepMetrics train_step(RcaModel& model, std::span<const DomainBatch> batches, const TrainConfig& cfg,
                       Optimizers& opt, StepRngs& rngs) {
  const PreparedStep prep = prepare_step(model, batches);
  StepMetrics metrics;
  discriminator_phase(model, prep, opt, rngs, metrics);
  min_player_phase(model, batches, prep, cfg, opt, rngs, metrics);
  return metrics;
}

// ---- evaluation -----------------------------------------------------------

EvalReport evaluate(const std::function<int(std::size_t, const LabeledExample&)>& predict,
                    std::span<const std::vector<LabeledExample>> test_sets) {
  if (test_sets.empty()) throw UsageError("evaluate: no domains");
  EvalReport report;
  for (std::size_t d = 0; d < test_sets.size(); ++d) {
    if (test_sets[d].empty()) throw UsageError("evaluate: empty test fold for domain " + std::to_string(d));
    std::size_t correct = 0;
    for (const auto& ex : test_sets[d]) correct += predict(d, ex) == ex.label ? 1 : 0;
    report.per_domain.push_back(static_cast<double>(correct) / static_cast<double>(test_sets[d].size()));
  }
  report.average = std::accumulate(report.per_domain.begin(), report.per_domain.end(), 0.0) /
                   static_cast<double>(report.per_domain.size());
  return report;
}

EvalReport evaluate(const RcaModel& model, std::span<const std::vector<LabeledExample>> test_sets) {
  const auto& mc = model.config();
  if (test_sets.size() != mc.num_domains) {
    std::ostringstream os;
    os << "evaluate: " << test_sets.size() << " test sets for " << mc.num_domains << " domains";
    throw UsageError(os.str());
  }
  // Predict in chunks, then look answers up by address.
  constexpr std::size_t kChunk = 256;
  std::vector<std::vector<int>> predictions(test_sets.size());
  ad::NoGrad off;
  for (std::size_t d = 0; d < test_sets.size(); ++d) {
    const auto& set = test_sets[d];
    for (std::size_t start = 0; start < set.size(); start += kChunk) {
      const std::size_t len = std::min(kChunk, set.size() - start);
      const Tensor x = to_dense(std::span(set).subspan(start, len), mc.input_dim, mc.log1p_inputs);
      const auto labels = pseudo_labels(model, x, d);
      predictions[d].insert(predictions[d].end(), labels.begin(), labels.end());
    }
  }
  return evaluate(
      [&](std::size_t d, const LabeledExample& ex) {
        return predictions[d][static_cast<std::size_t>(&ex - test_sets[d].data())];
      },
      test_sets);
}

// ---- fit ------------------------------------------------------------------

FitResult fit(std::span<const DomainDataset> datasets, ModelConfig model_cfg, const TrainConfig& cfg,
              const FitOptions& options) {
  cfg.validate();
  if (datasets.empty()) throw ConfigError("fit: at least one domain is required");
  for (const auto& ds : datasets) {
    if (ds.labeled.empty()) throw ConfigError("fit: domain '" + ds.name + "' has no labeled samples");
    if (ds.input_dim != datasets.front().input_dim) throw ConfigError("fit: domains disagree on input_dim");
  }
  model_cfg.num_domains = datasets.size();
  model_cfg.input_dim = datasets.front().input_dim;
  const std::size_t num_domains = datasets.size();

  Rng root(cfg.seed);
  Rng init_rng = root.split();
  Rng batch_rng = root.split();
  StepRngs rngs = StepRngs::from_seed(root.next());

  FitResult result{RcaModel::init(model_cfg, init_rng), {}};
  RcaModel& model = result.model;
  Optimizers opt = Optimizers::for_model(model, cfg);

  std::size_t largest = 0;
  for (const auto& ds : datasets) largest = std::max(largest, ds.labeled.size());
  const std::size_t steps_per_epoch = (largest + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<std::vector<std::size_t>> order(num_domains);
  std::vector<std::size_t> cursor(num_domains, 0);
  for (std::size_t d = 0; d < num_domains; ++d) {
    order[d].resize(datasets[d].labeled.size());
    std::iota(order[d].begin(), order[d].end(), 0);
    batch_rng.shuffle(order[d]);
  }

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<DomainBatch> batches(num_domains);
      for (std::size_t d = 0; d < num_domains; ++d) {
        const auto& ds = datasets[d];
        const std::size_t take = std::min(cfg.batch_size, ds.labeled.size());
        std::vector<const SparseVector*> rows;
        for (std::size_t i = 0; i < take; ++i) {
          if (cursor[d] == order[d].size()) {
            batch_rng.shuffle(order[d]);
            cursor[d] = 0;
          }
          const auto& ex = ds.labeled[order[d][cursor[d]++]];
          rows.push_back(&ex.features);
          batches[d].labels.push_back(ex.label);
        }
        batches[d].labeled_x = to_dense(rows, ds.input_dim, model_cfg.log1p_inputs);
        rows.clear();
        if (!ds.unlabeled.empty()) {
          for (std::size_t i = 0; i < cfg.batch_size; ++i) rows.push_back(&ds.unlabeled[batch_rng.below(ds.unlabeled.size())]);
        }
        batches[d].unlabeled_x = rows.empty() ? Tensor(0, ds.input_dim) : to_dense(rows, ds.input_dim, model_cfg.log1p_inputs);
      }
      StepMetrics m = train_step(model, batches, cfg, opt, rngs);
      m.step = ++step;
      m.epoch = epoch;
      if (s + 1 == steps_per_epoch && !options.held_out.empty()) m.domain_accuracy = evaluate(model, options.held_out).per_domain;
      if (options.on_step) options.on_step(m);
      result.history.push_back(std::move(m));
    }
    if (options.on_epoch) options.on_epoch(epoch, model);
  }
  return result;
}

}  // namespace rca
