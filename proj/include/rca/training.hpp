#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rca/data.hpp"
#include "rca/losses.hpp"
#include "rca/model.hpp"
#include "rca/rng.hpp"
#include "rca/vat.hpp"

namespace rca {

struct TrainConfig {
  LossWeights weights;
  VatConfig vat;
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Write a checkpoint every N epochs when fitting through the CLI; 0 = only at the end.
  std::size_t checkpoint_every = 0;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// Bias-corrected Adam over a fixed list of parameters. Each parameter is
/// read from and written to in place; its grad buffer supplies the gradient
/// (a parameter without a gradient is treated as having a zero gradient).
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  const std::vector<AdamState>& states() const { return states_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t step_ = 0;
};

/// One Adam update of `params` from explicit gradients. Throws UsageError
/// when the lists disagree in length or shape.
void adam_update(std::span<Tensor> params, std::span<const std::vector<double>> grads, std::span<AdamState> states,
                 std::uint64_t& step, double lr, double beta1, double beta2, double eps);

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss_c = 0.0;
  double loss_d = 0.0;  // adversary loss seen in the discriminator phase
  double loss_e = 0.0;
  double loss_uvt = 0.0;
  double loss_lvt = 0.0;
  double disc_accuracy = 0.0;
  /// Held-out accuracy per domain; filled on the last step of an epoch
  /// when held-out data is available, empty otherwise.
  std::vector<double> domain_accuracy;

  bool operator==(const StepMetrics&) const = default;
};

std::string to_json_line(const StepMetrics& m);

struct DomainBatch {
  Tensor labeled_x;
  std::vector<int> labels;
  Tensor unlabeled_x;  // may have zero rows
};

/// Independent random streams, one per consumer, so switching a loss term
/// on or off does not shift the dropout masks of the others.
struct StepRngs {
  Rng dropout;    // min-player phase
  Rng adversary;  // discriminator phase
  Rng vat;        // perturbation directions

  static StepRngs from_seed(std::uint64_t seed);
};

struct Optimizers {
  Adam discriminator;
  Adam min_players;

  static Optimizers for_model(const RcaModel& model, const TrainConfig& cfg);
};

/// argmax of the eval-mode classifier, ties to class 0.
int pseudo_label(const Tensor& probs_row);
std::vector<int> pseudo_labels(const RcaModel& model, const Tensor& x, std::size_t domain);

/// Adversary targets for a batch of one domain: joint (sentiment, domain)
/// indices, or the bare domain index for marginal alignment.
std::vector<int> adversary_targets(const ModelConfig& cfg, std::size_t domain, std::span<const int> sentiments);

/// Adversary targets and inputs of one step. Pseudo-labels come from the
/// eval-mode classifier before either phase runs.
struct PreparedStep {
  std::vector<std::vector<int>> targets;
  std::vector<Tensor> adversary_inputs;  // labeled rows, then unlabeled rows
};
PreparedStep prepare_step(const RcaModel& model, std::span<const DomainBatch> batches);
/// Updates the adversary only.
void discriminator_phase(RcaModel& model, const PreparedStep& prep, Optimizers& opt, StepRngs& rngs,
                         StepMetrics& metrics);
/// Updates F_s, every F_d^i and C only.
void min_player_phase(RcaModel& model, std::span<const DomainBatch> batches, const PreparedStep& prep,
                      const TrainConfig& cfg, Optimizers& opt, StepRngs& rngs, StepMetrics& metrics);

/// One alternating update: prepare_step, discriminator_phase, min_player_phase.
/// Phase A: the adversary minimises L_d on shared features computed
/// without gradient (labeled batches with true labels, unlabeled batches
/// with pseudo-labels fixed at the start of the step).
/// Phase B: F_s, every F_d^i and C minimise
///   L_c - lambda_d L_d + lambda_uvt (L_e + L_uvt) + lambda_lvt L_lvt.
/// Terms whose weight is zero are skipped and logged as 0.
StepMetrics train_step(RcaModel& model, std::span<const DomainBatch> batches, const TrainConfig& cfg,
                       Optimizers& opt, StepRngs& rngs);

struct EvalReport {
  std::vector<double> per_domain;
  double average = 0.0;
};

/// Eval-mode accuracy per domain and the unweighted mean over domains.
EvalReport evaluate(const RcaModel& model, std::span<const std::vector<LabeledExample>> test_sets);
EvalReport evaluate(const std::function<int(std::size_t domain, const LabeledExample&)>& predict,
                    std::span<const std::vector<LabeledExample>> test_sets);

struct FitResult {
  RcaModel model;
  std::vector<StepMetrics> history;
};

struct FitOptions {
  /// Per-domain held-out sets used for the epoch-end accuracy entries.
  std::vector<std::vector<LabeledExample>> held_out;
  /// Called after every epoch with the epoch index (1-based) and the model.
  std::function<void(std::size_t, const RcaModel&)> on_epoch;
  /// Called with every step's metrics as soon as they exist.
  std::function<void(const StepMetrics&)> on_step;
};

/// Full training run. One epoch is ceil(max_i l_i / batch_size) steps; each
/// domain walks its own shuffled labeled order and reshuffles when it runs
/// out, unlabeled batches are drawn uniformly with replacement. The model
/// config's num_domains and input_dim are taken from the datasets.
FitResult fit(std::span<const DomainDataset> datasets, ModelConfig model_cfg, const TrainConfig& cfg,
              const FitOptions& options = {});

}  // namespace rca
