#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rca/autodiff.hpp"
#include "rca/sentiment.hpp"

namespace rca {

using ad::Tensor;

/// Floor applied to every probability before taking its log.
inline constexpr double kLogFloor = 1e-12;

/// Index of a (sentiment, domain) pair among the adversary's 2M outputs:
/// positives occupy [0, M), negatives [M, 2M).
struct JointLabel {
  int index = 0;
};

JointLabel build_joint_label(int domain, int sentiment, int num_domains);

struct LossWeights {
  double lambda_d = 0.5;
  double lambda_uvt = 1.0;
  double lambda_lvt = 0.01;

  void validate() const;
};

/// Mean over the batch of -log p(label).
Tensor classification_loss(const Tensor& probs, std::span<const int> labels);

/// Mean cross-entropy of the adversary's distribution against joint labels
/// (or plain domain labels for the marginal ablation).
Tensor joint_adversarial_loss(const Tensor& dprobs, std::span<const int> targets);
Tensor joint_adversarial_loss(const Tensor& dprobs, std::span<const JointLabel> targets);

/// Mean over the batch of -p^T log p.
Tensor entropy_loss(const Tensor& probs);

/// Mean over the batch of sum_j p_j (log p_j - log q_j).
Tensor kl_divergence(const Tensor& p, const Tensor& q);

}  // namespace rca
