#include "rca/losses.hpp"

#include <cmath>
#include <sstream>

#include "rca/error.hpp"

namespace rca {

JointLabel build_joint_label(int domain, int sentiment, int num_domains) {
  if (num_domains < 1 || domain < 0 || domain >= num_domains || (sentiment != kPositive && sentiment != kNegative)) {
    std::ostringstream os;
    os << "build_joint_label: invalid (domain=" << domain << ", sentiment=" << sentiment
       << ", num_domains=" << num_domains << ")";
    throw UsageError(os.str());
  }
  return JointLabel{sentiment == kPositive ? domain : num_domains + domain};
}

void LossWeights::validate() const {
  for (double w : {lambda_d, lambda_uvt, lambda_lvt})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and nonnegative");
}

Tensor classification_loss(const Tensor& probs, std::span<const int> labels) {
  return ad::scale(ad::mean(ad::log_clamped(ad::gather(probs, labels), kLogFloor)), -1.0);
}

Tensor joint_adversarial_loss(const Tensor& dprobs, std::span<const int> targets) {
  return classification_loss(dprobs, targets);
}

Tensor joint_adversarial_loss(const Tensor& dprobs, std::span<const JointLabel> targets) {
  std::vector<int> idx;
  idx.reserve(targets.size());
  for (const auto& t : targets) idx.push_back(t.index);
  return classification_loss(dprobs, idx);
}

Tensor entropy_loss(const Tensor& probs) {
  if (probs.rows() == 0) throw UsageError("entropy_loss: empty batch");
  const Tensor plogp = ad::mul(probs, ad::log_clamped(probs, kLogFloor));
  return ad::scale(ad::sum(plogp), -1.0 / static_cast<double>(probs.rows()));
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw DimensionError("kl_divergence: shapes " + p.shape_string() + " and " + q.shape_string());
  if (p.rows() == 0) throw UsageError("kl_divergence: empty batch");
  const Tensor diff = ad::sub(ad::log_clamped(p, kLogFloor), ad::log_clamped(q, kLogFloor));
  return ad::scale(ad::sum(ad::mul(p, diff)), 1.0 / static_cast<double>(p.rows()));
}

}  // namespace rca
