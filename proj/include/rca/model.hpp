#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rca/autodiff.hpp"
#include "rca/rng.hpp"

namespace rca {

using ad::Tensor;

enum class Mode { train, eval };

/// Which labels the adversary sees: (sentiment, domain) pairs for RCA, or
/// domain only for the marginal-alignment ablation.
enum class Alignment { joint, marginal };

std::string to_string(Alignment a);
Alignment parse_alignment(const std::string& s);

inline constexpr std::size_t kNumClasses = 2;

struct ModelConfig {
  std::size_t num_domains = 1;
  std::size_t input_dim = 5000;
  std::size_t shared_dim = 128;
  std::size_t private_dim = 64;
  std::vector<std::size_t> extractor_hidden{1000, 500};
  std::size_t classifier_hidden = 128 + 64;
  std::size_t discriminator_hidden = 128;
  double dropout_rate = 0.4;
  Alignment alignment = Alignment::joint;
  /// Apply log(1 + x) to raw feature values before the extractors.
  bool log1p_inputs = false;

  /// 2M for joint alignment, M for the marginal ablation.
  std::size_t discriminator_outputs() const {
    return alignment == Alignment::joint ? 2 * num_domains : num_domains;
  }
  std::size_t classifier_input() const { return shared_dim + private_dim; }

  /// Throws ConfigError on zero widths or a dropout rate outside [0, 1).
  void validate() const;
};

/// Fully connected layer, y = x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor forward(const Tensor& x) const;
};

/// Linear layers with ReLU and dropout after every hidden layer. The last
/// layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, double dropout_rate, Rng& rng);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) const;

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::size_t input_width() const;
  std::size_t output_width() const;

  void collect(std::vector<Tensor>& out) const;
  Mlp clone() const;

 private:
  std::vector<Linear> layers_;
  double dropout_rate_ = 0.0;
};

struct NamedParameter {
  std::string name;  // component/layer/kind, e.g. "private.1/0/weight"
  Tensor tensor;
};

/// Shared extractor, one private extractor per domain, the sentiment
/// classifier over [shared, private] and the adversary over shared only.
/// Parameters are shared handles, so the model is move-only; use clone().
class RcaModel {
 public:
  /// Glorot-uniform weights, zero biases. Draw order is shared extractor,
  /// private extractors, classifier, discriminator; two models built from
  /// the same seed agree on every component except a discriminator of a
  /// different output width.
  static RcaModel init(const ModelConfig& cfg, Rng& rng);

  RcaModel(RcaModel&&) = default;
  RcaModel& operator=(RcaModel&&) = default;
  RcaModel(const RcaModel&) = delete;
  RcaModel& operator=(const RcaModel&) = delete;

  RcaModel clone() const;

  const ModelConfig& config() const { return cfg_; }

  Tensor shared_features(const Tensor& x, Mode mode, Rng& rng) const;
  Tensor private_features(std::size_t domain, const Tensor& x, Mode mode, Rng& rng) const;
  Tensor classifier_logits(const Tensor& shared, const Tensor& priv, Mode mode, Rng& rng) const;
  Tensor discriminator_logits(const Tensor& shared, Mode mode, Rng& rng) const;

  /// Sentiment distribution [n x 2] for inputs of `domain`.
  Tensor classify(const Tensor& x, std::size_t domain, Mode mode, Rng& rng) const;
  /// Eval-mode convenience overload; draws no random numbers.
  Tensor classify(const Tensor& x, std::size_t domain) const;
  /// Adversary distribution [n x discriminator_outputs()].
  Tensor discriminate(const Tensor& x, Mode mode, Rng& rng) const;
  Tensor discriminate(const Tensor& x) const;

  std::vector<NamedParameter> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// F_s, every F_d^i and C: the players minimising the objective.
  std::vector<Tensor> min_player_parameters() const;
  std::vector<Tensor> discriminator_parameters() const;
  std::vector<Tensor> private_parameters(std::size_t domain) const;

  Mlp& shared_extractor() { return shared_; }
  Mlp& private_extractor(std::size_t domain) { return private_.at(domain); }
  Mlp& classifier() { return classifier_; }
  Mlp& discriminator() { return discriminator_; }

  void zero_grad() const;

 private:
  RcaModel() = default;
  void check_domain(std::size_t domain) const;

  ModelConfig cfg_;
  Mlp shared_;
  std::vector<Mlp> private_;
  Mlp classifier_;
  Mlp discriminator_;
};

/// FNV-1a over the raw bytes of the given tensors' values.
std::uint64_t hash_parameters(const std::vector<Tensor>& params);

/// Binary checkpoint: magic, model config as key/value text, then every
/// named parameter with its shape and little-endian float64 data.
void save_checkpoint(const RcaModel& model, const std::string& path);
RcaModel load_checkpoint(const std::string& path);

}  // namespace rca
