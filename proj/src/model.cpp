#include "rca/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rca/config.hpp"
#include "rca/error.hpp"

namespace rca {

std::string to_string(Alignment a) { return a == Alignment::joint ? "joint" : "marginal"; }

Alignment parse_alignment(const std::string& s) {
  if (s == "joint") return Alignment::joint;
  if (s == "marginal") return Alignment::marginal;
  throw ConfigError("alignment must be 'joint' or 'marginal', got '" + s + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model: ") + name + " must be positive");
  };
  positive(num_domains, "num_domains");
  positive(input_dim, "input_dim");
  positive(shared_dim, "shared_dim");
  positive(private_dim, "private_dim");
  positive(classifier_hidden, "classifier_hidden");
  positive(discriminator_hidden, "discriminator_hidden");
  for (std::size_t w : extractor_hidden) positive(w, "extractor_hidden entry");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    std::ostringstream os;
    os << "model: dropout must be in [0, 1), got " << dropout_rate;
    throw ConfigError(os.str());
  }
}

Tensor Linear::forward(const Tensor& x) const { return ad::add_row(ad::matmul(x, weight), bias); }

Mlp::Mlp(const std::vector<std::size_t>& widths, double dropout_rate, Rng& rng) : dropout_rate_(dropout_rate) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w(in, out, 0.0, true);
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
    layers_.push_back(Linear{w, Tensor(1, out, 0.0, true)});
  }
}

Tensor Mlp::forward(const Tensor& x, Mode mode, Rng& rng) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) {
      h = ad::relu(h);
      h = ad::dropout(h, dropout_rate_, rng, mode == Mode::train);
    }
  }
  return h;
}

std::size_t Mlp::input_width() const { return layers_.empty() ? 0 : layers_.front().weight.rows(); }

std::size_t Mlp::output_width() const { return layers_.empty() ? 0 : layers_.back().weight.cols(); }

void Mlp::collect(std::vector<Tensor>& out) const {
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
}

Mlp Mlp::clone() const {
  Mlp m;
  m.dropout_rate_ = dropout_rate_;
  for (const auto& l : layers_) m.layers_.push_back(Linear{l.weight.clone(), l.bias.clone()});
  return m;
}

namespace {

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

RcaModel RcaModel::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  RcaModel m;
  m.cfg_ = cfg;
  m.shared_ = Mlp(widths(cfg.input_dim, cfg.extractor_hidden, cfg.shared_dim), cfg.dropout_rate, rng);
  for (std::size_t i = 0; i < cfg.num_domains; ++i)
    m.private_.emplace_back(widths(cfg.input_dim, cfg.extractor_hidden, cfg.private_dim), cfg.dropout_rate, rng);
  m.classifier_ = Mlp({cfg.classifier_input(), cfg.classifier_hidden, kNumClasses}, cfg.dropout_rate, rng);
  m.discriminator_ =
      Mlp({cfg.shared_dim, cfg.discriminator_hidden, cfg.discriminator_outputs()}, cfg.dropout_rate, rng);
  return m;
}

RcaModel RcaModel::clone() const {
  RcaModel m;
  m.cfg_ = cfg_;
  m.shared_ = shared_.clone();
  for (const auto& p : private_) m.private_.push_back(p.clone());
  m.classifier_ = classifier_.clone();
  m.discriminator_ = discriminator_.clone();
  return m;
}

void RcaModel::check_domain(std::size_t domain) const {
  if (domain >= cfg_.num_domains) {
    std::ostringstream os;
    os << "domain " << domain << " out of range for a model with " << cfg_.num_domains << " domains";
    throw UsageError(os.str());
  }
}

Tensor RcaModel::shared_features(const Tensor& x, Mode mode, Rng& rng) const { return shared_.forward(x, mode, rng); }

Tensor RcaModel::private_features(std::size_t domain, const Tensor& x, Mode mode, Rng& rng) const {
  check_domain(domain);
  return private_[domain].forward(x, mode, rng);
}

Tensor RcaModel::classifier_logits(const Tensor& shared, const Tensor& priv, Mode mode, Rng& rng) const {
  return classifier_.forward(ad::concat(shared, priv), mode, rng);
}

Tensor RcaModel::discriminator_logits(const Tensor& shared, Mode mode, Rng& rng) const {
  return discriminator_.forward(shared, mode, rng);
}

Tensor RcaModel::classify(const Tensor& x, std::size_t domain, Mode mode, Rng& rng) const {
  check_domain(domain);
  const Tensor s = shared_features(x, mode, rng);
  const Tensor p = private_features(domain, x, mode, rng);
  return ad::softmax(classifier_logits(s, p, mode, rng));
}

Tensor RcaModel::classify(const Tensor& x, std::size_t domain) const {
  Rng unused;
  return classify(x, domain, Mode::eval, unused);
}

Tensor RcaModel::discriminate(const Tensor& x, Mode mode, Rng& rng) const {
  return ad::softmax(discriminator_logits(shared_features(x, mode, rng), mode, rng));
}

Tensor RcaModel::discriminate(const Tensor& x) const {
  Rng unused;
  return discriminate(x, Mode::eval, unused);
}

std::vector<NamedParameter> RcaModel::named_parameters() const {
  std::vector<NamedParameter> out;
  auto add = [&out](const std::string& component, const Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
      out.push_back({component + "/" + std::to_string(i) + "/weight", mlp.layers()[i].weight});
      out.push_back({component + "/" + std::to_string(i) + "/bias", mlp.layers()[i].bias});
    }
  };
  add("shared", shared_);
  for (std::size_t d = 0; d < private_.size(); ++d) add("private." + std::to_string(d), private_[d]);
  add("classifier", classifier_);
  add("discriminator", discriminator_);
  return out;
}

std::vector<Tensor> RcaModel::parameters() const {
  std::vector<Tensor> out = min_player_parameters();
  discriminator_.collect(out);
  return out;
}

std::vector<Tensor> RcaModel::min_player_parameters() const {
  std::vector<Tensor> out;
  shared_.collect(out);
  for (const auto& p : private_) p.collect(out);
  classifier_.collect(out);
  return out;
}

std::vector<Tensor> RcaModel::discriminator_parameters() const {
  std::vector<Tensor> out;
  discriminator_.collect(out);
  return out;
}

std::vector<Tensor> RcaModel::private_parameters(std::size_t domain) const {
  check_domain(domain);
  std::vector<Tensor> out;
  private_[domain].collect(out);
  return out;
}

void RcaModel::zero_grad() const {
  for (auto t : parameters()) t.zero_grad();
}

std::uint64_t hash_parameters(const std::vector<Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : params) {
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'C', 'A', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  os.write(buf, 8);
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw DataError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& path) {
  const std::uint64_t n = get_u64(is, path);
  if (n > (1ULL << 24)) throw DataError(path + ": implausible string length in checkpoint");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError(path + ": truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const RcaModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_string(os, model_config_to_text(model.config()));
  const auto params = model.named_parameters();
  put_u64(os, params.size());
  for (const auto& p : params) {
    put_string(os, p.name);
    put_u64(os, p.tensor.rows());
    put_u64(os, p.tensor.cols());
    for (double v : p.tensor.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw DataError("write failed for " + path);
}

RcaModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError(path + ": not an RCA checkpoint");
  const ModelConfig cfg = model_config_from_text(get_string(is, path), path);
  Rng rng(0);
  RcaModel model = RcaModel::init(cfg, rng);
  auto params = model.named_parameters();
  const std::uint64_t count = get_u64(is, path);
  if (count != params.size()) throw DataError(path + ": parameter count does not match the stored config");
  for (auto& p : params) {
    const std::string name = get_string(is, path);
    const std::uint64_t rows = get_u64(is, path), cols = get_u64(is, path);
    if (name != p.name || rows != p.tensor.rows() || cols != p.tensor.cols())
      throw DataError(path + ": unexpected parameter " + name + " (expected " + p.name + " " +
                      p.tensor.shape_string() + ")");
    for (double& v : p.tensor.data()) v = std::bit_cast<double>(get_u64(is, path));
  }
  return model;
}

}  // namespace rca
