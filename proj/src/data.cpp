#include "rca/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rca/error.hpp"
#include "rca/rng.hpp"
#include "rca/sentiment.hpp"

namespace fs = std::filesystem;

namespace rca {

// ---- text format ----------------------------------------------------------

SparseVector parse_features(std::string_view text, std::size_t input_dim, const std::string& where) {
  SparseVector out;
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> DataError { return DataError(where + ": " + msg); };
  while (pos < text.size()) {
    if (text[pos] == ' ') {
      ++pos;
      continue;
    }
    std::size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view token = text.substr(pos, end - pos);
    pos = end;

    const std::size_t colon = token.find(':');
    if (colon == std::string_view::npos) throw fail("expected <index>:<value>, got '" + std::string(token) + "'");
    const std::string_view idx_text = token.substr(0, colon);
    const std::string_view val_text = token.substr(colon + 1);

    std::uint64_t idx = 0;
    auto [ip, iec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), idx);
    if (idx_text.empty() || iec != std::errc() || ip != idx_text.data() + idx_text.size())
      throw fail("bad feature index '" + std::string(idx_text) + "'");
    if (idx >= input_dim) {
      std::ostringstream os;
      os << "feature index " << idx << " >= input dimension " << input_dim;
      throw fail(os.str());
    }
    if (!out.empty() && idx <= out.back().index) throw fail("feature indices must be strictly increasing");

    double value = 0.0;
    auto [vp, vec] = std::from_chars(val_text.data(), val_text.data() + val_text.size(), value);
    if (val_text.empty() || vec != std::errc() || vp != val_text.data() + val_text.size())
      throw fail("bad feature value '" + std::string(val_text) + "'");
    if (!std::isfinite(value) || value < 0.0) throw fail("feature value must be finite and >= 0");
    out.push_back(Feature{static_cast<std::uint32_t>(idx), value});
  }
  return out;
}

LabeledExample parse_labeled_line(std::string_view line, std::size_t input_dim, const std::string& where) {
  const std::size_t tab = line.find('\t');
  const std::string_view label_text = line.substr(0, tab);
  if (label_text != "0" && label_text != "1")
    throw DataError(where + ": label must be 0 or 1, got '" + std::string(label_text) + "'");
  LabeledExample ex;
  ex.label = label_text == "0" ? 0 : 1;
  if (tab != std::string_view::npos) ex.features = parse_features(line.substr(tab + 1), input_dim, where);
  return ex;
}

std::string format_features(const SparseVector& features) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (i) os << ' ';
    os << features[i].index << ':' << features[i].value;
  }
  return os.str();
}

std::string format_labeled_line(const LabeledExample& example) {
  return std::to_string(example.label) + "\t" + format_features(example.features);
}

namespace {

// Calls on_line(text, "file:line") for every LF-terminated record.
template <typename F>
void for_each_line(const fs::path& path, const std::string& domain, F on_line) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("domain '" + domain + "': cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = path.string() + ":" + std::to_string(number);
    if (line.find('\r') != std::string::npos) throw DataError(where + ": CR characters are not allowed");
    on_line(std::string_view(line), where);
  }
}

}  // namespace

DomainDataset load_domain(const fs::path& dir, std::size_t input_dim) {
  DomainDataset ds;
  ds.name = dir.filename().string();
  if (ds.name.empty()) ds.name = dir.parent_path().filename().string();
  ds.input_dim = input_dim;
  for_each_line(dir / "labeled.tsv", ds.name, [&](std::string_view line, const std::string& where) {
    ds.labeled.push_back(parse_labeled_line(line, input_dim, where));
  });
  for_each_line(dir / "unlabeled.tsv", ds.name, [&](std::string_view line, const std::string& where) {
    ds.unlabeled.push_back(parse_features(line, input_dim, where));
  });
  if (fs::exists(dir / "test.tsv")) {
    for_each_line(dir / "test.tsv", ds.name, [&](std::string_view line, const std::string& where) {
      ds.test.push_back(parse_labeled_line(line, input_dim, where));
    });
  }
  return ds;
}

std::vector<DomainDataset> load_domains(const fs::path& root, std::size_t input_dim) {
  if (!fs::is_directory(root)) throw DataError("data directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no domain directories under " + root.string());
  std::vector<DomainDataset> out;
  for (const auto& d : dirs) out.push_back(load_domain(d, input_dim));
  return out;
}

void write_domain(const DomainDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  auto open = [](const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError("cannot write " + p.string());
    return os;
  };
  {
    auto os = open(dir / "labeled.tsv");
    for (const auto& ex : dataset.labeled) os << format_labeled_line(ex) << '\n';
  }
  {
    auto os = open(dir / "unlabeled.tsv");
    for (const auto& f : dataset.unlabeled) os << format_features(f) << '\n';
  }
  if (!dataset.test.empty()) {
    auto os = open(dir / "test.tsv");
    for (const auto& ex : dataset.test) os << format_labeled_line(ex) << '\n';
  }
}

// ---- dense batches --------------------------------------------------------

Tensor to_dense(std::span<const SparseVector* const> rows, std::size_t input_dim, bool log1p) {
  Tensor out(rows.size(), input_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& f : *rows[i]) {
      if (f.index >= input_dim) throw DimensionError("to_dense: feature index beyond input dimension");
      out.at(i, f.index) = log1p ? std::log1p(f.value) : f.value;
    }
  }
  return out;
}

Tensor to_dense(std::span<const SparseVector> rows, std::size_t input_dim, bool log1p) {
  std::vector<const SparseVector*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& r : rows) ptrs.push_back(&r);
  return to_dense(ptrs, input_dim, log1p);
}

Tensor to_dense(std::span<const LabeledExample> rows, std::size_t input_dim, bool log1p) {
  std::vector<const SparseVector*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& r : rows) ptrs.push_back(&r.features);
  return to_dense(ptrs, input_dim, log1p);
}

// ---- cross-validation -----------------------------------------------------

std::vector<Fold> kfold_split(const DomainDataset& dataset, const FoldSpec& spec) {
  const std::size_t n = dataset.labeled.size();
  if (spec.k < 2) throw UsageError("kfold_split: k must be at least 2");
  if (n < spec.k) {
    std::ostringstream os;
    os << "kfold_split: domain '" << dataset.name << "' has " << n << " labeled samples, fewer than k=" << spec.k;
    throw UsageError(os.str());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = dataset.labeled[a];
    const auto& eb = dataset.labeled[b];
    if (ea.label != eb.label) return ea.label < eb.label;
    return ea.features < eb.features;
  });

  Rng rng(spec.seed);
  std::vector<std::size_t> fold_of(n);
  std::size_t next = 0;  // continue dealing across classes so totals stay balanced
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t idx : order)
      if (dataset.labeled[idx].label == label) members.push_back(idx);
    rng.shuffle(members);
    for (std::size_t idx : members) {
      fold_of[idx] = next;
      next = (next + 1) % spec.k;
    }
  }

  std::vector<Fold> folds(spec.k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < spec.k; ++f) (f == fold_of[i] ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

std::vector<LabeledExample> select(const std::vector<LabeledExample>& examples, std::span<const std::size_t> indices) {
  std::vector<LabeledExample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(examples.at(i));
  return out;
}

DomainDataset with_labeled_subset(const DomainDataset& dataset, std::span<const std::size_t> indices) {
  DomainDataset out;
  out.name = dataset.name;
  out.input_dim = dataset.input_dim;
  out.labeled = select(dataset.labeled, indices);
  out.unlabeled = dataset.unlabeled;
  return out;
}

// ---- synthetic scenarios --------------------------------------------------

std::size_t SyntheticScenario::labeled_per_class(std::size_t domain) const {
  return static_cast<std::size_t>(std::floor(domains.at(domain).labeled_fraction * static_cast<double>(samples_per_class) + 0.5));
}

void SyntheticScenario::validate() const {
  if (dims == 0) throw ConfigError("scenario: dims must be positive");
  if (domains.empty()) throw ConfigError("scenario: at least one domain required");
  if (samples_per_class == 0) throw ConfigError("scenario: samples_per_class must be positive");
  for (std::size_t d = 0; d < domains.size(); ++d) {
    const auto& dom = domains[d];
    const std::string tag = "scenario: domain '" + dom.name + "'";
    if (dom.name.empty()) throw ConfigError("scenario: domain " + std::to_string(d) + " has no name");
    if (dom.positive_mean.size() != dims || dom.negative_mean.size() != dims || dom.stddev.size() != dims)
      throw ConfigError(tag + ": mean/stddev length must equal dims");
    for (double s : dom.stddev)
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError(tag + ": degenerate covariance (stddev must be > 0)");
    if (!(dom.labeled_fraction > 0.0 && dom.labeled_fraction <= 1.0))
      throw ConfigError(tag + ": labeled_fraction must be in (0, 1]");
    if (labeled_per_class(d) == 0) throw ConfigError(tag + ": labeled fraction yields no labeled samples");
    for (std::size_t e = 0; e < d; ++e)
      if (domains[e].name == dom.name) throw ConfigError(tag + ": duplicate domain name");
  }
}

SyntheticScenario SyntheticScenario::misalignment() {
  SyntheticScenario s;
  s.dims = 2;
  s.samples_per_class = 500;
  s.test_per_class = 500;
  s.seed = 1;
  s.domains = {
      SyntheticDomain{"a_source", {2.0, 0.0}, {-2.0, 0.0}, {1.0, 1.0}, 0.2},
      SyntheticDomain{"b_target", {-2.0, 3.0}, {2.0, 3.0}, {1.0, 1.0}, 0.02},
  };
  return s;
}

SparseVector encode_signed(std::span<const double> dense) {
  SparseVector out;
  for (std::size_t j = 0; j < dense.size(); ++j) {
    const double g = dense[j];
    if (g > 0.0) out.push_back(Feature{static_cast<std::uint32_t>(2 * j), g});
    if (g < 0.0) out.push_back(Feature{static_cast<std::uint32_t>(2 * j + 1), -g});
  }
  return out;
}

std::vector<DomainDataset> generate_synthetic(const SyntheticScenario& scenario) {
  scenario.validate();
  Rng rng(scenario.seed);
  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d < scenario.domains.size(); ++d) {
    const auto& dom = scenario.domains[d];
    DomainDataset ds;
    ds.name = dom.name;
    ds.input_dim = scenario.input_dim();
    const std::size_t n_lab = scenario.labeled_per_class(d);
    for (int label : {kPositive, kNegative}) {
      const auto& mu = label == kPositive ? dom.positive_mean : dom.negative_mean;
      auto draw = [&] {
        std::vector<double> g(scenario.dims);
        for (std::size_t j = 0; j < scenario.dims; ++j) g[j] = mu[j] + dom.stddev[j] * rng.normal();
        return encode_signed(g);
      };
      for (std::size_t i = 0; i < scenario.samples_per_class; ++i) {
        if (i < n_lab)
          ds.labeled.push_back(LabeledExample{draw(), label});
        else
          ds.unlabeled.push_back(draw());
      }
      for (std::size_t i = 0; i < scenario.test_per_class; ++i) ds.test.push_back(LabeledExample{draw(), label});
    }
    rng.shuffle(ds.labeled);
    rng.shuffle(ds.unlabeled);
    rng.shuffle(ds.test);
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<double> bayes_accuracy_per_domain(const SyntheticScenario& scenario) {
  scenario.validate();
  std::vector<double> out;
  for (const auto& dom : scenario.domains) {
    double sq = 0.0;
    for (std::size_t j = 0; j < scenario.dims; ++j) {
      const double z = (dom.positive_mean[j] - dom.negative_mean[j]) / dom.stddev[j];
      sq += z * z;
    }
    // Phi(Delta / 2) = erfc(-Delta / (2 sqrt 2)) / 2
    out.push_back(0.5 * std::erfc(-std::sqrt(sq) / (2.0 * std::sqrt(2.0))));
  }
  return out;
}

double bayes_accuracy(const SyntheticScenario& scenario) {
  const auto per = bayes_accuracy_per_domain(scenario);
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace rca
