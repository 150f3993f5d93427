#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rca/autodiff.hpp"

namespace rca {

using ad::Tensor;

struct Feature {
  std::uint32_t index = 0;
  double value = 0.0;

  bool operator==(const Feature&) const = default;
  auto operator<=>(const Feature&) const = default;
};

/// Strictly increasing indices, nonnegative finite values.
using SparseVector = std::vector<Feature>;

struct LabeledExample {
  SparseVector features;
  int label = 0;  // 0 positive, 1 negative

  bool operator==(const LabeledExample&) const = default;
};

/// One domain: a small labeled set, a larger unlabeled set and an optional
/// fixed test set (synthetic scenarios ship one; real data uses folds).
struct DomainDataset {
  std::string name;
  std::size_t input_dim = 0;
  std::vector<LabeledExample> labeled;
  std::vector<SparseVector> unlabeled;
  std::vector<LabeledExample> test;

  bool operator==(const DomainDataset&) const = default;
};

// ---- text format ----------------------------------------------------------
//
// labeled.tsv / test.tsv:  <label>\t<idx>:<value> <idx>:<value> ...
// unlabeled.tsv:           <idx>:<value> <idx>:<value> ...
// One record per LF-terminated line. Indices are decimal, strictly
// increasing and < input_dim; values are nonnegative finite decimals.

/// Parses a feature list. `where` prefixes error messages ("file:line").
SparseVector parse_features(std::string_view text, std::size_t input_dim, const std::string& where);
LabeledExample parse_labeled_line(std::string_view line, std::size_t input_dim, const std::string& where);

std::string format_features(const SparseVector& features);
std::string format_labeled_line(const LabeledExample& example);

/// Reads labeled.tsv and unlabeled.tsv (and test.tsv if present) from a
/// domain directory. The domain name is the directory name.
DomainDataset load_domain(const std::filesystem::path& dir, std::size_t input_dim);

/// Loads every subdirectory of `root` as a domain, in name order.
std::vector<DomainDataset> load_domains(const std::filesystem::path& root, std::size_t input_dim);

void write_domain(const DomainDataset& dataset, const std::filesystem::path& dir);

// ---- dense batches --------------------------------------------------------

/// Stacks sparse rows into a dense [rows x input_dim] tensor, optionally
/// mapping every value v to log(1 + v).
Tensor to_dense(std::span<const SparseVector* const> rows, std::size_t input_dim, bool log1p = false);
Tensor to_dense(std::span<const SparseVector> rows, std::size_t input_dim, bool log1p = false);
Tensor to_dense(std::span<const LabeledExample> rows, std::size_t input_dim, bool log1p = false);

// ---- cross-validation -----------------------------------------------------

struct FoldSpec {
  std::size_t k = 5;
  std::uint64_t seed = 0;
};

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Label-stratified k-fold split of the labeled set. Examples are sorted
/// canonically (label, then features) before the seeded shuffle, so the
/// assignment of examples to folds does not depend on file order.
std::vector<Fold> kfold_split(const DomainDataset& dataset, const FoldSpec& spec);

/// Copy of `dataset` whose labeled set is restricted to `indices`; the
/// unlabeled set is kept and the test set dropped.
DomainDataset with_labeled_subset(const DomainDataset& dataset, std::span<const std::size_t> indices);

std::vector<LabeledExample> select(const std::vector<LabeledExample>& examples, std::span<const std::size_t> indices);

// ---- synthetic scenarios --------------------------------------------------

struct SyntheticDomain {
  std::string name;
  std::vector<double> positive_mean;
  std::vector<double> negative_mean;
  /// Per-dimension standard deviation shared by both classes.
  std::vector<double> stddev;
  double labeled_fraction = 0.1;
};

/// Class-conditional Gaussians per domain. Each real coordinate g is
/// written as two nonnegative features (max(g, 0), max(-g, 0)), so the
/// model input width is 2 * dims and no information is lost.
struct SyntheticScenario {
  std::size_t dims = 2;
  std::size_t samples_per_class = 1000;
  std::size_t test_per_class = 500;
  std::uint64_t seed = 1;
  std::vector<SyntheticDomain> domains;

  std::size_t input_dim() const { return 2 * dims; }
  std::size_t labeled_per_class(std::size_t domain) const;
  void validate() const;

  /// Two domains whose marginals can be matched by a map that swaps the
  /// classes of the second domain; the second domain has few labels.
  static SyntheticScenario misalignment();
};

SparseVector encode_signed(std::span<const double> dense);

std::vector<DomainDataset> generate_synthetic(const SyntheticScenario& scenario);

/// Closed-form Bayes accuracy per domain: Phi(Delta / 2) with Delta the
/// Mahalanobis distance between the class means (equal priors).
std::vector<double> bayes_accuracy_per_domain(const SyntheticScenario& scenario);
double bayes_accuracy(const SyntheticScenario& scenario);

/// FNV-1a checksum of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace rca
