#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rca/config.hpp"
#include "rca/data.hpp"

namespace rca::cli {

inline constexpr const char* kVersion = "rca 0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

/// Runs `body` and maps library exceptions to exit codes, printing the
/// message to `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

/// Result of one training protocol: a fixed holdout when every domain ships
/// a test set, otherwise stratified k-fold over the labeled data.
struct ProtocolResult {
  std::string protocol;                       // "holdout" or "<k>-fold"
  std::vector<std::string> domains;
  std::vector<std::vector<double>> accuracy;  // [fold][domain]
  std::vector<double> domain_mean, domain_std;
  double average_mean = 0.0, average_std = 0.0;
  std::uint64_t min_player_init_hash = 0;
};

/// Where to write per-step metrics and checkpoints; all optional.
struct ProtocolSinks {
  std::ostream* metrics = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir;
};

ProtocolResult run_protocol(const std::vector<DomainDataset>& data, const RunConfig& cfg,
                            const ProtocolSinks& sinks = {});

std::string summary_table(const ProtocolResult& r);

/// Small architecture and learning rate suited to the low-dimensional
/// synthetic scenarios; everything else keeps the defaults.
RunConfig synthetic_run_config(const SyntheticScenario& scenario);

struct TrainArgs {
  std::optional<std::string> config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds;
  std::optional<std::string> ablation;  // "joint" or "marginal"
};
int cmd_train(const TrainArgs& args, std::ostream& log);

struct SynthArgs {
  std::optional<std::string> config;  // scenario file; built-in misalignment scenario otherwise
  std::string out;
  std::optional<std::uint64_t> seed;
};
int cmd_synth(const SynthArgs& args, std::ostream& log);

struct GradcheckArgs {
  std::uint64_t seed = 7;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log);

struct AblateArgs {
  std::optional<std::string> config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds;
  std::size_t seeds = 1;
};
int cmd_ablate(const AblateArgs& args, std::ostream& log);

}  // namespace rca::cli
