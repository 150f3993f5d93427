#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "rca/error.hpp"
#include "rca/gradcheck_suite.hpp"
#include "rca/training.hpp"

namespace rca::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / n)};
}

std::string percent(double mean, double std) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * mean << " +- " << 100.0 * std;
  return os.str();
}

RunConfig resolve_config(const std::optional<std::string>& path, std::optional<std::uint64_t> seed,
                         std::optional<std::size_t> folds, const std::optional<std::string>& ablation) {
  RunConfig cfg = path ? load_run_config(*path) : RunConfig{};
  if (seed) cfg.train.seed = *seed;
  if (folds) {
    if (*folds < 2) throw ConfigError("--folds must be at least 2");
    cfg.folds.k = *folds;
  }
  if (ablation) cfg.model.alignment = parse_alignment(*ablation);
  return cfg;
}

bool has_fixed_test_sets(const std::vector<DomainDataset>& data) {
  for (const auto& ds : data)
    if (ds.test.empty()) return false;
  return true;
}

ordered_json protocol_json(const ProtocolResult& r) {
  ordered_json j;
  j["protocol"] = r.protocol;
  ordered_json domains = ordered_json::object();
  for (std::size_t d = 0; d < r.domains.size(); ++d)
    domains[r.domains[d]] = {{"mean", r.domain_mean[d]}, {"std", r.domain_std[d]}};
  j["domains"] = domains;
  j["average"] = {{"mean", r.average_mean}, {"std", r.average_std}};
  j["folds"] = r.accuracy;
  return j;
}

ordered_json data_checksums(const fs::path& root) {
  ordered_json j = ordered_json::object();
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".tsv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) j[fs::relative(f, root).generic_string()] = file_checksum(f);
  return j;
}

}  // namespace

ProtocolResult run_protocol(const std::vector<DomainDataset>& data, const RunConfig& cfg, const ProtocolSinks& sinks) {
  if (data.empty()) throw DataError("no domains to train on");
  ProtocolResult result;
  for (const auto& ds : data) result.domains.push_back(ds.name);

  {
    ModelConfig mc = cfg.model;
    mc.num_domains = data.size();
    mc.input_dim = data.front().input_dim;
    Rng root(cfg.train.seed);
    Rng init_rng = root.split();
    result.min_player_init_hash = hash_parameters(RcaModel::init(mc, init_rng).min_player_parameters());
  }

  auto train_one = [&](const std::vector<DomainDataset>& train, const std::vector<std::vector<LabeledExample>>& test,
                       const std::string& tag) {
    FitOptions options;
    options.held_out = test;
    options.on_step = [&](const StepMetrics& m) {
      if (!sinks.metrics) return;
      ordered_json line = ordered_json::parse(to_json_line(m));
      if (!tag.empty()) {
        ordered_json tagged;
        tagged["fold"] = tag;
        tagged.update(line);
        line = tagged;
      }
      *sinks.metrics << line.dump() << "\n";
    };
    const std::string prefix = tag.empty() ? "" : "fold" + tag + "_";
    if (sinks.checkpoint_dir && cfg.train.checkpoint_every > 0) {
      options.on_epoch = [&](std::size_t epoch, const RcaModel& model) {
        if (epoch % cfg.train.checkpoint_every == 0) {
          fs::create_directories(*sinks.checkpoint_dir / "checkpoints");
          save_checkpoint(model, (*sinks.checkpoint_dir / "checkpoints" /
                                  (prefix + "epoch" + std::to_string(epoch) + ".ckpt")).string());
        }
      };
    }
    FitResult fitted = fit(train, cfg.model, cfg.train, options);
    if (sinks.checkpoint_dir) save_checkpoint(fitted.model, (*sinks.checkpoint_dir / (prefix + "model.ckpt")).string());
    result.accuracy.push_back(evaluate(fitted.model, test).per_domain);
  };

  if (has_fixed_test_sets(data)) {
    result.protocol = "holdout";
    std::vector<std::vector<LabeledExample>> test;
    for (const auto& ds : data) test.push_back(ds.test);
    train_one(data, test, "");
  } else {
    result.protocol = std::to_string(cfg.folds.k) + "-fold";
    std::vector<std::vector<Fold>> folds;
    for (const auto& ds : data) {
      try {
        folds.push_back(kfold_split(ds, cfg.folds));
      } catch (const UsageError& e) {
        throw DataError("domain '" + ds.name + "': " + e.what());
      }
    }
    for (std::size_t f = 0; f < cfg.folds.k; ++f) {
      std::vector<DomainDataset> train;
      std::vector<std::vector<LabeledExample>> test;
      for (std::size_t d = 0; d < data.size(); ++d) {
        train.push_back(with_labeled_subset(data[d], folds[d][f].train));
        test.push_back(select(data[d].labeled, folds[d][f].test));
      }
      train_one(train, test, std::to_string(f + 1));
    }
  }

  std::vector<double> averages;
  for (const auto& row : result.accuracy)
    averages.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  std::tie(result.average_mean, result.average_std) = mean_std(averages);
  for (std::size_t d = 0; d < data.size(); ++d) {
    std::vector<double> col;
    for (const auto& row : result.accuracy) col.push_back(row[d]);
    const auto [m, s] = mean_std(col);
    result.domain_mean.push_back(m);
    result.domain_std.push_back(s);
  }
  return result;
}

std::string summary_table(const ProtocolResult& r) {
  std::size_t width = 6;
  for (const auto& n : r.domains) width = std::max(width, n.size() + 2);
  std::ostringstream os;
  os << "protocol: " << r.protocol << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << "domain" << "accuracy (%)\n";
  for (std::size_t d = 0; d < r.domains.size(); ++d)
    os << std::left << std::setw(static_cast<int>(width)) << r.domains[d] << percent(r.domain_mean[d], r.domain_std[d])
       << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << "AVG" << percent(r.average_mean, r.average_std) << "\n";
  return os.str();
}

int cmd_train(const TrainArgs& args, std::ostream& log) {
  const RunConfig cfg = resolve_config(args.config, args.seed, args.folds, args.ablation);
  const auto data = load_domains(args.data, cfg.model.input_dim);
  const fs::path out(args.out);
  fs::create_directories(out);
  const std::string resolved = to_text(cfg);
  write_text(out / "resolved_config.cfg", resolved);

  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  ProtocolSinks sinks{&metrics, out};
  const ProtocolResult r = run_protocol(data, cfg, sinks);
  metrics.close();

  const std::string table = summary_table(r);
  write_text(out / "summary.txt", table);
  write_text(out / "summary.json", protocol_json(r).dump(2) + "\n");

  ordered_json manifest;
  manifest["version"] = kVersion;
  manifest["command"] = "train";
  manifest["seed"] = cfg.train.seed;
  manifest["alignment"] = to_string(cfg.model.alignment);
  manifest["protocol"] = r.protocol;
  manifest["data_dir"] = args.data;
  manifest["out_dir"] = args.out;
  ordered_json config = ordered_json::object();
  const KeyValues resolved_kv = KeyValues::parse(resolved, "resolved");
  for (const auto& [k, v] : resolved_kv.values()) config[k] = v;
  manifest["config"] = config;
  manifest["data"] = data_checksums(args.data);
  manifest["outputs"] = {{"metrics.jsonl", file_checksum(out / "metrics.jsonl")},
                         {"summary.txt", file_checksum(out / "summary.txt")},
                         {"summary.json", file_checksum(out / "summary.json")}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  log << table;
  return kOk;
}

RunConfig synthetic_run_config(const SyntheticScenario& scenario) {
  RunConfig cfg;
  cfg.model.input_dim = scenario.input_dim();
  cfg.model.extractor_hidden = {32};
  cfg.model.shared_dim = 8;
  cfg.model.private_dim = 8;
  cfg.model.classifier_hidden = 16;
  cfg.model.discriminator_hidden = 16;
  cfg.model.dropout_rate = 0.0;
  cfg.train.learning_rate = 1e-3;
  cfg.train.batch_size = 16;
  cfg.train.epochs = 30;
  return cfg;
}

int cmd_synth(const SynthArgs& args, std::ostream& log) {
  SyntheticScenario s = args.config ? scenario_from(KeyValues::load(*args.config)) : SyntheticScenario::misalignment();
  if (args.seed) s.seed = *args.seed;
  const auto data = generate_synthetic(s);
  const fs::path out(args.out);
  fs::create_directories(out);
  for (const auto& ds : data) write_domain(ds, out / ds.name);
  write_text(out / "scenario.cfg", to_text(s));

  const RunConfig suggested = synthetic_run_config(s);
  write_text(out / "suggested_train.cfg", to_text(suggested));

  ordered_json manifest;
  manifest["version"] = kVersion;
  manifest["command"] = "synth";
  manifest["seed"] = s.seed;
  const auto bayes = bayes_accuracy_per_domain(s);
  ordered_json per = ordered_json::object();
  for (std::size_t d = 0; d < data.size(); ++d) per[data[d].name] = bayes[d];
  manifest["bayes_accuracy"] = {{"domains", per}, {"average", bayes_accuracy(s)}};
  manifest["data"] = data_checksums(out);
  write_text(out / "scenario.json", manifest.dump(2) + "\n");
  log << "wrote " << data.size() << " domains to " << out.string() << "; Bayes accuracy " << std::fixed
      << std::setprecision(4) << bayes_accuracy(s) << "\n";
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log) {
  const auto results = run_gradcheck(standard_gradcheck_cases(args.seed));
  bool ok = true;
  for (const auto& r : results) {
    log << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(36) << r.name << std::scientific
        << std::setprecision(3) << r.max_rel_err << " (< " << r.threshold << ")\n";
    ok = ok && r.passed;
  }
  return ok ? kOk : kFailure;
}

int cmd_ablate(const AblateArgs& args, std::ostream& log) {
  const RunConfig base = resolve_config(args.config, args.seed, args.folds, std::nullopt);
  if (args.seeds < 1) throw ConfigError("--seeds must be at least 1");
  const auto data = load_domains(args.data, base.model.input_dim);
  const fs::path out(args.out);
  fs::create_directories(out);

  ordered_json runs = ordered_json::array();
  // [variant][domain or AVG] -> one value per seed
  std::vector<std::vector<std::vector<double>>> cells(2, std::vector<std::vector<double>>(data.size() + 1));
  for (std::size_t i = 0; i < args.seeds; ++i) {
    RunConfig joint = base, marginal = base;
    joint.train.seed = marginal.train.seed = base.train.seed + i;
    joint.model.alignment = Alignment::joint;
    marginal.model.alignment = Alignment::marginal;
    const ProtocolResult a = run_protocol(data, joint);
    const ProtocolResult b = run_protocol(data, marginal);
    if (a.min_player_init_hash != b.min_player_init_hash)
      throw UsageError("ablation variants started from different min-player initialisations");
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << a.min_player_init_hash;
    log << "seed " << joint.train.seed << ": min-player init hash " << hash.str() << " (both variants)\n";
    for (std::size_t v = 0; v < 2; ++v) {
      const ProtocolResult& r = v == 0 ? a : b;
      for (std::size_t d = 0; d < data.size(); ++d) cells[v][d].push_back(r.domain_mean[d]);
      cells[v][data.size()].push_back(r.average_mean);
    }
    runs.push_back({{"seed", joint.train.seed}, {"init_hash", hash.str()}, {"joint", protocol_json(a)},
                    {"marginal", protocol_json(b)}});
  }

  std::size_t width = 18;
  for (const auto& ds : data) width = std::max(width, ds.name.size() + 2);
  std::ostringstream table;
  table << "accuracy (%) over " << args.seeds << " seed(s), mean +- std\n";
  table << std::left << std::setw(16) << "method";
  for (const auto& ds : data) table << std::setw(static_cast<int>(width)) << ds.name;
  table << "AVG\n";
  ordered_json summary = ordered_json::object();
  const char* names[] = {"RCA (joint)", "marginal"};
  const char* keys[] = {"joint", "marginal"};
  for (std::size_t v = 0; v < 2; ++v) {
    table << std::left << std::setw(16) << names[v];
    ordered_json row = ordered_json::object();
    for (std::size_t c = 0; c <= data.size(); ++c) {
      const auto [m, sd] = mean_std(cells[v][c]);
      table << std::setw(static_cast<int>(c == data.size() ? 0 : width)) << percent(m, sd);
      row[c == data.size() ? "AVG" : data[c].name] = {{"mean", m}, {"std", sd}};
    }
    table << "\n";
    summary[keys[v]] = row;
  }
  ordered_json j;
  j["version"] = kVersion;
  j["command"] = "ablate";
  j["summary"] = summary;
  j["runs"] = runs;
  write_text(out / "ablation.txt", table.str());
  write_text(out / "ablation.json", j.dump(2) + "\n");
  log << table.str();
  return kOk;
}

}  // namespace rca::cli
