#include "rca/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "rca/error.hpp"

namespace rca {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double to_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(where + ": expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(where + ": expected a nonnegative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s, const std::string& where) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(where + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += fmt(items[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&, const std::string&)> set;
};

template <typename T>
Field size_field(const std::string& key, T& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref](const std::string& v, const std::string& w) { ref = static_cast<T>(to_u64(v, w)); }};
}

Field double_field(const std::string& key, double& ref) {
  return {key, [&ref] { return fmt_double(ref); },
          [&ref](const std::string& v, const std::string& w) { ref = to_double(v, w); }};
}

Field bool_field(const std::string& key, bool& ref) {
  return {key, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref](const std::string& v, const std::string& w) { ref = to_bool(v, w); }};
}

std::vector<Field> model_fields(ModelConfig& m) {
  return {
      size_field("model.input_dim", m.input_dim),
      size_field("model.shared_dim", m.shared_dim),
      size_field("model.private_dim", m.private_dim),
      {"model.extractor_hidden",
       [&m] { return join(m.extractor_hidden, [](std::size_t v) { return std::to_string(v); }); },
       [&m](const std::string& v, const std::string& w) {
         m.extractor_hidden.clear();
         for (const auto& item : split_list(v)) m.extractor_hidden.push_back(to_u64(item, w));
       }},
      size_field("model.classifier_hidden", m.classifier_hidden),
      size_field("model.discriminator_hidden", m.discriminator_hidden),
      double_field("model.dropout", m.dropout_rate),
      {"model.alignment", [&m] { return to_string(m.alignment); },
       [&m](const std::string& v, const std::string& w) {
         try {
           m.alignment = parse_alignment(v);
         } catch (const ConfigError& e) {
           throw ConfigError(w + ": " + e.what());
         }
       }},
      bool_field("model.log1p_inputs", m.log1p_inputs),
  };
}

std::vector<Field> run_fields(RunConfig& c) {
  auto fields = model_fields(c.model);
  TrainConfig& t = c.train;
  std::vector<Field> more{
      double_field("train.lambda_d", t.weights.lambda_d),
      double_field("train.lambda_uvt", t.weights.lambda_uvt),
      double_field("train.lambda_lvt", t.weights.lambda_lvt),
      double_field("train.learning_rate", t.learning_rate),
      size_field("train.batch_size", t.batch_size),
      size_field("train.epochs", t.epochs),
      size_field("train.seed", t.seed),
      double_field("train.adam_beta1", t.adam_beta1),
      double_field("train.adam_beta2", t.adam_beta2),
      double_field("train.adam_eps", t.adam_eps),
      size_field("train.checkpoint_every", t.checkpoint_every),
      double_field("vat.epsilon", t.vat.epsilon),
      double_field("vat.xi", t.vat.xi),
      size_field("vat.power_iterations", t.vat.power_iterations),
      size_field("eval.folds", c.folds.k),
      size_field("eval.fold_seed", c.folds.seed),
  };
  fields.insert(fields.end(), more.begin(), more.end());
  return fields;
}

void apply_fields(const KeyValues& kv, std::vector<Field>& fields) {
  std::set<std::string> known;
  for (auto& f : fields) {
    known.insert(f.key);
    auto it = kv.values().find(f.key);
    if (it != kv.values().end()) f.set(it->second, kv.where(f.key));
  }
  for (const auto& [key, value] : kv.values())
    if (!known.count(key)) throw ConfigError(kv.where(key) + ": unknown key '" + key + "'");
}

std::string render(const std::vector<Field>& fields) {
  std::string out;
  for (const auto& f : fields) out += f.key + " = " + f.get() + "\n";
  return out;
}

}  // namespace

// ---- KeyValues ------------------------------------------------------------

KeyValues KeyValues::parse(const std::string& text, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (kv.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv.values_[key] = value;
    kv.lines_[key] = number;
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string KeyValues::where(const std::string& key) const {
  auto it = lines_.find(key);
  return source_ + ":" + (it == lines_.end() ? std::string("?") : std::to_string(it->second));
}

// ---- run config -----------------------------------------------------------

RunConfig run_config_from(const KeyValues& kv) {
  RunConfig cfg;
  auto fields = run_fields(cfg);
  apply_fields(kv, fields);
  cfg.train.validate();
  if (cfg.folds.k < 1) throw ConfigError("eval.folds must be >= 1");
  ModelConfig probe = cfg.model;
  probe.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) { return run_config_from(KeyValues::load(path)); }

std::string to_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  return render(run_fields(copy));
}

std::string model_config_to_text(const ModelConfig& cfg) {
  ModelConfig copy = cfg;
  auto fields = model_fields(copy);
  fields.insert(fields.begin(), size_field("model.num_domains", copy.num_domains));
  return render(fields);
}

ModelConfig model_config_from_text(const std::string& text, const std::string& source) {
  ModelConfig cfg;
  auto fields = model_fields(cfg);
  fields.insert(fields.begin(), size_field("model.num_domains", cfg.num_domains));
  try {
    apply_fields(KeyValues::parse(text, source), fields);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  return cfg;
}

// ---- scenarios ------------------------------------------------------------

SyntheticScenario scenario_from(const KeyValues& kv) {
  SyntheticScenario s = SyntheticScenario::misalignment();
  std::set<std::string> used;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.values().find(key);
    if (it == kv.values().end()) return nullptr;
    used.insert(key);
    return &it->second;
  };
  if (auto v = get("scenario.dims")) s.dims = to_u64(*v, kv.where("scenario.dims"));
  if (auto v = get("scenario.samples_per_class")) s.samples_per_class = to_u64(*v, kv.where("scenario.samples_per_class"));
  if (auto v = get("scenario.test_per_class")) s.test_per_class = to_u64(*v, kv.where("scenario.test_per_class"));
  if (auto v = get("scenario.seed")) s.seed = to_u64(*v, kv.where("scenario.seed"));
  if (auto v = get("scenario.domains")) {
    const auto names = split_list(*v);
    const auto defaults = s.domains;
    s.domains.clear();
    for (std::size_t i = 0; i < names.size(); ++i) {
      SyntheticDomain d = i < defaults.size() ? defaults[i] : SyntheticDomain{};
      d.name = names[i];
      s.domains.push_back(d);
    }
  }
  auto vec = [&](const std::string& key, std::vector<double>& out) {
    if (auto v = get(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) out.push_back(to_double(item, kv.where(key)));
    }
  };
  for (auto& d : s.domains) {
    const std::string prefix = "domain." + d.name + ".";
    vec(prefix + "positive_mean", d.positive_mean);
    vec(prefix + "negative_mean", d.negative_mean);
    vec(prefix + "stddev", d.stddev);
    if (auto v = get(prefix + "labeled_fraction")) d.labeled_fraction = to_double(*v, kv.where(prefix + "labeled_fraction"));
  }
  for (const auto& [key, value] : kv.values())
    if (!used.count(key)) throw ConfigError(kv.where(key) + ": unknown key '" + key + "'");
  s.validate();
  return s;
}

std::string to_text(const SyntheticScenario& s) {
  std::ostringstream os;
  os << "scenario.dims = " << s.dims << "\n";
  os << "scenario.samples_per_class = " << s.samples_per_class << "\n";
  os << "scenario.test_per_class = " << s.test_per_class << "\n";
  os << "scenario.seed = " << s.seed << "\n";
  os << "scenario.domains = " << join(s.domains, [](const SyntheticDomain& d) { return d.name; }) << "\n";
  for (const auto& d : s.domains) {
    const std::string prefix = "domain." + d.name + ".";
    os << prefix << "positive_mean = " << join(d.positive_mean, fmt_double) << "\n";
    os << prefix << "negative_mean = " << join(d.negative_mean, fmt_double) << "\n";
    os << prefix << "stddev = " << join(d.stddev, fmt_double) << "\n";
    os << prefix << "labeled_fraction = " << fmt_double(d.labeled_fraction) << "\n";
  }
  return os.str();
}

}  // namespace rca
