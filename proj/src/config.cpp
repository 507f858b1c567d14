#include "pvae/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "pvae/binary_io.hpp"

namespace pvae {

Schedules TrainSpec::schedules() const {
  Schedules s;
  s.lr0 = lr;
  s.total_epochs = epochs;
  s.t_start = t_start;
  s.t_final = t_final;
  s.t_shape = t_shape;
  s.kl_ramp = kl_ramp;
  if (hard_forward_after >= 0) s.hard_forward_after = hard_forward_after;
  return s;
}

SparseCodeConfig SparseSpec::inference() const {
  SparseCodeConfig c;
  c.beta = beta;
  c.n_iters = n_iters;
  c.step_size = step_size;
  c.nonnegative = nonnegative;
  c.lca_threshold = threshold;
  if (beta_step > 0.0) c.schedule = BetaSchedule{beta_start, beta_end, beta_step, beta_interval};
  return c;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos) {
        const auto a = std::stoull(item.substr(0, dash));
        const auto b = std::stoull(item.substr(dash + 1));
        if (b < a) throw ConfigError("bad seed range '" + item + "'");
        for (auto s = a; s <= b; ++s) seeds.push_back(s);
      } else {
        std::size_t used = 0;
        seeds.push_back(std::stoull(item, &used));
        if (item.find_first_not_of(" \t", used) != std::string::npos) throw ConfigError("bad seed '" + item + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

namespace {

// Text conversions shared by parse and render.
std::string to_text(const std::string& v) { return v; }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
template <typename T>
  requires std::is_integral_v<T>
std::string to_text(T v) {
  return std::to_string(v);
}
std::string to_text(Family v) { return std::string(to_string(v)); }
std::string to_text(EncoderKind v) { return std::string(to_string(v)); }
std::string to_text(GradMode v) { return std::string(to_string(v)); }
std::string to_text(TemperatureShape v) { return std::string(to_string(v)); }
std::string to_text(Solver v) { return v == Solver::kIsta ? "ista" : "lca"; }
std::string to_text(Threshold v) { return v == Threshold::kHard ? "hard" : "soft"; }
template <typename T>
std::string to_text(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + to_text(v[i]);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1));
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) throw ConfigError("bad number '" + text + "'");
  return v;
}

void from_text(const std::string& t, std::string& v) { v = t; }
void from_text(const std::string& t, bool& v) {
  if (t == "true" || t == "1" || t == "yes") {
    v = true;
  } else if (t == "false" || t == "0" || t == "no") {
    v = false;
  } else {
    throw ConfigError("bad boolean '" + t + "'");
  }
}
void from_text(const std::string& t, double& v) { v = parse_number<double>(t); }
template <typename T>
  requires std::is_integral_v<T>
void from_text(const std::string& t, T& v) {
  v = parse_number<T>(t);
}
void from_text(const std::string& t, Family& v) { v = parse_family(t); }
void from_text(const std::string& t, EncoderKind& v) { v = parse_encoder_kind(t); }
void from_text(const std::string& t, GradMode& v) { v = parse_grad_mode(t); }
void from_text(const std::string& t, TemperatureShape& v) { v = parse_temperature_shape(t); }
void from_text(const std::string& t, Solver& v) {
  if (t == "ista") {
    v = Solver::kIsta;
  } else if (t == "lca") {
    v = Solver::kLca;
  } else {
    throw ConfigError("unknown solver '" + t + "'");
  }
}
void from_text(const std::string& t, Threshold& v) {
  if (t == "hard") {
    v = Threshold::kHard;
  } else if (t == "soft") {
    v = Threshold::kSoft;
  } else {
    throw ConfigError("unknown threshold '" + t + "'");
  }
}
void from_text(const std::string& t, std::vector<std::uint64_t>& v) { v = parse_seed_list(t); }
template <typename T>
void from_text(const std::string& t, std::vector<T>& v) {
  v.clear();
  if (trim(t).empty()) return;
  std::stringstream in(t);
  std::string item;
  while (std::getline(in, item, ',')) {
    T x{};
    from_text(trim(item), x);
    v.push_back(x);
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <auto Section, auto Member>
Field field(const char* section, const char* key) {
  return Field{section, key, [](const RunConfig& c) { return to_text((c.*Section).*Member); },
               [](RunConfig& c, const std::string& t) { from_text(t, (c.*Section).*Member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field<&RunConfig::data, &DataSpec::source>("data", "source"),
      field<&RunConfig::data, &DataSpec::mnist_dir>("data", "mnist_dir"),
      field<&RunConfig::data, &DataSpec::train_cache>("data", "train_cache"),
      field<&RunConfig::data, &DataSpec::val_cache>("data", "val_cache"),
      field<&RunConfig::data, &DataSpec::image_dir>("data", "image_dir"),
      field<&RunConfig::data, &DataSpec::patch_size>("data", "patch_size"),
      field<&RunConfig::data, &DataSpec::train_count>("data", "train_count"),
      field<&RunConfig::data, &DataSpec::val_count>("data", "val_count"),
      field<&RunConfig::data, &DataSpec::synth_dim>("data", "synth_dim"),
      field<&RunConfig::data, &DataSpec::synth_atoms>("data", "synth_atoms"),
      field<&RunConfig::data, &DataSpec::synth_active>("data", "synth_active"),
      field<&RunConfig::data, &DataSpec::synth_noise>("data", "synth_noise"),
      field<&RunConfig::data, &DataSpec::seed>("data", "seed"),
      field<&RunConfig::model, &ModelSpec::family>("model", "family"),
      field<&RunConfig::model, &ModelSpec::encoder>("model", "encoder"),
      field<&RunConfig::model, &ModelSpec::hidden>("model", "hidden"),
      field<&RunConfig::model, &ModelSpec::latents>("model", "latents"),
      field<&RunConfig::model, &ModelSpec::beta>("model", "beta"),
      field<&RunConfig::model, &ModelSpec::mode>("model", "grad_mode"),
      field<&RunConfig::train, &TrainSpec::epochs>("train", "epochs"),
      field<&RunConfig::train, &TrainSpec::batch_size>("train", "batch_size"),
      field<&RunConfig::train, &TrainSpec::lr>("train", "lr"),
      field<&RunConfig::train, &TrainSpec::t_start>("train", "t_start"),
      field<&RunConfig::train, &TrainSpec::t_final>("train", "t_final"),
      field<&RunConfig::train, &TrainSpec::t_shape>("train", "t_shape"),
      field<&RunConfig::train, &TrainSpec::kl_ramp>("train", "kl_ramp"),
      field<&RunConfig::train, &TrainSpec::hard_forward_after>("train", "hard_forward_after"),
      field<&RunConfig::train, &TrainSpec::n_samples>("train", "n_samples"),
      field<&RunConfig::sparse, &SparseSpec::solver>("sparse", "solver"),
      field<&RunConfig::sparse, &SparseSpec::beta>("sparse", "beta"),
      field<&RunConfig::sparse, &SparseSpec::n_iters>("sparse", "n_iters"),
      field<&RunConfig::sparse, &SparseSpec::step_size>("sparse", "step_size"),
      field<&RunConfig::sparse, &SparseSpec::nonnegative>("sparse", "nonnegative"),
      field<&RunConfig::sparse, &SparseSpec::threshold>("sparse", "threshold"),
      field<&RunConfig::sparse, &SparseSpec::lr>("sparse", "lr"),
      field<&RunConfig::sparse, &SparseSpec::epochs>("sparse", "epochs"),
      field<&RunConfig::sparse, &SparseSpec::atoms>("sparse", "atoms"),
      field<&RunConfig::sparse, &SparseSpec::batch_size>("sparse", "batch_size"),
      field<&RunConfig::sparse, &SparseSpec::beta_start>("sparse", "beta_start"),
      field<&RunConfig::sparse, &SparseSpec::beta_end>("sparse", "beta_end"),
      field<&RunConfig::sparse, &SparseSpec::beta_step>("sparse", "beta_step"),
      field<&RunConfig::sparse, &SparseSpec::beta_interval>("sparse", "beta_interval"),
      field<&RunConfig::sparse, &SparseSpec::betas>("sparse", "betas"),
      field<&RunConfig::run, &RunSpec::seeds>("run", "seeds"),
      field<&RunConfig::run, &RunSpec::out_dir>("run", "out_dir"),
      field<&RunConfig::run, &RunSpec::jobs>("run", "jobs"),
      field<&RunConfig::run, &RunSpec::compare_modes>("run", "compare_modes"),
      field<&RunConfig::run, &RunSpec::betas>("run", "betas"),
  };
  return all;
}

const Field& lookup(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

void assign(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  const Field& f = lookup(section, key);
  try {
    f.set(cfg, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (data.source != "mnist" && data.source != "cache" && data.source != "patches" && data.source != "synthetic") {
    fail("data.source must be mnist, cache, patches or synthetic");
  }
  if (data.source == "cache" && (data.train_cache.empty() || data.val_cache.empty())) {
    fail("data.train_cache and data.val_cache are required for cached data");
  }
  if (data.patch_size < 2) fail("data.patch_size must be at least 2");
  if (data.train_count < 0 || data.val_count < 0) fail("data counts must be nonnegative");
  if (data.source == "patches" && (data.train_count == 0 || data.val_count == 0)) {
    fail("data.train_count and data.val_count are required for patch extraction");
  }
  if (data.synth_dim < 1 || data.synth_atoms < 1) fail("synthetic dimensions must be positive");
  if (data.synth_active < 0 || data.synth_active > data.synth_atoms) fail("data.synth_active must be <= synth_atoms");
  if (data.synth_noise < 0.0) fail("data.synth_noise must be nonnegative");
  if (model.latents < 1) fail("model.latents must be positive");
  if (model.hidden < 1) fail("model.hidden must be positive");
  if (!(model.beta > 0.0)) fail("model.beta must be positive");
  if (model.mode == GradMode::kStraightThrough && model.family != Family::kPoisson) {
    fail("model.grad_mode st needs the poisson family");
  }
  if (train.epochs < 0) fail("train.epochs must be nonnegative");
  if (train.batch_size < 1) fail("train.batch_size must be positive");
  if (train.n_samples < 1) fail("train.n_samples must be positive");
  train.schedules().validate();
  sparse.inference().validate();
  if (sparse.beta_start > sparse.beta_end) fail("sparse.beta_start must not exceed sparse.beta_end");
  if (!(sparse.lr > 0.0)) fail("sparse.lr must be positive");
  if (sparse.epochs < 0 || sparse.atoms < 1 || sparse.batch_size < 1) fail("sparse sizes must be positive");
  for (const double b : sparse.betas) {
    if (!(b >= 0.0)) fail("sparse.betas must be nonnegative");
  }
  if (run.seeds.empty()) fail("run.seeds must list at least one seed");
  if (run.jobs < 1) fail("run.jobs must be positive");
  if (run.out_dir.empty()) fail("run.out_dir must be set");
  for (const auto m : run.compare_modes) {
    if (m == GradMode::kStraightThrough && model.family != Family::kPoisson) {
      fail("run.compare_modes: st needs the poisson family");
    }
  }
  for (const double b : run.betas) {
    if (!(b > 0.0)) fail("run.betas must be positive");
  }
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : keys) assign(cfg, section, key, value.data());
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig cfg;
  for (const auto& [section, keys] : j.items()) {
    if (!keys.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : keys.items()) {
      std::string text_value;
      if (value.is_string()) {
        text_value = value.get<std::string>();
      } else if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i) {
          text_value += (i ? "," : "") + (value[i].is_string() ? value[i].get<std::string>() : value[i].dump());
        }
      } else {
        text_value = value.dump();
      }
      assign(cfg, section, key, text_value);
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = bin::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  try {
    const bool json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
    return json ? parse_config_json(text) : parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace pvae
