// Run configuration: one flat struct covering dataset synthesis, model
// architecture, training, loss weights, and evaluation. Serialized as a
// line-oriented key/value file with [section] headers; command-line flags
// override file values, and every run directory receives the fully merged
// config before any work starts, so reruns from that file are exact.
#pragma once

#include <frontsr/losses.hpp>
#include <frontsr/model.hpp>
#include <frontsr/synthdata.hpp>
#include <frontsr/trainer.hpp>
#include <frontsr/util.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace frontsr::cli {

struct RunConfig {
  // [dataset]
  int identities = 12;
  int test_identities = 4;
  std::vector<int> yaws = {-60, -45, -30, -15, 0, 15, 30, 45, 60};
  std::vector<double> illuminations = {0.7, 1.0};
  int channels = 1;
  std::uint64_t dataset_seed = 1;

  // [generator] (desk-scale defaults)
  int base_channels = 16;
  int n_rdb = 4;
  int rdb_layers = 4;
  int growth = 16;
  int lr_size = 32;
  int hr_size = 128;
  std::string fusion = "single";
  int n_inputs = 1;
  bool sr_module = true;

  // [train]
  std::string mode = "si";
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-4;
  std::vector<int> decay_epochs = {10, 15};
  double decay_factor = 0.5;
  int d_steps_per_g = 1;
  std::uint64_t seed = 0;
  bool sr_supervision = true;
  int d_base = 8;
  int emb_base = 8;
  int emb_d1 = 32;
  int emb_epochs = 120;
  double emb_lr = 3e-3;
  std::string orth_variant = "srip";

  // [weights]
  losses::LossWeights weights;

  // [eval]
  std::uint64_t eval_seed = 0;
  int yaw_lo = 30;
  int yaw_hi = 60;
  std::string protocol;  // "" = follow the mode; "views" or "probesets"

  // [run]
  int threads = 1;
};

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> v;
  for (const std::string& tok : split(s, ','))
    if (!trim(tok).empty()) v.push_back(int(parse_int(trim(tok))));
  return v;
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> v;
  for (const std::string& tok : split(s, ','))
    if (!trim(tok).empty()) v.push_back(parse_double(trim(tok)));
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  check(false, "run config: boolean must be 0/1/true/false, got '" + s + "'");
  return false;
}

// One table drives parsing, flag overrides, and serialization, so the three
// views of a config can never disagree about a key.
struct Field {
  std::string key;  // "section.name"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<Field>& fields() {
  auto int_field = [](int RunConfig::*m) {
    return std::pair{[m](RunConfig& c, const std::string& v) { c.*m = int(parse_int(v)); },
                     [m](const RunConfig& c) { return std::to_string(c.*m); }};
  };
  auto u64_field = [](std::uint64_t RunConfig::*m) {
    return std::pair{
        [m](RunConfig& c, const std::string& v) { c.*m = std::uint64_t(parse_int(v)); },
        [m](const RunConfig& c) { return std::to_string(c.*m); }};
  };
  auto dbl_field = [](double RunConfig::*m) {
    return std::pair{[m](RunConfig& c, const std::string& v) { c.*m = parse_double(v); },
                     [m](const RunConfig& c) { return format_double(c.*m); }};
  };
  auto bool_field = [](bool RunConfig::*m) {
    return std::pair{[m](RunConfig& c, const std::string& v) { c.*m = parse_bool(v); },
                     [m](const RunConfig& c) { return std::string(c.*m ? "1" : "0"); }};
  };
  auto str_field = [](std::string RunConfig::*m) {
    return std::pair{[m](RunConfig& c, const std::string& v) { c.*m = v; },
                     [m](const RunConfig& c) { return c.*m; }};
  };
  auto weight_field = [](double losses::LossWeights::*m) {
    return std::pair{
        [m](RunConfig& c, const std::string& v) { c.weights.*m = parse_double(v); },
        [m](const RunConfig& c) { return format_double(c.weights.*m); }};
  };
  auto make = [](const std::string& key, auto pair) {
    return Field{key, pair.first, pair.second};
  };
  static const std::vector<Field> table = {
      make("dataset.identities", int_field(&RunConfig::identities)),
      make("dataset.test_identities", int_field(&RunConfig::test_identities)),
      {"dataset.yaws",
       [](RunConfig& c, const std::string& v) { c.yaws = parse_int_list(v); },
       [](const RunConfig& c) { return join_ints(c.yaws); }},
      {"dataset.illuminations",
       [](RunConfig& c, const std::string& v) { c.illuminations = parse_double_list(v); },
       [](const RunConfig& c) { return join_doubles(c.illuminations); }},
      make("dataset.channels", int_field(&RunConfig::channels)),
      make("dataset.seed", u64_field(&RunConfig::dataset_seed)),
      make("generator.base_channels", int_field(&RunConfig::base_channels)),
      make("generator.n_rdb", int_field(&RunConfig::n_rdb)),
      make("generator.rdb_layers", int_field(&RunConfig::rdb_layers)),
      make("generator.growth", int_field(&RunConfig::growth)),
      make("generator.lr_size", int_field(&RunConfig::lr_size)),
      make("generator.hr_size", int_field(&RunConfig::hr_size)),
      make("generator.fusion", str_field(&RunConfig::fusion)),
      make("generator.n_inputs", int_field(&RunConfig::n_inputs)),
      make("generator.sr_module", bool_field(&RunConfig::sr_module)),
      make("train.mode", str_field(&RunConfig::mode)),
      make("train.epochs", int_field(&RunConfig::epochs)),
      make("train.batch_size", int_field(&RunConfig::batch_size)),
      make("train.lr", dbl_field(&RunConfig::lr)),
      {"train.decay_epochs",
       [](RunConfig& c, const std::string& v) { c.decay_epochs = parse_int_list(v); },
       [](const RunConfig& c) { return join_ints(c.decay_epochs); }},
      make("train.decay_factor", dbl_field(&RunConfig::decay_factor)),
      make("train.d_steps_per_g", int_field(&RunConfig::d_steps_per_g)),
      make("train.seed", u64_field(&RunConfig::seed)),
      make("train.sr_supervision", bool_field(&RunConfig::sr_supervision)),
      make("train.d_base", int_field(&RunConfig::d_base)),
      make("train.emb_base", int_field(&RunConfig::emb_base)),
      make("train.emb_d1", int_field(&RunConfig::emb_d1)),
      make("train.emb_epochs", int_field(&RunConfig::emb_epochs)),
      make("train.emb_lr", dbl_field(&RunConfig::emb_lr)),
      make("train.orth_variant", str_field(&RunConfig::orth_variant)),
      make("weights.pixel", weight_field(&losses::LossWeights::pixel)),
      make("weights.patch", weight_field(&losses::LossWeights::patch)),
      make("weights.adv", weight_field(&losses::LossWeights::adv)),
      make("weights.id", weight_field(&losses::LossWeights::id)),
      make("weights.tv", weight_field(&losses::LossWeights::tv)),
      make("weights.orth", weight_field(&losses::LossWeights::orth)),
      make("eval.seed", u64_field(&RunConfig::eval_seed)),
      make("eval.yaw_lo", int_field(&RunConfig::yaw_lo)),
      make("eval.yaw_hi", int_field(&RunConfig::yaw_hi)),
      make("eval.protocol", str_field(&RunConfig::protocol)),
      make("run.threads", int_field(&RunConfig::threads)),
  };
  return table;
}

inline const Field& find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return f;
  check(false, "run config: unknown key '" + key + "'");
  return fields().front();
}

}  // namespace detail

// Dotted-key override, e.g. set_key(cfg, "train.epochs", "5").
inline void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  detail::find_field(key).set(cfg, value);
}

// Canonical text form: section headers in fixed order, one key per line.
inline std::string serialize(const RunConfig& cfg) {
  std::string out;
  std::string current;
  for (const detail::Field& f : detail::fields()) {
    const std::size_t dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    if (section != current) {
      if (!out.empty()) out += "\n";
      out += "[" + section + "]\n";
      current = section;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

// Parses config text (sections, key = value, '#' comments). Unknown sections
// or keys are errors so typos cannot silently fall back to defaults.
inline RunConfig parse_runconfig(const std::string& text, RunConfig cfg = RunConfig{}) {
  std::string section;
  std::vector<std::string> lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      check(line.back() == ']', "run config line " + std::to_string(i + 1) +
                                    ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    check(eq != std::string::npos,
          "run config line " + std::to_string(i + 1) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check(!section.empty(), "run config line " + std::to_string(i + 1) +
                                ": key '" + key + "' appears before any [section]");
    set_key(cfg, section + "." + key, value);
  }
  return cfg;
}

// ---- conversions into the module configs ---------------------------------------------

inline synth::DatasetSpec to_dataset_spec(const RunConfig& cfg) {
  synth::DatasetSpec spec;
  spec.n_identities = cfg.identities;
  spec.n_test = cfg.test_identities;
  spec.yaws = cfg.yaws;
  spec.illuminations = cfg.illuminations;
  spec.channels = cfg.channels;
  spec.seed = cfg.dataset_seed;
  return spec;
}

inline train::Mode to_mode(const std::string& mode) {
  if (mode == "si") return train::Mode::single_image;
  if (mode == "mi") return train::Mode::multi_image;
  check(false, "run config: mode must be 'si' or 'mi', got '" + mode + "'");
  return train::Mode::single_image;
}

inline losses::OrthVariant to_orth_variant(const std::string& name) {
  if (name == "srip") return losses::OrthVariant::srip;
  if (name == "literal") return losses::OrthVariant::literal;
  check(false, "run config: orth_variant must be 'srip' or 'literal', got '" + name + "'");
  return losses::OrthVariant::srip;
}

inline train::TrainConfig to_train_config(const RunConfig& cfg) {
  train::TrainConfig tc;
  tc.mode = to_mode(cfg.mode);
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.decay_epochs = cfg.decay_epochs;
  tc.decay_factor = cfg.decay_factor;
  tc.d_steps_per_g = cfg.d_steps_per_g;
  tc.seed = cfg.seed;
  tc.weights = cfg.weights;
  tc.orth = to_orth_variant(cfg.orth_variant);
  tc.sr_supervision = cfg.sr_supervision;
  tc.gen.channels = cfg.channels;
  tc.gen.base_channels = cfg.base_channels;
  tc.gen.n_rdb = cfg.n_rdb;
  tc.gen.rdb_layers = cfg.rdb_layers;
  tc.gen.growth = cfg.growth;
  tc.gen.lr_size = cfg.lr_size;
  tc.gen.hr_size = cfg.hr_size;
  tc.gen.fusion = model::fusion_from_name(cfg.fusion);
  tc.gen.n_inputs = cfg.n_inputs;
  tc.gen.sr_module = cfg.sr_module;
  tc.d_base = cfg.d_base;
  tc.emb.channels = cfg.channels;
  tc.emb.image_size = cfg.hr_size;
  tc.emb.base = cfg.emb_base;
  tc.emb.d1 = cfg.emb_d1;
  tc.emb_epochs = cfg.emb_epochs;
  tc.emb_lr = cfg.emb_lr;
  return tc;
}

// The six ablation switches, named after the model variants they produce.
inline void apply_ablation(RunConfig& cfg, const std::string& name) {
  if (name == "no_sr_module")
    cfg.sr_module = false;
  else if (name == "no_sr_supervision")
    cfg.sr_supervision = false;
  else if (name == "no_l1")
    cfg.weights.pixel = 0.0;
  else if (name == "no_ssim")
    cfg.weights.patch = 0.0;
  else if (name == "no_id")
    cfg.weights.id = 0.0;
  else if (name == "no_adv")
    cfg.weights.adv = 0.0;
  else
    check(false, "unknown ablation '" + name +
                     "' (expected no_sr_module, no_sr_supervision, no_l1, no_ssim, no_id, "
                     "no_adv)");
}

}  // namespace frontsr::cli
