#include "dbf/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dbf/transformer.hpp"

namespace dbf {

using nlohmann::json;

bool AblationConfig::uses(Modality m) const {
  return std::find(use_modalities.begin(), use_modalities.end(), m) != use_modalities.end();
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (ablation.mimax_on && batch_size < 2)
    throw ConfigError("config: batch_size must be at least 2 when the contrastive "
                      "regularizer is on (it needs in-batch negatives)");
  if (bottleneck_length == 0) throw ConfigError("config: bottleneck_length must be >= 1");
  if (fusion_layers == 0) throw ConfigError("config: fusion_layers must be >= 1");
  if (alpha < 0.0) throw ConfigError("config: alpha must be nonnegative");
  if (!(temperature > 0.0)) throw ConfigError("config: temperature must be positive");
  if (!(lr_new > 0.0) || !(lr_backbone > 0.0))
    throw ConfigError("config: learning rates must be positive");
  if (max_epochs == 0) throw ConfigError("config: max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("config: patience must be >= 1");
  if (fusion_dim < 2 || fusion_dim % kDefaultHeads != 0)
    throw ConfigError("config: fusion_dim must be a positive multiple of " +
                      std::to_string(kDefaultHeads));
  if (ablation.use_modalities.empty())
    throw ConfigError("config: use_modalities must not be empty");
  std::vector<Modality> sorted = ablation.use_modalities;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("config: use_modalities contains duplicates");
  if (!ablation.uses(ablation.center_modality))
    throw ConfigError(std::string("config: center_modality '") +
                      modality_name(ablation.center_modality) +
                      "' is not in use_modalities");
}

namespace {

size_t get_count(const json& v, const std::string& key, const std::string& origin) {
  if (v.is_number_unsigned()) return v.get<size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<size_t>();
  throw ConfigError(origin + ": key '" + key + "' must be a nonnegative integer");
}

double get_num(const json& v, const std::string& key, const std::string& origin) {
  if (!v.is_number()) throw ConfigError(origin + ": key '" + key + "' must be a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& key, const std::string& origin) {
  if (!v.is_boolean()) throw ConfigError(origin + ": key '" + key + "' must be a boolean");
  return v.get<bool>();
}

Modality parse_modality(const std::string& s, const std::string& origin) {
  if (s.size() != 1) throw ConfigError(origin + ": modality must be one of t/v/a, got '" + s + "'");
  try {
    return modality_from_tag(s[0]);
  } catch (const ConfigError&) {
    throw ConfigError(origin + ": modality must be one of t/v/a, got '" + s + "'");
  }
}

std::vector<Modality> parse_modalities(const std::string& compact, const std::string& origin) {
  std::vector<Modality> mods;
  for (char c : compact) {
    if (c == ',' || c == ' ') continue;
    mods.push_back(parse_modality(std::string(1, c), origin));
  }
  std::sort(mods.begin(), mods.end());
  return mods;
}

void parse_ablation(const json& obj, AblationConfig& ab, const std::string& origin) {
  if (!obj.is_object()) throw ConfigError(origin + ": 'ablation' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (key == "mimax_on") {
      ab.mimax_on = get_bool(value, key, origin);
    } else if (key == "bottleneck_on") {
      ab.bottleneck_on = get_bool(value, key, origin);
    } else if (key == "use_modalities") {
      if (!value.is_array()) throw ConfigError(origin + ": 'use_modalities' must be an array");
      std::vector<Modality> mods;
      for (const json& e : value) {
        if (!e.is_string()) throw ConfigError(origin + ": 'use_modalities' entries must be strings");
        mods.push_back(parse_modality(e.get<std::string>(), origin));
      }
      std::sort(mods.begin(), mods.end());
      ab.use_modalities = mods;
    } else if (key == "center_modality") {
      if (!value.is_string()) throw ConfigError(origin + ": 'center_modality' must be a string");
      ab.center_modality = parse_modality(value.get<std::string>(), origin);
    } else {
      throw ConfigError(origin + ": unknown ablation key '" + key + "'");
    }
  }
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : root.items()) {
    if (key == "batch_size") cfg.batch_size = get_count(value, key, origin);
    else if (key == "bottleneck_length") cfg.bottleneck_length = get_count(value, key, origin);
    else if (key == "fusion_layers") cfg.fusion_layers = get_count(value, key, origin);
    else if (key == "pre_layers") cfg.pre_layers = get_count(value, key, origin);
    else if (key == "alpha") cfg.alpha = get_num(value, key, origin);
    else if (key == "lr_new") cfg.lr_new = get_num(value, key, origin);
    else if (key == "lr_backbone") cfg.lr_backbone = get_num(value, key, origin);
    else if (key == "warmup_steps") cfg.warmup_steps = get_count(value, key, origin);
    else if (key == "max_epochs") cfg.max_epochs = get_count(value, key, origin);
    else if (key == "patience") cfg.patience = get_count(value, key, origin);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(get_count(value, key, origin));
    else if (key == "fusion_dim") cfg.fusion_dim = get_count(value, key, origin);
    else if (key == "temperature") cfg.temperature = get_num(value, key, origin);
    else if (key == "ablation") parse_ablation(value, cfg.ablation, origin);
    else throw ConfigError(origin + ": unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str(), path);
}

namespace {

bool parse_bool_text(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("override '" + key + "': expected true/false, got '" + v + "'");
}

size_t parse_count_text(const std::string& v, const std::string& key) {
  size_t pos = 0;
  unsigned long long parsed = 0;
  if (v.empty() || v[0] == '-')
    throw ConfigError("override '" + key + "': expected a nonnegative integer, got '" + v + "'");
  try {
    parsed = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("override '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("override '" + key + "': expected a nonnegative integer, got '" + v + "'");
  return static_cast<size_t>(parsed);
}

double parse_num_text(const std::string& v, const std::string& key) {
  size_t pos = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("override '" + key + "': expected a number, got '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("override '" + key + "': expected a number, got '" + v + "'");
  return parsed;
}

}  // namespace

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  if (key == "batch_size") cfg.batch_size = parse_count_text(value, key);
  else if (key == "bottleneck_length") cfg.bottleneck_length = parse_count_text(value, key);
  else if (key == "fusion_layers") cfg.fusion_layers = parse_count_text(value, key);
  else if (key == "pre_layers") cfg.pre_layers = parse_count_text(value, key);
  else if (key == "alpha") cfg.alpha = parse_num_text(value, key);
  else if (key == "lr_new") cfg.lr_new = parse_num_text(value, key);
  else if (key == "lr_backbone") cfg.lr_backbone = parse_num_text(value, key);
  else if (key == "warmup_steps") cfg.warmup_steps = parse_count_text(value, key);
  else if (key == "max_epochs") cfg.max_epochs = parse_count_text(value, key);
  else if (key == "patience") cfg.patience = parse_count_text(value, key);
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_count_text(value, key));
  else if (key == "fusion_dim") cfg.fusion_dim = parse_count_text(value, key);
  else if (key == "temperature") cfg.temperature = parse_num_text(value, key);
  else if (key == "ablation.mimax_on") cfg.ablation.mimax_on = parse_bool_text(value, key);
  else if (key == "ablation.bottleneck_on")
    cfg.ablation.bottleneck_on = parse_bool_text(value, key);
  else if (key == "ablation.use_modalities")
    cfg.ablation.use_modalities = parse_modalities(value, "override '" + key + "'");
  else if (key == "ablation.center_modality")
    cfg.ablation.center_modality = parse_modality(value, "override '" + key + "'");
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json ab;
  ab["mimax_on"] = cfg.ablation.mimax_on;
  ab["bottleneck_on"] = cfg.ablation.bottleneck_on;
  json mods = json::array();
  for (Modality m : cfg.ablation.use_modalities)
    mods.push_back(std::string(1, modality_tag(m)));
  ab["use_modalities"] = mods;
  ab["center_modality"] = std::string(1, modality_tag(cfg.ablation.center_modality));

  json root;
  root["batch_size"] = cfg.batch_size;
  root["bottleneck_length"] = cfg.bottleneck_length;
  root["fusion_layers"] = cfg.fusion_layers;
  root["pre_layers"] = cfg.pre_layers;
  root["alpha"] = cfg.alpha;
  root["lr_new"] = cfg.lr_new;
  root["lr_backbone"] = cfg.lr_backbone;
  root["warmup_steps"] = cfg.warmup_steps;
  root["max_epochs"] = cfg.max_epochs;
  root["patience"] = cfg.patience;
  root["seed"] = cfg.seed;
  root["fusion_dim"] = cfg.fusion_dim;
  root["temperature"] = cfg.temperature;
  root["ablation"] = ab;
  return root.dump();
}

}  // namespace dbf
