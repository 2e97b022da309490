#include "avur/harness/config.hpp"


#include <fstream>
#include <functional>
#include <sstream>

namespace avur {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

double to_real(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> to_snrs(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) {
    try {
      out.push_back(parse_condition(item));
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs, std::function<std::string(const T&)> f) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field int_field(T ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<T>(to_integer(k, v)); },
          [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}
template <typename T>
Field task_int_field(T ToyTaskConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.task.*m = static_cast<T>(to_integer(k, v));
          },
          [m](const ExperimentConfig& c) { return std::to_string(c.task.*m); }};
}
Field real_field(double ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = to_real(k, v); },
          [m](const ExperimentConfig& c) { return format_double(c.*m); }};
}
Field task_real_field(double ToyTaskConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.task.*m = to_real(k, v); },
          [m](const ExperimentConfig& c) { return format_double(c.task.*m); }};
}
Field bool_field(bool ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = to_bool(k, v); },
          [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}
Field int_list_field(std::vector<int> ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            std::vector<int> xs;
            for (const auto& item : split_list(v)) xs.push_back(static_cast<int>(to_integer(k, item)));
            c.*m = xs;
          },
          [m](const ExperimentConfig& c) {
            return join<int>(c.*m, [](const int& x) { return std::to_string(x); });
          }};
}
Field snr_field(std::vector<double> ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = to_snrs(k, v); },
          [m](const ExperimentConfig& c) { return join<double>(c.*m, [](const double& x) { return condition_name(x); }); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["vocab"] = task_int_field(&ToyTaskConfig::vocab);
    f["visemes"] = task_int_field(&ToyTaskConfig::visemes);
    f["viseme_map"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                         c.task.viseme_map.clear();
                         for (const auto& item : split_list(v))
                           c.task.viseme_map.push_back(static_cast<int>(to_integer(k, item)));
                       },
                       [](const ExperimentConfig& c) {
                         return join<int>(c.task.viseme_map, [](const int& x) { return std::to_string(x); });
                       }};
    f["min_len"] = task_int_field(&ToyTaskConfig::min_len);
    f["max_len"] = task_int_field(&ToyTaskConfig::max_len);
    f["train_size"] = task_int_field(&ToyTaskConfig::train_size);
    f["dev_size"] = task_int_field(&ToyTaskConfig::dev_size);
    f["test_size"] = task_int_field(&ToyTaskConfig::test_size);
    f["audio_jitter"] = task_real_field(&ToyTaskConfig::audio_jitter);
    f["visual_jitter"] = task_real_field(&ToyTaskConfig::visual_jitter);
    f["audio_dim"] = task_int_field(&ToyTaskConfig::audio_dim);
    f["visual_dim"] = task_int_field(&ToyTaskConfig::visual_dim);
    f["encoder_depth"] = task_int_field(&ToyTaskConfig::encoder_depth);
    f["seeds"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                    c.seeds.clear();
                    for (const auto& item : split_list(v)) {
                      const long long s = to_integer(k, item);
                      if (s < 0) throw ConfigError(k + ": seeds must be non-negative");
                      c.seeds.push_back(static_cast<std::uint64_t>(s));
                    }
                  },
                  [](const ExperimentConfig& c) {
                    return join<std::uint64_t>(c.seeds, [](const std::uint64_t& x) { return std::to_string(x); });
                  }};
    f["snrs"] = snr_field(&ExperimentConfig::snrs);
    f["train_snrs"] = snr_field(&ExperimentConfig::train_snrs);
    f["noise"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                    try {
                      c.noise = parse_noise_kind(v);
                    } catch (const std::exception& e) {
                      throw ConfigError(k + ": " + e.what());
                    }
                  },
                  [](const ExperimentConfig& c) { return std::string(to_string(c.noise)); }};
    f["model_dim"] = int_field(&ExperimentConfig::model_dim);
    f["heads"] = int_field(&ExperimentConfig::heads);
    f["decoder_layers"] = int_field(&ExperimentConfig::decoder_layers);
    f["ff_dim"] = int_field(&ExperimentConfig::ff_dim);
    f["sma_layers"] = int_list_field(&ExperimentConfig::sma_layers);
    f["use_sma"] = bool_field(&ExperimentConfig::use_sma);
    f["use_amf"] = bool_field(&ExperimentConfig::use_amf);
    f["use_vur"] = bool_field(&ExperimentConfig::use_vur);
    f["nbest"] = int_field(&ExperimentConfig::nbest);
    f["beam"] = int_field(&ExperimentConfig::beam);
    f["pretrain_steps"] = int_field(&ExperimentConfig::pretrain_steps);
    f["stage1_steps"] = int_field(&ExperimentConfig::stage1_steps);
    f["batch"] = int_field(&ExperimentConfig::batch);
    f["lr"] = real_field(&ExperimentConfig::lr);
    f["codebook_k"] = int_field(&ExperimentConfig::codebook_k);
    f["unit_layer"] = int_field(&ExperimentConfig::unit_layer);
    f["kmeans_iters"] = int_field(&ExperimentConfig::kmeans_iters);
    f["scorer_pretrain_utts"] = int_field(&ExperimentConfig::scorer_pretrain_utts);
    f["scorer_pretrain_steps"] = int_field(&ExperimentConfig::scorer_pretrain_steps);
    f["scorer_pretrain_lr"] = real_field(&ExperimentConfig::scorer_pretrain_lr);
    f["scorer_steps"] = int_field(&ExperimentConfig::scorer_steps);
    f["scorer_batch"] = int_field(&ExperimentConfig::scorer_batch);
    f["scorer_lr"] = real_field(&ExperimentConfig::scorer_lr);
    f["lora_rank"] = int_field(&ExperimentConfig::lora_rank);
    f["lora_alpha"] = real_field(&ExperimentConfig::lora_alpha);
    f["scorer_train_utts"] = int_field(&ExperimentConfig::scorer_train_utts);
    f["lambda"] = real_field(&ExperimentConfig::lambda);
    f["lambda_grid"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                          c.lambda_grid.clear();
                          for (const auto& item : split_list(v)) c.lambda_grid.push_back(to_real(k, item));
                        },
                        [](const ExperimentConfig& c) {
                          return join<double>(c.lambda_grid, [](const double& x) { return format_double(x); });
                        }};
    f["ablation_snr"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                           const auto xs = to_snrs(k, v);
                           if (xs.size() != 1) throw ConfigError(k + ": expected one condition");
                           c.ablation_snr = xs.front();
                         },
                         [](const ExperimentConfig& c) { return condition_name(c.ablation_snr); }};
    f["sweep_layers"] = int_list_field(&ExperimentConfig::sweep_layers);
    f["sweep_k"] = int_list_field(&ExperimentConfig::sweep_k);
    f["out_dir"] = {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                    [](const ExperimentConfig& c) { return c.out_dir; }};
    f["threads"] = int_field(&ExperimentConfig::threads);
    return f;
  }();
  return table;
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, trim(value));
}

void apply_config(ExperimentConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  apply_config(cfg, in, path);
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& kv : fields()) keys.push_back(kv.first);
  return keys;
}

}  // namespace avur
