#pragma once

// Run configuration shared by every CLI stage. Serialised as JSON with a
// fixed key order and every default materialised, so parse -> dump is the
// identity on canonical text.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "ranking.hpp"

namespace cbmir {

struct SyntheticParams {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t size = 64;
  std::uint64_t seed = 7;
  friend bool operator==(const SyntheticParams&, const SyntheticParams&) = default;
};

struct RunConfig {
  std::string dataset_path;
  bool synthetic = false;
  SyntheticParams synthetic_params;

  double model_scale = 1.0;
  std::size_t input_size = 224;
  std::size_t resize_size = 256;
  double keep_prob = 0.5;
  InitScheme init = InitScheme::paper;
  std::uint64_t init_seed = 1;

  double learning_rate = 1e-4;
  std::size_t epochs = 30;
  std::uint64_t train_seed = 2;
  bool shuffle_each_epoch = true;
  std::size_t batch_size = 1;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 3;

  FeatureLayer layer = FeatureLayer::fc1;
  std::size_t k = 10;
  bool class_filter = true;
  std::size_t eval_depth = 0;  // 0 ranks every candidate

  std::string output_dir = "out";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  void validate() const {
    if (!(model_scale > 0.0 && model_scale <= 1.0)) throw ConfigError("model.scale must lie in (0, 1]");
    if (input_size == 0 || resize_size < input_size)
      throw ConfigError("model.resize must be >= model.input_size > 0");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("model.keep_prob must lie in (0, 1]");
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw ConfigError("train.train_fraction must lie in (0, 1)");
    if (k < 1) throw ConfigError("retrieval.k must be >= 1");
  }
};

// Resize used for a given crop when none is configured: the 256 -> 224 ratio.
inline std::size_t default_resize_for(std::size_t input_size) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(input_size) * 256.0 / 224.0));
}

inline std::string init_name(InitScheme s) { return s == InitScheme::paper ? "paper" : "fan_in"; }

inline InitScheme parse_init(const std::string& s) {
  if (s == "paper") return InitScheme::paper;
  if (s == "fan_in") return InitScheme::fan_in;
  throw ConfigError("unknown init scheme '" + s + "' (expected paper or fan_in)");
}

inline FeatureLayer parse_layer(const std::string& s) {
  if (s == "FCL1" || s == "fc1" || s == "1") return FeatureLayer::fc1;
  if (s == "FCL2" || s == "fc2" || s == "2") return FeatureLayer::fc2;
  if (s == "FCL3" || s == "fc3" || s == "3") return FeatureLayer::fc3;
  throw ConfigError("unknown feature layer '" + s + "' (expected FCL1, FCL2 or FCL3)");
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["dataset"]["path"] = c.dataset_path;
  j["dataset"]["synthetic"] = c.synthetic;
  j["dataset"]["classes"] = c.synthetic_params.classes;
  j["dataset"]["per_class"] = c.synthetic_params.per_class;
  j["dataset"]["size"] = c.synthetic_params.size;
  j["dataset"]["seed"] = c.synthetic_params.seed;
  j["model"]["scale"] = c.model_scale;
  j["model"]["input_size"] = c.input_size;
  j["model"]["resize"] = c.resize_size;
  j["model"]["keep_prob"] = c.keep_prob;
  j["model"]["init"] = init_name(c.init);
  j["model"]["init_seed"] = c.init_seed;
  j["train"]["learning_rate"] = c.learning_rate;
  j["train"]["epochs"] = c.epochs;
  j["train"]["seed"] = c.train_seed;
  j["train"]["shuffle_each_epoch"] = c.shuffle_each_epoch;
  j["train"]["batch_size"] = c.batch_size;
  j["train"]["train_fraction"] = c.train_fraction;
  j["train"]["split_seed"] = c.split_seed;
  j["retrieval"]["layer"] = layer_label(c.layer);
  j["retrieval"]["k"] = c.k;
  j["retrieval"]["class_filter"] = c.class_filter;
  j["retrieval"]["eval_depth"] = c.eval_depth;
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* section, const char* key, T& out) {
  if (!j.contains(section)) return;
  const auto& s = j.at(section);
  if (!s.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
  if (!s.contains(key)) return;
  try {
    out = s.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace detail

// Missing fields keep their defaults; unknown sections are rejected.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    if (key != "dataset" && key != "model" && key != "train" && key != "retrieval" && key != "output_dir")
      throw ConfigError("unknown config section '" + key + "'");
  }
  RunConfig c;
  detail::read_field(j, "dataset", "path", c.dataset_path);
  detail::read_field(j, "dataset", "synthetic", c.synthetic);
  detail::read_field(j, "dataset", "classes", c.synthetic_params.classes);
  detail::read_field(j, "dataset", "per_class", c.synthetic_params.per_class);
  detail::read_field(j, "dataset", "size", c.synthetic_params.size);
  detail::read_field(j, "dataset", "seed", c.synthetic_params.seed);
  detail::read_field(j, "model", "scale", c.model_scale);
  detail::read_field(j, "model", "input_size", c.input_size);
  c.resize_size = default_resize_for(c.input_size);
  detail::read_field(j, "model", "resize", c.resize_size);
  detail::read_field(j, "model", "keep_prob", c.keep_prob);
  std::string init = init_name(c.init);
  detail::read_field(j, "model", "init", init);
  c.init = parse_init(init);
  detail::read_field(j, "model", "init_seed", c.init_seed);
  detail::read_field(j, "train", "learning_rate", c.learning_rate);
  detail::read_field(j, "train", "epochs", c.epochs);
  detail::read_field(j, "train", "seed", c.train_seed);
  detail::read_field(j, "train", "shuffle_each_epoch", c.shuffle_each_epoch);
  detail::read_field(j, "train", "batch_size", c.batch_size);
  detail::read_field(j, "train", "train_fraction", c.train_fraction);
  detail::read_field(j, "train", "split_seed", c.split_seed);
  std::string layer = layer_label(c.layer);
  detail::read_field(j, "retrieval", "layer", layer);
  c.layer = parse_layer(layer);
  detail::read_field(j, "retrieval", "k", c.k);
  detail::read_field(j, "retrieval", "class_filter", c.class_filter);
  detail::read_field(j, "retrieval", "eval_depth", c.eval_depth);
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  c.validate();
  return c;
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

}  // namespace cbmir
