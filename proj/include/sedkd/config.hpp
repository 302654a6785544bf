#pragma once

// Run configuration: a flat, line-oriented text format.
//
//   # comment
//   [section]
//   key = value
//
// Every key belongs to one of the sections data, model, train, schedule,
// post and paths. Unknown sections or keys, duplicates and malformed values
// are rejected. `format_config` writes every key with its resolved value.

#include <string>
#include <vector>

#include "sedkd/data.hpp"
#include "sedkd/models.hpp"
#include "sedkd/trainer.hpp"

namespace sedkd::config {

struct RunConfig {
  data::SynthConfig data;
  models::ModelConfig model;  // n_classes and feat_dim follow the dataset
  train::TrainConfig train;
  train::PostConfig post;
  std::string data_root = "data";
  std::string out_dir = "out";

  // Model configuration sized for a dataset with these dimensions.
  models::ModelConfig model_for(std::size_t n_classes, std::size_t n_features) const;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);
std::string format_config(const RunConfig& config);
void save_config(const std::string& path, const RunConfig& config);

// "section.key"
void set_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& config, const std::string& key);
std::vector<std::string> config_keys();

}  // namespace sedkd::config
