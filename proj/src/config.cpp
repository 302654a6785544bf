#include "sedkd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "sedkd/errors.hpp"
#include "sedkd/segment_io.hpp"

namespace sedkd::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorKind::parameter,
          key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  return parse_integer<int>(key, text);
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  require(!text.empty() && text[0] != '-', ErrorKind::parameter,
          key + ": expected a non-negative integer, got '" + text + "'");
  return parse_integer<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec == std::errc() && ptr == text.data() + text.size()) return v;
  // Fractions such as 1/3.
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    const double num = parse_real(key, trim(text.substr(0, slash)));
    const double den = parse_real(key, trim(text.substr(slash + 1)));
    require(den != 0.0, ErrorKind::parameter, key + ": division by zero");
    return num / den;
  }
  fail(ErrorKind::parameter, key + ": expected a number, got '" + text + "'");
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(parse_size(key, trim(part)));
  require(!out.empty(), ErrorKind::parameter, key + ": empty list");
  return out;
}

struct Key {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

using Table = std::vector<std::pair<std::string, Key>>;

#define SIZE_KEY(name, field)                                                        \
  {name, Key{[](const RunConfig& c) { return std::to_string(c.field); },             \
             [](RunConfig& c, const std::string& v) { c.field = parse_size(name, v); }}}
#define INT_KEY(name, field)                                                         \
  {name, Key{[](const RunConfig& c) { return std::to_string(c.field); },             \
             [](RunConfig& c, const std::string& v) { c.field = parse_int(name, v); }}}
#define REAL_KEY(name, field)                                                        \
  {name, Key{[](const RunConfig& c) { return format_number(c.field); },              \
             [](RunConfig& c, const std::string& v) { c.field = parse_real(name, v); }}}
#define SEED_KEY(name, field)                                                        \
  {name, Key{[](const RunConfig& c) { return std::to_string(c.field); },             \
             [](RunConfig& c, const std::string& v) {                                \
               c.field = parse_integer<std::uint64_t>(name, v);                      \
             }}}

const Table& table() {
  static const Table keys = {
      SIZE_KEY("data.n_strong", data.n_strong),
      SIZE_KEY("data.n_weak", data.n_weak),
      SIZE_KEY("data.n_unlabeled", data.n_unlabeled),
      SIZE_KEY("data.n_dev", data.n_dev),
      SIZE_KEY("data.n_classes", data.n_classes),
      SIZE_KEY("data.n_frames", data.n_frames),
      SIZE_KEY("data.n_features", data.n_features),
      REAL_KEY("data.clip_seconds", data.clip_seconds),
      REAL_KEY("data.noise", data.noise),
      {"data.class_priors",
       Key{[](const RunConfig& c) { return data::format_number_list(c.data.class_priors); },
           [](RunConfig& c, const std::string& v) {
             c.data.class_priors = data::parse_number_list(v);
           }}},
      {"data.durations",
       Key{[](const RunConfig& c) { return data::format_duration_specs(c.data.durations); },
           [](RunConfig& c, const std::string& v) {
             c.data.durations = v.empty() ? std::vector<data::DurationSpec>{}
                                          : data::parse_duration_specs(v);
           }}},
      SIZE_KEY("data.max_events", data.max_events),
      REAL_KEY("data.template_width", data.template_width),
      SEED_KEY("data.seed", data.seed),

      SIZE_KEY("model.teacher_blocks", model.teacher_blocks),
      SIZE_KEY("model.student_blocks", model.student_blocks),
      SIZE_KEY("model.teacher_time_factor", model.teacher_time_factor),
      {"model.channels",
       Key{[](const RunConfig& c) { return join_sizes(c.model.channels); },
           [](RunConfig& c, const std::string& v) {
             c.model.channels = parse_sizes("model.channels", v);
           }}},
      SIZE_KEY("model.gru_hidden", model.gru_hidden),
      SIZE_KEY("model.gru_layers", model.gru_layers),
      SIZE_KEY("model.tfd_dim", model.tfd_dim),
      SIZE_KEY("model.linear_dim", model.linear_dim),
      SIZE_KEY("model.head_hidden", model.head_hidden),
      SIZE_KEY("model.kernel", model.kernel),
      REAL_KEY("model.dropout", model.dropout),

      INT_KEY("train.epochs", train.epochs),
      SIZE_KEY("train.batch_strong", train.n_strong),
      SIZE_KEY("train.batch_weak", train.n_weak),
      SIZE_KEY("train.batch_unlabeled", train.n_unlabeled),
      SIZE_KEY("train.steps_per_epoch", train.steps_per_epoch),
      REAL_KEY("train.lr", train.adam.lr),
      REAL_KEY("train.beta1", train.adam.beta1),
      REAL_KEY("train.beta2", train.adam.beta2),
      REAL_KEY("train.eps", train.adam.eps),
      {"train.ablation",
       Key{[](const RunConfig& c) { return train::format_ablation(c.train.ablation); },
           [](RunConfig& c, const std::string& v) { c.train.ablation = train::parse_ablation(v); }}},
      {"train.focal_variant",
       Key{[](const RunConfig& c) { return std::string(losses::focal_variant_name(c.train.focal)); },
           [](RunConfig& c, const std::string& v) {
             c.train.focal = losses::parse_focal_variant(v);
           }}},
      REAL_KEY("train.pseudo_threshold", train.pseudo_threshold),
      SEED_KEY("train.seed", train.seed),

      REAL_KEY("schedule.gamma", train.schedule.gamma),
      REAL_KEY("schedule.lambda", train.schedule.lambda),
      INT_KEY("schedule.stage_switch", train.schedule.stage_switch),
      INT_KEY("schedule.beta_ramp_len", train.schedule.beta_ramp_len),

      {"post.mode",
       Key{[](const RunConfig& c) { return std::string(train::post_mode_name(c.post.mode)); },
           [](RunConfig& c, const std::string& v) { c.post.mode = train::parse_post_mode(v); }}},
      REAL_KEY("post.eta", post.eta),
      REAL_KEY("post.threshold", post.threshold),
      {"post.at_source",
       Key{[](const RunConfig& c) { return std::string(train::at_source_name(c.post.at_source)); },
           [](RunConfig& c, const std::string& v) { c.post.at_source = train::parse_at_source(v); }}},

      {"paths.data_root", Key{[](const RunConfig& c) { return c.data_root; },
                              [](RunConfig& c, const std::string& v) { c.data_root = v; }}},
      {"paths.out_dir", Key{[](const RunConfig& c) { return c.out_dir; },
                            [](RunConfig& c, const std::string& v) { c.out_dir = v; }}},
  };
  return keys;
}

#undef SIZE_KEY
#undef INT_KEY
#undef REAL_KEY
#undef SEED_KEY

const Key& lookup(const std::string& key) {
  const auto& keys = table();
  auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.first == key; });
  require(it != keys.end(), ErrorKind::parameter, "unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

models::ModelConfig RunConfig::model_for(std::size_t n_classes, std::size_t n_features) const {
  models::ModelConfig m = model;
  m.n_classes = n_classes;
  m.feat_dim = n_features;
  return m;
}

void RunConfig::validate() const {
  data.validate();
  model_for(data.n_classes, data.n_features).validate();
  train.validate();
  post.validate();
  require(!data_root.empty(), ErrorKind::parameter, "paths.data_root must not be empty");
  require(!out_dir.empty(), ErrorKind::parameter, "paths.out_dir must not be empty");
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  lookup(key).set(config, trim(value));
}

std::string get_value(const RunConfig& config, const std::string& key) {
  return lookup(key).get(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, key] : table()) out.push_back(name);
  return out;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  static const std::set<std::string> sections = {"data",     "model", "train",
                                                 "schedule", "post",  "paths"};
  RunConfig config;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      require(line.back() == ']', ErrorKind::parameter, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      require(sections.count(section) > 0, ErrorKind::parameter,
              where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::parameter,
            where + ": expected 'key = value', got '" + line + "'");
    require(!section.empty(), ErrorKind::parameter, where + ": key outside of any section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    require(seen.insert(key).second, ErrorKind::parameter, where + ": duplicate key '" + key + "'");
    try {
      set_value(config, key, line.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.kind(), where + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const Error& e) {
    fail(e.kind(), origin + ": " + e.what());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string format_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& [name, key] : table()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + key.get(config) + "\n";
  }
  return out;
}

void save_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write config " + path);
  out << format_config(config);
  require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path);
}

}  // namespace sedkd::config
