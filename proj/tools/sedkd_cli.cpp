#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sedkd/sedkd.h"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string data_root;
  bool quiet = false;
};

void print_line(const char* line, void* user) {
  if (!*static_cast<bool*>(user)) std::printf("%s\n", line);
  std::fflush(stdout);
}

int report_failure(sedkd_status status) {
  std::fprintf(stderr, "sedkd: %s error: %s\n", sedkd_last_error_kind(), sedkd_last_error());
  return static_cast<int>(status);
}

class ConfigHandle {
 public:
  ~ConfigHandle() { sedkd_config_destroy(handle_); }
  sedkd_config* get() const { return handle_; }
  sedkd_config** out() { return &handle_; }

 private:
  sedkd_config* handle_ = nullptr;
};

// Loads the config and applies the generic overrides; returns a status.
sedkd_status load(const Options& opt, ConfigHandle& cfg) {
  sedkd_status s = opt.config_path.empty() ? sedkd_config_create(cfg.out())
                                           : sedkd_config_load(opt.config_path.c_str(), cfg.out());
  if (s != SEDKD_OK) return s;
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "sedkd: --set expects key=value, got '%s'\n", kv.c_str());
      return SEDKD_ERR_USAGE;
    }
    s = sedkd_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != SEDKD_OK) return s;
  }
  if (!opt.out_dir.empty()) {
    s = sedkd_config_set(cfg.get(), "paths.out_dir", opt.out_dir.c_str());
    if (s != SEDKD_OK) return s;
  }
  if (!opt.data_root.empty()) {
    s = sedkd_config_set(cfg.get(), "paths.data_root", opt.data_root.c_str());
    if (s != SEDKD_OK) return s;
  }
  return SEDKD_OK;
}

sedkd_status set(ConfigHandle& cfg, const char* key, const std::string& value) {
  return sedkd_config_set(cfg.get(), key, value.c_str());
}

std::string get(const ConfigHandle& cfg, const char* key) {
  size_t needed = 0;
  sedkd_config_get(cfg.get(), key, nullptr, 0, &needed);
  std::string buf(needed, '\0');
  sedkd_config_get(cfg.get(), key, buf.data(), buf.size(), &needed);
  buf.resize(needed ? needed - 1 : 0);
  return buf;
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sedkd: teacher/student sound event detection toolkit on feature data"};
  app.set_version_flag("--version", std::string(sedkd_version()));
  app.require_subcommand(1);

  Options opt;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "Config file (defaults apply otherwise)")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "Override a config key: section.key=value");
    sub->add_option("-o,--out-dir", opt.out_dir, "Output directory (paths.out_dir)");
    sub->add_flag("-q,--quiet", opt.quiet, "Suppress progress output");
  };

  std::optional<unsigned long long> seed;
  std::optional<std::string> ablation, mode, tier;
  std::optional<int> epochs;
  std::optional<double> eta, threshold;
  bool resume = false;
  unsigned threads = 1;
  std::string checkpoint, predictions, refs, preds;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic three-tier dataset");
  common(gen);
  gen->add_option("--seed", seed, "Dataset seed (data.seed)");

  auto* trn = app.add_subcommand("train", "Two-stage teacher/student training");
  common(trn);
  trn->add_option("-d,--data", opt.data_root, "Dataset root (paths.data_root)");
  trn->add_option("--seed", seed, "Training seed (train.seed)");
  trn->add_option("--ablation", ablation, "pts, pts+tfd, pts+tfd+afl, ...");
  trn->add_option("--epochs", epochs, "Epoch budget (train.epochs)");
  trn->add_flag("--resume", resume, "Continue from <out-dir>/last.ckpt");

  auto* prd = app.add_subcommand("predict", "Write frame posteriors and raw decodings");
  common(prd);
  prd->add_option("-d,--data", opt.data_root, "Dataset root (paths.data_root)");
  prd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  prd->add_option("--tier", tier, "strong, weak, unlabeled, dev or all (default dev)");
  prd->add_option("--threads", threads, "Worker threads for prediction")
      ->check(CLI::Range(1u, 256u));

  auto* pst = app.add_subcommand("postprocess", "Median-filter and decode posteriors");
  common(pst);
  pst->add_option("-d,--data", opt.data_root, "Dataset root with the strong labels");
  pst->add_option("--predictions", predictions, "Output directory of 'predict'")->required();
  pst->add_option("--eta", eta, "Window scale (post.eta, default 1/3)");
  pst->add_option("--threshold", threshold, "Decision threshold (post.threshold)");
  pst->add_option("--mode", mode, "esp, avg or none (post.mode)");

  auto* evl = app.add_subcommand("evaluate", "Score predictions against references");
  common(evl);
  evl->add_option("-d,--data", opt.data_root, "Dataset root (class names, clip length)");
  evl->add_option("--refs", refs, "Reference segment file")->required()->check(CLI::ExistingFile);
  evl->add_option("--preds", preds, "Predicted segment file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(SEDKD_ERR_USAGE);
  }

  ConfigHandle cfg;
  sedkd_status s = load(opt, cfg);
  if (s != SEDKD_OK) return report_failure(s);
  bool quiet = opt.quiet;
  const std::string data_root = get(cfg, "paths.data_root");
  const std::string out_dir = get(cfg, "paths.out_dir");
  const char* data_arg = data_root.c_str();

  if (*gen) {
    if (seed) s = set(cfg, "data.seed", std::to_string(*seed));
    const std::string root = opt.out_dir.empty() ? data_root : out_dir;
    if (s == SEDKD_OK) s = sedkd_gen_data(cfg.get(), root.c_str(), print_line, &quiet);
  } else if (*trn) {
    if (seed) s = set(cfg, "train.seed", std::to_string(*seed));
    if (s == SEDKD_OK && ablation) s = sedkd_config_set_ablation(cfg.get(), ablation->c_str());
    if (s == SEDKD_OK && epochs) s = set(cfg, "train.epochs", std::to_string(*epochs));
    double best = 0.0;
    if (s == SEDKD_OK)
      s = sedkd_train(cfg.get(), data_arg, out_dir.c_str(), resume ? 1 : 0, &best, print_line,
                      &quiet);
  } else if (*prd) {
    s = sedkd_predict(cfg.get(), checkpoint.c_str(), data_arg, out_dir.c_str(),
                      tier ? tier->c_str() : nullptr, threads, print_line, &quiet);
  } else if (*pst) {
    if (eta) s = set(cfg, "post.eta", number(*eta));
    if (s == SEDKD_OK && threshold) s = set(cfg, "post.threshold", number(*threshold));
    if (s == SEDKD_OK && mode) s = set(cfg, "post.mode", *mode);
    if (s == SEDKD_OK)
      s = sedkd_postprocess(cfg.get(), predictions.c_str(), data_arg, out_dir.c_str(), print_line,
                            &quiet);
  } else if (*evl) {
    sedkd_report* report = nullptr;
    s = sedkd_evaluate(refs.c_str(), preds.c_str(), data_arg, out_dir.c_str(), &report,
                       print_line, &quiet);
    sedkd_report_destroy(report);
  }
  return s == SEDKD_OK ? 0 : report_failure(s);
}
