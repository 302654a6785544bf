#pragma once

// File-level pipeline steps shared by the C API and the acceptance suite.
//
// Output layout:
//   gen-data     <root>/ dataset files (see data.hpp) + config.cfg
//   train        <out>/  config.cfg best.ckpt last.ckpt trace.csv loss_trace.csv window_table.csv
//   predict      <out>/  posteriors/<clip>.sedf clip_probs.tsv predictions_raw.tsv
//   postprocess  <out>/  window_table.csv predictions.tsv
//   evaluate     <out>/  report.csv report.txt

#include <functional>
#include <string>
#include <vector>

#include "sedkd/config.hpp"
#include "sedkd/data.hpp"
#include "sedkd/metrics.hpp"
#include "sedkd/trainer.hpp"

namespace sedkd::pipeline {

using Log = std::function<void(const std::string&)>;

data::GenerationSummary gen_data(const config::RunConfig& config, const std::string& root,
                                 const Log& log = {});

struct TrainSummary {
  train::TrainState state;
  std::vector<train::TraceRow> trace;
};

// With `resume`, continues from <out>/last.ckpt; the stored config.cfg must
// match `config` in everything but train.epochs.
TrainSummary train(const config::RunConfig& config, const std::string& data_root,
                   const std::string& out_dir, bool resume, const Log& log = {});

// tier: strong, weak, unlabeled, dev or all.
std::size_t predict(const config::RunConfig& config, const std::string& checkpoint,
                    const std::string& data_root, const std::string& out_dir,
                    const std::string& tier = "dev", unsigned threads = 1, const Log& log = {});

// Decodes the output of `predict` with the window table built from the
// dataset's strong labels and config.post.
std::size_t postprocess(const config::RunConfig& config, const std::string& predict_dir,
                        const std::string& data_root, const std::string& out_dir,
                        const Log& log = {});

struct EvalReport {
  std::vector<std::string> class_names;
  metrics::ScoreReport event, segment, tagging;
};

// Class names and clip length come from the dataset manifest under data_root.
EvalReport evaluate(const std::string& refs_path, const std::string& preds_path,
                    const std::string& data_root, const std::string& out_dir,
                    const Log& log = {});

}  // namespace sedkd::pipeline
