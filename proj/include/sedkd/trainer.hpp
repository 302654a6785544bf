#pragma once

// Two-stage co-training of the teacher and student over the strong, weak and
// unlabeled pools, with dev-set model selection by event-based F1.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sedkd/data.hpp"
#include "sedkd/losses.hpp"
#include "sedkd/metrics.hpp"
#include "sedkd/models.hpp"
#include "sedkd/postprocess.hpp"

namespace sedkd::train {

struct AblationFlags {
  bool tfd = true;
  bool afl = true;
  losses::DfdVariant dfd = losses::DfdVariant::none;

  bool operator==(const AblationFlags&) const = default;
};

// "pts", "pts+tfd", "pts+afl", "pts+tfd+afl", optionally followed by
// "+dfd_mse", "+dfd_dist" or "+dfd_dist_wu".
AblationFlags parse_ablation(const std::string& text);
std::string format_ablation(const AblationFlags& flags);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

enum class PostMode { esp, avg, none };
const char* post_mode_name(PostMode mode) noexcept;
PostMode parse_post_mode(const std::string& name);

enum class AtSource { teacher, student };
const char* at_source_name(AtSource s) noexcept;
AtSource parse_at_source(const std::string& name);

struct PostConfig {
  PostMode mode = PostMode::esp;
  double eta = 1.0 / 3.0;
  double threshold = 0.5;
  AtSource at_source = AtSource::teacher;

  void validate() const;
  bool operator==(const PostConfig&) const = default;
};

struct TrainConfig {
  int epochs = 60;
  std::size_t n_strong = 6, n_weak = 6, n_unlabeled = 12;  // clips per batch
  std::size_t steps_per_epoch = 0;                          // 0: one pass over the largest pool
  AdamConfig adam;
  losses::ScheduleParams schedule;
  AblationFlags ablation;
  losses::FocalVariant focal = losses::FocalVariant::as_printed;
  double pseudo_threshold = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// ---- batches --------------------------------------------------------------------

struct Pools {
  const std::vector<data::TrainClip>* strong = nullptr;
  const std::vector<data::TrainClip>* weak = nullptr;
  const std::vector<data::TrainClip>* unlabeled = nullptr;
};

struct BatchEntry {
  Tier tier;
  std::size_t index;  // into the tier's pool
};
using Batch = std::vector<BatchEntry>;

std::size_t steps_for_epoch(const TrainConfig& config, const Pools& pools);

// All batches of one epoch; a function of (seed, epoch) only. Each pool is
// walked in a fresh random order, reshuffled whenever it runs out.
std::vector<Batch> epoch_batches(const TrainConfig& config, const Pools& pools, int epoch);

// ---- model bundle ---------------------------------------------------------------

struct ModelBundle {
  models::ModelConfig config;
  models::Crnn teacher;
  models::Crnn student;
  losses::TfdProjection projection;

  ModelBundle(const models::ModelConfig& config, std::uint64_t seed);
  std::vector<std::pair<std::string, nd::Var>> named_parameters() const;
};

std::vector<nd::NamedArray> parameter_snapshot(const ModelBundle& models);
// Throws a version error when names or shapes disagree with the bundle.
void restore_parameters(ModelBundle& models, const std::vector<nd::NamedArray>& tensors);

class Adam {
 public:
  Adam(std::vector<nd::Var> params, AdamConfig config);
  void step();
  std::size_t steps() const { return t_; }
  std::vector<nd::NamedArray> state(const std::vector<std::string>& names) const;
  void restore(const std::vector<nd::NamedArray>& tensors, const std::vector<std::string>& names,
               std::size_t steps);

 private:
  std::vector<nd::Var> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

// ---- inference and dev scoring ----------------------------------------------------

struct ClipPrediction {
  nd::Array frame_probs;  // student [T, C]
  nd::Array clip_probs;   // [C] from the configured AT source
};

ClipPrediction predict_clip(const ModelBundle& models, const nd::Array& features,
                            AtSource at_source);

post::WindowTable window_table_for(const PostConfig& post, const std::vector<EventSegment>& strong,
                                   std::size_t n_classes, double frame_rate);

std::vector<EventSegment> decode_clip(const ClipPrediction& pred, const post::WindowTable& table,
                                      const PostConfig& post, double frame_rate,
                                      const std::string& clip);

struct DevScores {
  metrics::ScoreReport event, segment, at;
};

DevScores evaluate_clips(const ModelBundle& models, const std::vector<data::EvalClip>& clips,
                         const post::WindowTable& table, const PostConfig& post,
                         double frame_rate, double clip_seconds, std::size_t n_classes);

// ---- training -------------------------------------------------------------------

struct EpochReport {
  int epoch = 0;
  int stage = 1;
  double alpha = 0.0, beta = 0.0;
  std::vector<losses::LossTerms> batches;  // per-batch term values
  losses::LossTerms totals;                // sum over batches
};

struct TrainState {
  int epoch = 0;  // last completed epoch
  double best_f1 = -1.0;
  int best_epoch = 0;
};

struct TraceRow {
  int epoch = 0, stage = 1;
  double alpha = 0, beta = 0;
  losses::LossTerms mean_terms;  // per-batch mean
  double dev_event_f1 = 0, dev_segment_f1 = 0, dev_at_f1 = 0;
  double best_event_f1 = 0;
};

std::string trace_header();
std::string trace_line(const TraceRow& row);

class Trainer {
 public:
  Trainer(models::ModelConfig model_config, TrainConfig config, PostConfig post,
          const data::TrainingData& data);

  EpochReport train_epoch();
  DevScores evaluate_dev() const;

  // Runs the remaining epochs. With an output directory: writes trace.csv,
  // loss_trace.csv, best.ckpt and last.ckpt after every epoch.
  std::vector<TraceRow> run(const std::string& out_dir = {},
                            const std::function<void(const TraceRow&)>& on_epoch = {});

  void save_last(const std::string& path) const;
  void resume(const std::string& out_dir);

  const TrainState& state() const { return state_; }
  const ModelBundle& models() const { return models_; }
  ModelBundle& models() { return models_; }
  const post::WindowTable& window_table() const { return table_; }
  const std::vector<TraceRow>& trace() const { return trace_; }

 private:
  const data::TrainClip& clip(const BatchEntry& e) const;
  const losses::ClipTargets& targets(const BatchEntry& e) const;

  models::ModelConfig model_config_;
  TrainConfig config_;
  PostConfig post_;
  const data::TrainingData& data_;
  ModelBundle models_;
  std::vector<std::string> param_names_;
  Adam adam_;
  post::WindowTable table_;
  std::vector<losses::ClipTargets> strong_targets_, weak_targets_, unlabeled_targets_;
  TrainState state_;
  std::vector<TraceRow> trace_;
};

}  // namespace sedkd::train
