#pragma once

// Loss terms and schedules of the two-stage teacher/student objective.
//
// Stage 1:  weak^{t,s} + strong^{t,s} + con^{t->s} + alpha * con^{s->t} + beta * TFD
// Stage 2:  the same with the weak/strong BCE terms replaced by the adaptive
//           focal loss.
//
// Probabilities are clamped to [1e-7, 1 - 1e-7] before any log.

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sedkd/models.hpp"
#include "sedkd/ndgrad.hpp"
#include "sedkd/types.hpp"

namespace sedkd::losses {

inline constexpr double kProbEpsilon = 1e-7;

enum class FocalVariant {
  as_printed,  // weight (1 - p_t^gamma)
  standard,    // weight (1 - p_t)^gamma
};

enum class DfdVariant { none, mse, dist, dist_wu };

const char* focal_variant_name(FocalVariant v) noexcept;
FocalVariant parse_focal_variant(const std::string& name);
const char* dfd_variant_name(DfdVariant v) noexcept;
DfdVariant parse_dfd_variant(const std::string& name);

struct ScheduleParams {
  double gamma = 2.0;
  double lambda = 0.996;
  int stage_switch = 30;
  int beta_ramp_len = 30;

  void validate() const;
  bool operator==(const ScheduleParams&) const = default;
};

// Frame-level target-event mask: 1 where any strong segment covers the frame.
struct MaskMatrix {
  std::vector<double> values;

  static MaskMatrix from_segments(const std::vector<EventSegment>& segments, std::size_t n_frames,
                                  double frame_rate);
};

// Learned projections of teacher and student CNN features into a shared space.
struct TfdProjection {
  nd::Var w_teacher;  // [d_t, d]
  nd::Var w_student;  // [d_s, d]

  static TfdProjection create(std::size_t d_teacher, std::size_t d_student, std::size_t d,
                              std::mt19937_64& rng);
  std::vector<std::pair<std::string, nd::Var>> named_parameters() const;
};

nd::Var bce_weak(const nd::Var& clip_probs, const nd::Array& weak_labels);
nd::Var bce_strong(const nd::Var& frame_probs, const nd::Array& frame_labels);

// Guider probabilities are binarised (p >= threshold) into constant
// pseudo-labels, so no gradient reaches the guider.
nd::Var consistency_loss(const nd::Array& guider_clip_probs, const nd::Var& learner_clip_probs,
                         double threshold);

// (1/T) * sum_j ||(F_t W_t)_j - (F_s W_s)_j||_2 * M_j. Both feature maps must
// already have T rows.
nd::Var tfd_loss(const nd::Var& teacher_feats, const nd::Var& student_feats,
                 const TfdProjection& proj, const MaskMatrix& mask);

// Per-frame Euclidean distances D_j between the projected maps.
nd::Var projected_distance(const nd::Var& teacher_feats, const nd::Var& student_feats,
                           const TfdProjection& proj);

// -(1/N) * sum w(p_t) * log(p_t), p_t the probability of the true label.
nd::Var adaptive_focal(const nd::Var& probs, const nd::Array& labels, double gamma,
                       FocalVariant variant = FocalVariant::as_printed);

// Whole-map distillation baselines: mse, dist (unmasked TFD) and dist_wu
// (dist, applied by the caller to weak/unlabeled clips only).
nd::Var dfd_variant_loss(const nd::Var& teacher_feats, const nd::Var& student_feats,
                         const TfdProjection& proj, DfdVariant variant);

double alpha_schedule(int epoch, const ScheduleParams& sched);
double beta_schedule(int epoch, int ramp_len);

// Max over each group of `factor` frames (ragged tail included): frame
// labels at the teacher's compressed time resolution.
nd::Array downsample_labels(const nd::Array& frame_labels, std::size_t factor);

// ---- joint objective ---------------------------------------------------------------

struct ClipTargets {
  Tier tier = Tier::unlabeled;
  std::optional<nd::Array> weak_tags;     // [C]; strong and weak clips
  std::optional<nd::Array> frame_labels;  // [T, C]; strong clips
  std::optional<MaskMatrix> mask;         // [T]; strong clips
};

struct ClipForward {
  models::ModelOutput teacher;
  models::ModelOutput student;
  ClipTargets targets;
};

struct LossOptions {
  bool tfd = true;
  DfdVariant dfd = DfdVariant::none;
  FocalVariant focal = FocalVariant::as_printed;
  double pseudo_threshold = 0.5;
  std::size_t teacher_time_factor = 8;
};

struct LossSettings {
  int stage = 1;
  bool focal = false;  // stage 2 with AFL enabled
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 2.0;
  LossOptions options;
};

struct LossTerms {
  double weak_teacher = 0, weak_student = 0;
  double strong_teacher = 0, strong_student = 0;
  double con_teacher_to_student = 0, con_student_to_teacher = 0;
  double tfd = 0, dfd = 0;
  double total = 0;

  static const std::vector<std::string>& names();
  std::vector<double> values() const;
  LossTerms& operator+=(const LossTerms& other);
};

struct BatchLoss {
  nd::Var total;
  LossTerms terms;  // unweighted term values, total is the weighted sum
};

// How many clips in the batch each term averages over.
struct BatchCounts {
  std::size_t all = 0;
  std::size_t tagged = 0;  // strong + weak
  std::size_t strong = 0;
  std::size_t weak_or_unlabeled = 0;

  static BatchCounts of(const std::vector<ClipForward>& batch);
};

// Contribution of one clip; summing over the batch yields `joint_loss`.
BatchLoss clip_loss(const ClipForward& clip, const BatchCounts& counts,
                    const TfdProjection& proj, const LossSettings& settings);

BatchLoss joint_loss(const std::vector<ClipForward>& batch, const TfdProjection& proj,
                     const LossSettings& settings);

BatchLoss total_loss_stage1(const std::vector<ClipForward>& batch, const TfdProjection& proj,
                            double alpha, double beta, const LossOptions& options = {});
BatchLoss total_loss_stage2(const std::vector<ClipForward>& batch, const TfdProjection& proj,
                            double alpha, double beta, double gamma,
                            const LossOptions& options = {});

}  // namespace sedkd::losses
