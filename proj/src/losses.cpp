#include "sedkd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "sedkd/errors.hpp"
#include "sedkd/postprocess.hpp"

namespace sedkd::losses {

namespace {

void require_same_shape(const nd::Var& probs, const nd::Array& labels, const char* op) {
  if (probs.shape() != labels.shape()) {
    fail(ErrorKind::dimension, std::string(op) + ": probabilities " +
                                   nd::shape_str(probs.shape()) + " vs labels " +
                                   nd::shape_str(labels.shape()));
  }
}

nd::Var clamp_probs(const nd::Var& p) { return nd::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

nd::Var binary_cross_entropy(const nd::Var& probs, const nd::Array& labels, const char* op) {
  require_same_shape(probs, labels, op);
  require(probs.size() > 0, ErrorKind::contract, std::string(op) + ": empty input");
  nd::Var p = clamp_probs(probs);
  nd::Var y = nd::constant(labels);
  nd::Var not_y = nd::one_minus(y);
  nd::Var ll = nd::add(nd::mul(y, nd::log(p)), nd::mul(not_y, nd::log(nd::one_minus(p))));
  return nd::scale(nd::mean(ll), -1.0);
}

// Accumulates weighted terms into one graph.
struct Sum {
  nd::Var value;
  double total = 0.0;
  void add(const nd::Var& term, double weight) {
    if (weight == 0.0) return;
    nd::Var w = weight == 1.0 ? term : nd::scale(term, weight);
    value = value ? nd::add(value, w) : w;
    total += weight * term.value().item();
  }
};

double inv(std::size_t n) { return n ? 1.0 / static_cast<double>(n) : 0.0; }

}  // namespace

const char* focal_variant_name(FocalVariant v) noexcept {
  return v == FocalVariant::as_printed ? "as_printed" : "standard";
}

FocalVariant parse_focal_variant(const std::string& name) {
  if (name == "as_printed") return FocalVariant::as_printed;
  if (name == "standard") return FocalVariant::standard;
  fail(ErrorKind::parameter, "unknown focal_variant '" + name + "'");
}

const char* dfd_variant_name(DfdVariant v) noexcept {
  switch (v) {
    case DfdVariant::none: return "none";
    case DfdVariant::mse: return "mse";
    case DfdVariant::dist: return "dist";
    case DfdVariant::dist_wu: return "dist_wu";
  }
  return "?";
}

DfdVariant parse_dfd_variant(const std::string& name) {
  if (name == "none") return DfdVariant::none;
  if (name == "mse") return DfdVariant::mse;
  if (name == "dist") return DfdVariant::dist;
  if (name == "dist_wu") return DfdVariant::dist_wu;
  fail(ErrorKind::parameter, "unknown dfd variant '" + name + "'");
}

void ScheduleParams::validate() const {
  require(gamma >= 0.0, ErrorKind::parameter, "schedule: gamma must be >= 0");
  require(lambda > 0.0 && lambda < 1.0, ErrorKind::parameter, "schedule: lambda must be in (0,1)");
  require(stage_switch >= 1, ErrorKind::parameter, "schedule: stage_switch must be >= 1");
  require(beta_ramp_len >= 1, ErrorKind::parameter, "schedule: beta_ramp_len must be >= 1");
}

MaskMatrix MaskMatrix::from_segments(const std::vector<EventSegment>& segments,
                                     std::size_t n_frames, double frame_rate) {
  std::size_t n_classes = 1;
  for (const auto& s : segments) n_classes = std::max(n_classes, s.label + 1);
  nd::Array grid = post::rasterize_segments(segments, n_frames, n_classes, frame_rate);
  MaskMatrix mask{std::vector<double>(n_frames, 0.0)};
  for (std::size_t t = 0; t < n_frames; ++t)
    for (std::size_t c = 0; c < n_classes; ++c)
      if (grid.at(t, c) > 0.0) mask.values[t] = 1.0;
  return mask;
}

TfdProjection TfdProjection::create(std::size_t d_teacher, std::size_t d_student, std::size_t d,
                                    std::mt19937_64& rng) {
  auto init = [&](std::size_t rows, const char* name) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + d));
    std::uniform_real_distribution<double> u(-limit, limit);
    nd::Array a({rows, d});
    for (auto& v : a.data()) v = u(rng);
    return nd::parameter(std::move(a), name);
  };
  return {init(d_teacher, "tfd.w_teacher"), init(d_student, "tfd.w_student")};
}

std::vector<std::pair<std::string, nd::Var>> TfdProjection::named_parameters() const {
  return {{w_teacher.name(), w_teacher}, {w_student.name(), w_student}};
}

nd::Var bce_weak(const nd::Var& clip_probs, const nd::Array& weak_labels) {
  return binary_cross_entropy(clip_probs, weak_labels, "bce_weak");
}

nd::Var bce_strong(const nd::Var& frame_probs, const nd::Array& frame_labels) {
  return binary_cross_entropy(frame_probs, frame_labels, "bce_strong");
}

nd::Var consistency_loss(const nd::Array& guider_clip_probs, const nd::Var& learner_clip_probs,
                         double threshold) {
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::parameter,
          "consistency_loss: threshold must lie in (0,1)");
  nd::Array pseudo = guider_clip_probs;
  for (auto& v : pseudo.data()) v = v >= threshold ? 1.0 : 0.0;
  return binary_cross_entropy(learner_clip_probs, pseudo, "consistency_loss");
}

nd::Var projected_distance(const nd::Var& teacher_feats, const nd::Var& student_feats,
                           const TfdProjection& proj) {
  const auto& ts = teacher_feats.shape();
  const auto& ss = student_feats.shape();
  require(ts.size() == 2 && ss.size() == 2 && ts[0] == ss[0], ErrorKind::dimension,
          "feature maps " + nd::shape_str(ts) + " and " + nd::shape_str(ss) +
              " do not share a frame count");
  return nd::row_l2_norm(
      nd::sub(nd::matmul(teacher_feats, proj.w_teacher), nd::matmul(student_feats, proj.w_student)));
}

nd::Var tfd_loss(const nd::Var& teacher_feats, const nd::Var& student_feats,
                 const TfdProjection& proj, const MaskMatrix& mask) {
  const std::size_t frames = student_feats.shape().empty() ? 0 : student_feats.shape()[0];
  require(mask.values.size() == frames && teacher_feats.shape().size() == 2 &&
              teacher_feats.shape()[0] == frames,
          ErrorKind::dimension,
          "tfd_loss: mask of length " + std::to_string(mask.values.size()) +
              " vs feature maps " + nd::shape_str(teacher_feats.shape()) + " / " +
              nd::shape_str(student_feats.shape()));
  nd::Var d = projected_distance(teacher_feats, student_feats, proj);
  nd::Var m = nd::constant(nd::Array({frames}, mask.values));
  return nd::scale(nd::sum(nd::mul(d, m)), 1.0 / static_cast<double>(frames));
}

nd::Var adaptive_focal(const nd::Var& probs, const nd::Array& labels, double gamma,
                       FocalVariant variant) {
  require(gamma >= 0.0, ErrorKind::parameter, "adaptive_focal: gamma must be >= 0");
  require_same_shape(probs, labels, "adaptive_focal");
  require(probs.size() > 0, ErrorKind::contract, "adaptive_focal: empty input");
  nd::Var y = nd::constant(labels);
  nd::Var p = clamp_probs(probs);
  // p_t = y p + (1 - y)(1 - p)
  nd::Var pt = nd::add(nd::mul(y, p), nd::mul(nd::one_minus(y), nd::one_minus(p)));
  nd::Var weight = variant == FocalVariant::as_printed
                       ? nd::one_minus(nd::pow_scalar(pt, gamma))
                       : nd::pow_scalar(nd::one_minus(pt), gamma);
  return nd::scale(nd::mean(nd::mul(weight, nd::log(pt))), -1.0);
}

nd::Var dfd_variant_loss(const nd::Var& teacher_feats, const nd::Var& student_feats,
                         const TfdProjection& proj, DfdVariant variant) {
  switch (variant) {
    case DfdVariant::mse: {
      nd::Var diff = nd::sub(nd::matmul(teacher_feats, proj.w_teacher),
                             nd::matmul(student_feats, proj.w_student));
      return nd::mean(nd::mul(diff, diff));
    }
    case DfdVariant::dist:
    case DfdVariant::dist_wu: {
      nd::Var d = projected_distance(teacher_feats, student_feats, proj);
      return nd::mean(d);
    }
    case DfdVariant::none: break;
  }
  fail(ErrorKind::parameter, "dfd_variant_loss: variant must be mse, dist or dist_wu");
}

double alpha_schedule(int epoch, const ScheduleParams& sched) {
  if (epoch <= sched.stage_switch) return 0.0;
  return 1.0 - std::pow(sched.lambda, epoch - sched.stage_switch);
}

double beta_schedule(int epoch, int ramp_len) {
  require(ramp_len >= 1, ErrorKind::parameter, "beta_schedule: ramp_len must be >= 1");
  const double x = std::clamp(static_cast<double>(epoch) / ramp_len, 0.0, 1.0);
  return std::exp(-5.0 * (1.0 - x) * (1.0 - x));
}

nd::Array downsample_labels(const nd::Array& frame_labels, std::size_t factor) {
  require(frame_labels.rank() == 2, ErrorKind::dimension, "downsample_labels: expected [T,C]");
  require(factor >= 1, ErrorKind::parameter, "downsample_labels: factor must be >= 1");
  const std::size_t frames = frame_labels.dim(0), classes = frame_labels.dim(1);
  const std::size_t out_frames = (frames + factor - 1) / factor;
  nd::Array out({out_frames, classes});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < classes; ++c)
      out.at(t / factor, c) = std::max(out.at(t / factor, c), frame_labels.at(t, c));
  return out;
}

const std::vector<std::string>& LossTerms::names() {
  static const std::vector<std::string> kNames{
      "weak_teacher",   "weak_student",           "strong_teacher",
      "strong_student", "con_teacher_to_student", "con_student_to_teacher",
      "tfd",            "dfd",                    "total"};
  return kNames;
}

std::vector<double> LossTerms::values() const {
  return {weak_teacher,           weak_student,           strong_teacher,
          strong_student,         con_teacher_to_student, con_student_to_teacher,
          tfd,                    dfd,                    total};
}

LossTerms& LossTerms::operator+=(const LossTerms& o) {
  weak_teacher += o.weak_teacher;
  weak_student += o.weak_student;
  strong_teacher += o.strong_teacher;
  strong_student += o.strong_student;
  con_teacher_to_student += o.con_teacher_to_student;
  con_student_to_teacher += o.con_student_to_teacher;
  tfd += o.tfd;
  dfd += o.dfd;
  total += o.total;
  return *this;
}

BatchCounts BatchCounts::of(const std::vector<ClipForward>& batch) {
  BatchCounts c;
  for (const auto& clip : batch) {
    ++c.all;
    if (clip.targets.weak_tags) ++c.tagged;
    if (clip.targets.frame_labels) ++c.strong;
    if (clip.targets.tier == Tier::weak || clip.targets.tier == Tier::unlabeled)
      ++c.weak_or_unlabeled;
  }
  return c;
}

BatchLoss clip_loss(const ClipForward& clip, const BatchCounts& counts,
                    const TfdProjection& proj, const LossSettings& settings) {
  require(counts.all >= 1, ErrorKind::contract, "joint loss on an empty batch");
  const auto& opts = settings.options;
  const auto& tgt = clip.targets;
  const bool focal = settings.stage == 2 && settings.focal;
  auto supervised = [&](const nd::Var& probs, const nd::Array& labels, bool frame_level) {
    if (focal) return adaptive_focal(probs, labels, settings.gamma, opts.focal);
    return frame_level ? bce_strong(probs, labels) : bce_weak(probs, labels);
  };
  auto term = [](const char* name, auto&& compute) {
    nd::Var v;
    try {
      v = compute();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric_domain) throw;
      fail(ErrorKind::numeric_failure,
           std::string("non-finite loss term '") + name + "' (" + e.what() + ")");
    }
    require(std::isfinite(v.value().item()), ErrorKind::numeric_failure,
            std::string("non-finite loss term '") + name + "'");
    return v;
  };

  Sum sum;
  LossTerms terms;
  if (tgt.weak_tags) {
    const double w = inv(counts.tagged);
    nd::Var lt = term("weak_teacher",
                      [&] { return supervised(clip.teacher.clip_probs, *tgt.weak_tags, false); });
    nd::Var ls = term("weak_student",
                      [&] { return supervised(clip.student.clip_probs, *tgt.weak_tags, false); });
    terms.weak_teacher = w * lt.value().item();
    terms.weak_student = w * ls.value().item();
    sum.add(lt, w);
    sum.add(ls, w);
  }
  if (tgt.frame_labels) {
    const double w = inv(counts.strong);
    nd::Array teacher_labels = downsample_labels(*tgt.frame_labels, opts.teacher_time_factor);
    nd::Var lt = term("strong_teacher",
                      [&] { return supervised(clip.teacher.frame_probs, teacher_labels, true); });
    nd::Var ls = term("strong_student",
                      [&] { return supervised(clip.student.frame_probs, *tgt.frame_labels, true); });
    terms.strong_teacher = w * lt.value().item();
    terms.strong_student = w * ls.value().item();
    sum.add(lt, w);
    sum.add(ls, w);
  }
  {
    const double w = inv(counts.all);
    nd::Var ts = term("con_teacher_to_student", [&] {
      return consistency_loss(clip.teacher.clip_probs.value(), clip.student.clip_probs,
                              opts.pseudo_threshold);
    });
    terms.con_teacher_to_student = w * ts.value().item();
    sum.add(ts, w);
    if (settings.alpha > 0.0) {
      nd::Var st = term("con_student_to_teacher", [&] {
        return consistency_loss(clip.student.clip_probs.value(), clip.teacher.clip_probs,
                                opts.pseudo_threshold);
      });
      terms.con_student_to_teacher = w * st.value().item();
      sum.add(st, settings.alpha * w);
    }
  }

  const bool want_tfd = opts.tfd && tgt.mask.has_value();
  const bool want_dfd = opts.dfd == DfdVariant::mse || opts.dfd == DfdVariant::dist ||
                        (opts.dfd == DfdVariant::dist_wu &&
                         (tgt.tier == Tier::weak || tgt.tier == Tier::unlabeled));
  if (want_tfd || want_dfd) {
    const std::size_t frames = clip.student.feature_map.shape()[0];
    nd::Var ft = nd::repeat_rows(clip.teacher.feature_map, opts.teacher_time_factor, frames);
    if (want_tfd) {
      const double w = inv(counts.strong);
      nd::Var l = term("tfd", [&] { return tfd_loss(ft, clip.student.feature_map, proj, *tgt.mask); });
      terms.tfd = w * l.value().item();
      sum.add(l, settings.beta * w);
    }
    if (want_dfd) {
      const double w =
          inv(opts.dfd == DfdVariant::dist_wu ? counts.weak_or_unlabeled : counts.all);
      nd::Var l =
          term("dfd", [&] { return dfd_variant_loss(ft, clip.student.feature_map, proj, opts.dfd); });
      terms.dfd = w * l.value().item();
      sum.add(l, settings.beta * w);
    }
  }
  terms.total = sum.total;
  if (!sum.value) sum.value = nd::constant(nd::Array::scalar(0.0));
  return {sum.value, terms};
}

BatchLoss joint_loss(const std::vector<ClipForward>& batch, const TfdProjection& proj,
                     const LossSettings& settings) {
  require(!batch.empty(), ErrorKind::contract, "joint loss on an empty batch");
  const BatchCounts counts = BatchCounts::of(batch);
  BatchLoss out;
  for (const auto& clip : batch) {
    BatchLoss part = clip_loss(clip, counts, proj, settings);
    out.total = out.total ? nd::add(out.total, part.total) : part.total;
    out.terms += part.terms;
  }
  return out;
}

BatchLoss total_loss_stage1(const std::vector<ClipForward>& batch, const TfdProjection& proj,
                            double alpha, double beta, const LossOptions& options) {
  return joint_loss(batch, proj, LossSettings{1, false, alpha, beta, 0.0, options});
}

BatchLoss total_loss_stage2(const std::vector<ClipForward>& batch, const TfdProjection& proj,
                            double alpha, double beta, double gamma,
                            const LossOptions& options) {
  return joint_loss(batch, proj, LossSettings{2, true, alpha, beta, gamma, options});
}

}  // namespace sedkd::losses
