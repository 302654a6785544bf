#include "sedkd/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "sedkd/errors.hpp"
#include "sedkd/segment_io.hpp"

namespace sedkd::train {

namespace fs = std::filesystem;

namespace {

constexpr double kCheckpointVersion = 1.0;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::mt19937_64 model_stream(std::uint64_t seed, std::uint64_t which) {
  return stream(seed, 0x30DE1, which);
}

const std::vector<data::TrainClip>& pool_of(const Pools& pools, Tier tier) {
  const auto* p = tier == Tier::strong ? pools.strong
                  : tier == Tier::weak ? pools.weak
                                       : pools.unlabeled;
  static const std::vector<data::TrainClip> empty;
  return p ? *p : empty;
}

std::size_t count_of(const TrainConfig& c, Tier tier) {
  return tier == Tier::strong ? c.n_strong : tier == Tier::weak ? c.n_weak : c.n_unlabeled;
}

constexpr Tier kTrainTiers[] = {Tier::strong, Tier::weak, Tier::unlabeled};

losses::LossTerms scaled(const losses::LossTerms& t, double k) {
  losses::LossTerms o = t;
  for (double* f : {&o.weak_teacher, &o.weak_student, &o.strong_teacher, &o.strong_student,
                    &o.con_teacher_to_student, &o.con_student_to_teacher, &o.tfd, &o.dfd,
                    &o.total})
    *f *= k;
  return o;
}

void check_finite(const losses::LossTerms& terms, int epoch, const std::string& clip) {
  const auto values = terms.values();
  const auto& names = losses::LossTerms::names();
  for (std::size_t i = 0; i < values.size(); ++i)
    require(std::isfinite(values[i]), ErrorKind::numeric_failure,
            "non-finite loss term '" + names[i] + "' at epoch " + std::to_string(epoch) +
                " on clip '" + clip + "'");
}

void atomic_save(const std::string& path, const std::vector<nd::NamedArray>& tensors) {
  const std::string tmp = path + ".tmp";
  nd::save_checkpoint(tmp, tensors);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, ErrorKind::io, "cannot move checkpoint into place: " + path);
}

void atomic_write(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + tmp);
    out << text;
    require(static_cast<bool>(out), ErrorKind::io, "write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, ErrorKind::io, "cannot move file into place: " + path);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && ptr == s.data() + s.size(), ErrorKind::parse,
          where + ": bad number '" + s + "'");
  return v;
}

TraceRow parse_trace_line(const std::string& line, const std::string& where) {
  const auto f = split(line, ',');
  const std::size_t n_terms = losses::LossTerms::names().size();
  require(f.size() == 4 + n_terms + 4, ErrorKind::parse, where + ": wrong column count");
  std::vector<double> v;
  for (const auto& x : f) v.push_back(parse_double(x, where));
  TraceRow r;
  r.epoch = static_cast<int>(v[0]);
  r.stage = static_cast<int>(v[1]);
  r.alpha = v[2];
  r.beta = v[3];
  auto& t = r.mean_terms;
  double* fields[] = {&t.weak_teacher, &t.weak_student, &t.strong_teacher, &t.strong_student,
                      &t.con_teacher_to_student, &t.con_student_to_teacher, &t.tfd, &t.dfd,
                      &t.total};
  for (std::size_t i = 0; i < n_terms; ++i) *fields[i] = v[4 + i];
  r.dev_event_f1 = v[4 + n_terms];
  r.dev_segment_f1 = v[5 + n_terms];
  r.dev_at_f1 = v[6 + n_terms];
  r.best_event_f1 = v[7 + n_terms];
  return r;
}

losses::ClipTargets make_targets(const data::TrainClip& clip, std::size_t n_classes,
                                 double frame_rate) {
  losses::ClipTargets t;
  t.tier = clip.tier;
  if (clip.weak_tags) t.weak_tags = nd::Array({n_classes}, *clip.weak_tags);
  if (clip.segments) {
    const std::size_t frames = clip.features.dim(0);
    t.frame_labels = post::rasterize_segments(*clip.segments, frames, n_classes, frame_rate);
    t.mask = losses::MaskMatrix::from_segments(*clip.segments, frames, frame_rate);
  }
  return t;
}

}  // namespace

// ---- names and configs --------------------------------------------------------------

AblationFlags parse_ablation(const std::string& text) {
  const auto parts = split(text, '+');
  require(!parts.empty() && parts[0] == "pts", ErrorKind::parameter,
          "ablation '" + text + "' must start with 'pts'");
  AblationFlags f{false, false, losses::DfdVariant::none};
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (p == "tfd") {
      f.tfd = true;
    } else if (p == "afl") {
      f.afl = true;
    } else if (p.rfind("dfd_", 0) == 0) {
      f.dfd = losses::parse_dfd_variant(p.substr(4));
      require(f.dfd != losses::DfdVariant::none, ErrorKind::parameter,
              "ablation: 'dfd_none' is not a component");
    } else {
      fail(ErrorKind::parameter, "ablation '" + text + "': unknown component '" + p + "'");
    }
  }
  return f;
}

std::string format_ablation(const AblationFlags& flags) {
  std::string s = "pts";
  if (flags.tfd) s += "+tfd";
  if (flags.afl) s += "+afl";
  if (flags.dfd != losses::DfdVariant::none)
    s += std::string("+dfd_") + losses::dfd_variant_name(flags.dfd);
  return s;
}

const char* post_mode_name(PostMode mode) noexcept {
  switch (mode) {
    case PostMode::esp: return "esp";
    case PostMode::avg: return "avg";
    case PostMode::none: return "none";
  }
  return "?";
}

PostMode parse_post_mode(const std::string& name) {
  if (name == "esp") return PostMode::esp;
  if (name == "avg") return PostMode::avg;
  if (name == "none") return PostMode::none;
  fail(ErrorKind::parameter, "unknown post-processing mode '" + name + "'");
}

const char* at_source_name(AtSource s) noexcept {
  return s == AtSource::teacher ? "teacher" : "student";
}

AtSource parse_at_source(const std::string& name) {
  if (name == "teacher") return AtSource::teacher;
  if (name == "student") return AtSource::student;
  fail(ErrorKind::parameter, "unknown AT source '" + name + "'");
}

void PostConfig::validate() const {
  require(eta > 0.0 && std::isfinite(eta), ErrorKind::parameter, "post: eta must be > 0");
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::parameter,
          "post: threshold must be in (0,1)");
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::parameter, "train: epochs must be >= 1");
  require(n_strong + n_weak + n_unlabeled >= 1, ErrorKind::parameter,
          "train: a batch needs at least one clip");
  require(adam.lr > 0.0, ErrorKind::parameter, "train: lr must be > 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          ErrorKind::parameter, "train: Adam betas must be in [0,1)");
  require(adam.eps > 0.0, ErrorKind::parameter, "train: Adam eps must be > 0");
  require(pseudo_threshold > 0.0 && pseudo_threshold < 1.0, ErrorKind::parameter,
          "train: pseudo_threshold must be in (0,1)");
  schedule.validate();
}

// ---- batches ---------------------------------------------------------------------------

std::size_t steps_for_epoch(const TrainConfig& config, const Pools& pools) {
  if (config.steps_per_epoch) return config.steps_per_epoch;
  std::size_t steps = 1;
  for (Tier t : kTrainTiers) {
    const std::size_t n = count_of(config, t);
    if (n) steps = std::max(steps, (pool_of(pools, t).size() + n - 1) / n);
  }
  return steps;
}

std::vector<Batch> epoch_batches(const TrainConfig& config, const Pools& pools, int epoch) {
  const std::size_t steps = steps_for_epoch(config, pools);
  std::vector<Batch> batches(steps);
  for (Tier t : kTrainTiers) {
    const std::size_t n = count_of(config, t);
    if (!n) continue;
    const std::size_t size = pool_of(pools, t).size();
    require(size > 0, ErrorKind::data,
            std::string("batch asks for ") + std::to_string(n) + " " + tier_name(t) +
                " clips but the pool is empty");
    require(n <= size, ErrorKind::data,
            std::string("batch asks for ") + std::to_string(n) + " " + tier_name(t) +
                " clips but the pool has only " + std::to_string(size));
    auto rng = stream(config.seed, 0xBA7C0 + static_cast<std::uint64_t>(t),
                      static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(size);
    std::size_t next = size;
    for (auto& batch : batches) {
      for (std::size_t k = 0; k < n; ++k) {
        if (next == size) {
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::shuffle(order.begin(), order.end(), rng);
          next = 0;
        }
        batch.push_back({t, order[next++]});
      }
    }
  }
  return batches;
}

// ---- model bundle ----------------------------------------------------------------------

namespace {

models::Crnn make_model(models::Role role, const models::ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto rng = model_stream(seed, role == models::Role::teacher ? 1 : 2);
  return models::Crnn(role, config, rng);
}

losses::TfdProjection make_projection(const models::Crnn& t, const models::Crnn& s,
                                      const models::ModelConfig& config, std::uint64_t seed) {
  auto rng = model_stream(seed, 3);
  return losses::TfdProjection::create(t.feature_dim(), s.feature_dim(), config.tfd_dim, rng);
}

}  // namespace

ModelBundle::ModelBundle(const models::ModelConfig& cfg, std::uint64_t seed)
    : config(cfg),
      teacher(make_model(models::Role::teacher, cfg, seed)),
      student(make_model(models::Role::student, cfg, seed)),
      projection(make_projection(teacher, student, cfg, seed)) {}

std::vector<std::pair<std::string, nd::Var>> ModelBundle::named_parameters() const {
  auto out = teacher.named_parameters();
  for (auto& p : student.named_parameters()) out.push_back(std::move(p));
  for (auto& p : projection.named_parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<nd::NamedArray> parameter_snapshot(const ModelBundle& models) {
  std::vector<nd::NamedArray> out;
  for (const auto& [name, var] : models.named_parameters()) out.push_back({name, var.value()});
  return out;
}

void restore_parameters(ModelBundle& models, const std::vector<nd::NamedArray>& tensors) {
  auto params = models.named_parameters();
  std::vector<const nd::Array*> values;
  for (const auto& [name, var] : params) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const nd::NamedArray& t) { return t.name == name; });
    require(it != tensors.end(), ErrorKind::version,
            "checkpoint lacks parameter '" + name + "'");
    require(it->value.shape() == var.shape(), ErrorKind::version,
            "checkpoint parameter '" + name + "' has shape " + nd::shape_str(it->value.shape()) +
                ", model expects " + nd::shape_str(var.shape()));
    values.push_back(&it->value);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second.mutable_value() = *values[i];
}

// ---- optimizer -------------------------------------------------------------------------

Adam::Adam(std::vector<nd::Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const nd::Array& g = p.grad();
    auto& value = p.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      value[k] -= config_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
    }
  }
}

std::vector<nd::NamedArray> Adam::state(const std::vector<std::string>& names) const {
  std::vector<nd::NamedArray> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam.m." + names[i], nd::Array(params_[i].shape(), m_[i])});
    out.push_back({"adam.v." + names[i], nd::Array(params_[i].shape(), v_[i])});
  }
  return out;
}

void Adam::restore(const std::vector<nd::NamedArray>& tensors,
                   const std::vector<std::string>& names, std::size_t steps) {
  auto find = [&](const std::string& name, std::size_t size) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const nd::NamedArray& t) { return t.name == name; });
    require(it != tensors.end(), ErrorKind::version, "checkpoint lacks '" + name + "'");
    require(it->value.size() == size, ErrorKind::version,
            "checkpoint entry '" + name + "' has the wrong size");
    const auto& v = it->value.vec();
    return std::vector<double>(v.begin(), v.end());
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = find("adam.m." + names[i], params_[i].size());
    v_[i] = find("adam.v." + names[i], params_[i].size());
  }
  t_ = steps;
}

// ---- inference -------------------------------------------------------------------------

ClipPrediction predict_clip(const ModelBundle& models, const nd::Array& features,
                            AtSource at_source) {
  nd::NoGradGuard no_grad;
  ClipPrediction out;
  auto student = models::student_forward(models.student, features);
  out.frame_probs = student.frame_probs.value();
  if (at_source == AtSource::student) {
    out.clip_probs = student.clip_probs.value();
  } else {
    out.clip_probs = models::teacher_forward(models.teacher, features).clip_probs.value();
  }
  return out;
}

post::WindowTable window_table_for(const PostConfig& post, const std::vector<EventSegment>& strong,
                                   std::size_t n_classes, double frame_rate) {
  post.validate();
  if (post.mode == PostMode::none) {
    post::WindowTable t;
    t.entries.assign(n_classes, post::WindowEntry{});
    return t;
  }
  const auto profile = post::build_duration_profile(strong, n_classes);
  return post::compute_window_table(
      profile, post.eta, frame_rate,
      post.mode == PostMode::esp ? post::WindowRule::knee : post::WindowRule::average);
}

std::vector<EventSegment> decode_clip(const ClipPrediction& pred, const post::WindowTable& table,
                                      const PostConfig& post, double frame_rate,
                                      const std::string& clip) {
  std::vector<double> onehot(pred.clip_probs.size());
  for (std::size_t c = 0; c < onehot.size(); ++c)
    onehot[c] = pred.clip_probs[c] >= post.threshold ? 1.0 : 0.0;
  return post::esp_pipeline(pred.frame_probs, onehot, table, post.threshold, frame_rate, clip);
}

DevScores evaluate_clips(const ModelBundle& models, const std::vector<data::EvalClip>& clips,
                         const post::WindowTable& table, const PostConfig& post,
                         double frame_rate, double clip_seconds, std::size_t n_classes) {
  std::vector<EventSegment> refs, preds;
  nd::Array ref_tags({clips.size(), n_classes}), pred_tags({clips.size(), n_classes});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& clip = clips[i];
    const auto pred = predict_clip(models, clip.features, post.at_source);
    auto segs = decode_clip(pred, table, post, frame_rate, clip.id);
    preds.insert(preds.end(), segs.begin(), segs.end());
    refs.insert(refs.end(), clip.segments.begin(), clip.segments.end());
    for (std::size_t c = 0; c < n_classes; ++c) {
      ref_tags.at(i, c) = clip.tags.at(c);
      pred_tags.at(i, c) = pred.clip_probs[c] >= post.threshold ? 1.0 : 0.0;
    }
  }
  DevScores s;
  s.event = metrics::event_based_f1(refs, preds, n_classes);
  s.segment = metrics::segment_based_f1(refs, preds, n_classes, 1.0, clip_seconds);
  s.at = metrics::clip_macro_f1(ref_tags, pred_tags);
  return s;
}

// ---- trace ------------------------------------------------------------------------------

std::string trace_header() {
  std::string h = "epoch,stage,alpha,beta";
  for (const auto& n : losses::LossTerms::names()) h += "," + n;
  h += ",dev_event_f1,dev_segment_f1,dev_at_f1,best_event_f1";
  return h;
}

std::string trace_line(const TraceRow& row) {
  std::string s = std::to_string(row.epoch) + "," + std::to_string(row.stage) + "," +
                  format_number(row.alpha) + "," + format_number(row.beta);
  for (double v : row.mean_terms.values()) s += "," + format_number(v);
  for (double v : {row.dev_event_f1, row.dev_segment_f1, row.dev_at_f1, row.best_event_f1})
    s += "," + format_number(v);
  return s;
}

// ---- trainer ----------------------------------------------------------------------------

Trainer::Trainer(models::ModelConfig model_config, TrainConfig config, PostConfig post,
                 const data::TrainingData& data)
    : model_config_(std::move(model_config)),
      config_(std::move(config)),
      post_(post),
      data_(data),
      models_(model_config_, config_.seed),
      adam_({}, config_.adam) {
  config_.validate();
  post_.validate();
  require(model_config_.n_classes == data_.n_classes(), ErrorKind::dimension,
          "model has " + std::to_string(model_config_.n_classes) + " classes, dataset has " +
              std::to_string(data_.n_classes()));
  require(model_config_.feat_dim == data_.n_features, ErrorKind::dimension,
          "model expects " + std::to_string(model_config_.feat_dim) +
              " features per frame, dataset has " + std::to_string(data_.n_features));
  std::vector<nd::Var> params;
  for (auto& [name, var] : models_.named_parameters()) {
    param_names_.push_back(name);
    params.push_back(var);
  }
  adam_ = Adam(std::move(params), config_.adam);
  table_ = window_table_for(post_, data_.strong_segments(), data_.n_classes(), data_.frame_rate);
  const std::size_t c = data_.n_classes();
  for (const auto& clip : data_.strong)
    strong_targets_.push_back(make_targets(clip, c, data_.frame_rate));
  for (const auto& clip : data_.weak)
    weak_targets_.push_back(make_targets(clip, c, data_.frame_rate));
  for (const auto& clip : data_.unlabeled)
    unlabeled_targets_.push_back(make_targets(clip, c, data_.frame_rate));
}

const data::TrainClip& Trainer::clip(const BatchEntry& e) const {
  const auto& pool = e.tier == Tier::strong ? data_.strong
                     : e.tier == Tier::weak ? data_.weak
                                            : data_.unlabeled;
  return pool.at(e.index);
}

const losses::ClipTargets& Trainer::targets(const BatchEntry& e) const {
  const auto& pool = e.tier == Tier::strong ? strong_targets_
                     : e.tier == Tier::weak ? weak_targets_
                                            : unlabeled_targets_;
  return pool.at(e.index);
}

EpochReport Trainer::train_epoch() {
  const int epoch = state_.epoch + 1;
  const auto& sched = config_.schedule;
  EpochReport report;
  report.epoch = epoch;
  report.stage = epoch <= sched.stage_switch ? 1 : 2;
  report.alpha = losses::alpha_schedule(epoch, sched);
  report.beta = losses::beta_schedule(epoch, sched.beta_ramp_len);

  losses::LossSettings settings;
  settings.stage = report.stage;
  settings.focal = config_.ablation.afl;
  settings.alpha = report.alpha;
  settings.beta = report.beta;
  settings.gamma = sched.gamma;
  settings.options.tfd = config_.ablation.tfd;
  settings.options.dfd = config_.ablation.dfd;
  settings.options.focal = config_.focal;
  settings.options.pseudo_threshold = config_.pseudo_threshold;
  settings.options.teacher_time_factor = model_config_.teacher_time_factor;

  const Pools pools{&data_.strong, &data_.weak, &data_.unlabeled};
  const auto batches = epoch_batches(config_, pools, epoch);
  auto dropout_rng = stream(config_.seed, 0xD80F, static_cast<std::uint64_t>(epoch));
  models::ForwardOptions fwd{true, &dropout_rng};
  auto params = models_.named_parameters();

  for (const auto& batch : batches) {
    for (auto& [name, var] : params)
      if (!var.grad().empty()) var.grad_buffer().fill(0.0);
    losses::BatchCounts counts;
    for (const auto& e : batch) {
      const auto& t = targets(e);
      ++counts.all;
      if (t.weak_tags) ++counts.tagged;
      if (t.frame_labels) ++counts.strong;
      if (t.tier == Tier::weak || t.tier == Tier::unlabeled) ++counts.weak_or_unlabeled;
    }
    losses::LossTerms batch_terms;
    for (const auto& e : batch) {
      const auto& c = clip(e);
      losses::ClipForward f{models::teacher_forward(models_.teacher, c.features, fwd),
                            models::student_forward(models_.student, c.features, fwd),
                            targets(e)};
      losses::BatchLoss part;
      try {
        part = losses::clip_loss(f, counts, models_.projection, settings);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric_failure) throw;
        fail(ErrorKind::numeric_failure, std::string(e.what()) + " at epoch " +
                                             std::to_string(epoch) + " on clip '" + c.id + "'");
      }
      check_finite(part.terms, epoch, c.id);
      if (part.total.requires_grad()) nd::backward(part.total, nd::GradMode::accumulate);
      batch_terms += part.terms;
    }
    adam_.step();
    report.batches.push_back(batch_terms);
    report.totals += batch_terms;
  }
  for (const auto& [name, var] : params)
    for (double v : var.value().vec())
      require(std::isfinite(v), ErrorKind::numeric_failure,
              "parameter '" + name + "' became non-finite at epoch " + std::to_string(epoch));
  state_.epoch = epoch;
  return report;
}

DevScores Trainer::evaluate_dev() const {
  return evaluate_clips(models_, data_.dev, table_, post_, data_.frame_rate,
                        static_cast<double>(data_.n_frames) / data_.frame_rate,
                        data_.n_classes());
}

void Trainer::save_last(const std::string& path) const {
  auto tensors = parameter_snapshot(models_);
  for (auto& t : adam_.state(param_names_)) tensors.push_back(std::move(t));
  tensors.push_back({"trainer.state",
                     nd::Array({5}, {kCheckpointVersion, static_cast<double>(state_.epoch),
                                     static_cast<double>(adam_.steps()), state_.best_f1,
                                     static_cast<double>(state_.best_epoch)})});
  atomic_save(path, tensors);
}

void Trainer::resume(const std::string& out_dir) {
  const std::string path = (fs::path(out_dir) / "last.ckpt").string();
  const auto tensors = nd::load_checkpoint(path);
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [](const nd::NamedArray& t) { return t.name == "trainer.state"; });
  require(it != tensors.end() && it->value.size() == 5, ErrorKind::version,
          path + ": not a resumable checkpoint");
  const auto& st = it->value.vec();
  require(st[0] == kCheckpointVersion, ErrorKind::version,
          path + ": unsupported checkpoint version " + format_number(st[0]));
  restore_parameters(models_, tensors);
  adam_.restore(tensors, param_names_, static_cast<std::size_t>(st[2]));
  state_.epoch = static_cast<int>(st[1]);
  state_.best_f1 = st[3];
  state_.best_epoch = static_cast<int>(st[4]);

  trace_.clear();
  const std::string trace_path = (fs::path(out_dir) / "trace.csv").string();
  std::ifstream in(trace_path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read " + trace_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    TraceRow row = parse_trace_line(line, trace_path + ":" + std::to_string(line_no));
    if (row.epoch <= state_.epoch) trace_.push_back(row);
  }
  require(static_cast<int>(trace_.size()) == state_.epoch, ErrorKind::data,
          trace_path + " does not cover the checkpointed epochs");
}

std::vector<TraceRow> Trainer::run(const std::string& out_dir,
                                   const std::function<void(const TraceRow&)>& on_epoch) {
  if (!out_dir.empty()) fs::create_directories(out_dir);
  auto file = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  while (state_.epoch < config_.epochs) {
    const EpochReport report = train_epoch();
    const DevScores scores = evaluate_dev();
    TraceRow row;
    row.epoch = report.epoch;
    row.stage = report.stage;
    row.alpha = report.alpha;
    row.beta = report.beta;
    row.mean_terms = scaled(report.totals, 1.0 / static_cast<double>(report.batches.size()));
    row.dev_event_f1 = scores.event.macro_f1;
    row.dev_segment_f1 = scores.segment.macro_f1;
    row.dev_at_f1 = scores.at.macro_f1;
    const bool improved = row.dev_event_f1 > state_.best_f1;
    if (improved) {
      state_.best_f1 = row.dev_event_f1;
      state_.best_epoch = row.epoch;
    }
    row.best_event_f1 = state_.best_f1;
    trace_.push_back(row);

    if (!out_dir.empty()) {
      if (improved) atomic_save(file("best.ckpt"), parameter_snapshot(models_));
      std::string trace = trace_header() + "\n";
      std::string long_trace = "epoch,stage,term,value\n";
      for (const auto& r : trace_) {
        trace += trace_line(r) + "\n";
        const auto values = r.mean_terms.values();
        for (std::size_t i = 0; i < values.size(); ++i)
          long_trace += std::to_string(r.epoch) + "," + std::to_string(r.stage) + "," +
                        losses::LossTerms::names()[i] + "," + format_number(values[i]) + "\n";
      }
      atomic_write(file("trace.csv"), trace);
      atomic_write(file("loss_trace.csv"), long_trace);
      save_last(file("last.ckpt"));
    }
    if (on_epoch) on_epoch(row);
  }
  return trace_;
}

}  // namespace sedkd::train
