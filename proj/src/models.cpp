#include "sedkd/models.hpp"

#include <cmath>

#include "sedkd/errors.hpp"

namespace sedkd::models {

namespace {

nd::Var glorot(nd::Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
               std::string name) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  nd::Array a(std::move(shape));
  for (auto& v : a.data()) v = u(rng);
  return nd::parameter(std::move(a), std::move(name));
}

nd::Var he(nd::Shape shape, std::size_t fan_in, std::mt19937_64& rng, std::string name) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-limit, limit);
  nd::Array a(std::move(shape));
  for (auto& v : a.data()) v = u(rng);
  return nd::parameter(std::move(a), std::move(name));
}

nd::Var zeros(nd::Shape shape, std::string name) {
  return nd::parameter(nd::Array(std::move(shape)), std::move(name));
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng, const std::string& name) {
  return {glorot({in, out}, in, out, rng, name + ".w"), zeros({out}, name + ".b")};
}

const char* role_name(Role role) { return role == Role::teacher ? "teacher" : "student"; }

}  // namespace

void ModelConfig::validate() const {
  require(n_classes >= 1, ErrorKind::parameter, "model: n_classes must be >= 1");
  require(feat_dim >= 1, ErrorKind::parameter, "model: feat_dim must be >= 1");
  require(teacher_blocks >= 1 && student_blocks >= 1, ErrorKind::parameter,
          "model: block counts must be >= 1");
  require(teacher_time_factor >= 1, ErrorKind::parameter,
          "model: teacher_time_factor must be >= 1");
  require(channels.size() >= std::max(teacher_blocks, student_blocks), ErrorKind::parameter,
          "model: channels must list one entry per block (" +
              std::to_string(std::max(teacher_blocks, student_blocks)) + " needed)");
  for (auto c : channels) require(c >= 1, ErrorKind::parameter, "model: zero channel count");
  require(gru_hidden >= 1 && tfd_dim >= 1 && linear_dim >= 1 && head_hidden >= 1,
          ErrorKind::parameter, "model: layer widths must be >= 1");
  require(kernel % 2 == 1, ErrorKind::parameter, "model: kernel size must be odd");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::parameter,
          "model: dropout must lie in [0,1)");
}

nd::Var Linear::operator()(const nd::Var& x) const {
  return nd::add_row_bias(nd::matmul(x, weight), bias);
}

AttentionOutput attention_pool(const nd::Var& frame_feats, const AttentionPool& pool) {
  require(frame_feats.value().rank() == 2 && frame_feats.shape()[0] >= 1, ErrorKind::contract,
          "attention_pool: empty time axis");
  AttentionOutput out;
  out.frame_probs = nd::sigmoid(pool.classifier(frame_feats));
  out.weights = nd::softmax_rows_axis0(pool.attention(frame_feats));
  out.clip_probs = nd::sum_rows(nd::mul(out.weights, out.frame_probs));
  return out;
}

nd::Array apply_tag_mask(const nd::Array& frame_probs, const std::vector<double>& clip_onehot) {
  require(frame_probs.rank() == 2 && frame_probs.dim(1) == clip_onehot.size(),
          ErrorKind::dimension,
          "apply_tag_mask: grid " + nd::shape_str(frame_probs.shape()) + " vs mask of length " +
              std::to_string(clip_onehot.size()));
  nd::Array out = frame_probs;
  const std::size_t rows = out.dim(0), cols = out.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) *= clip_onehot[c];
  return out;
}

std::vector<std::size_t> split_time_factor(std::size_t factor, std::size_t blocks) {
  std::vector<std::size_t> primes;
  for (std::size_t p = 2, n = factor; n > 1;) {
    if (n % p == 0) {
      primes.push_back(p);
      n /= p;
    } else {
      ++p;
    }
  }
  std::vector<std::size_t> pools(blocks, 1);
  for (std::size_t i = 0; i < primes.size(); ++i) pools[std::min(i, blocks - 1)] *= primes[i];
  return pools;
}

Crnn::Crnn(Role role, const ModelConfig& config, std::mt19937_64& rng)
    : role_(role), config_(config) {
  config.validate();
  const std::string prefix = role_name(role);
  const std::size_t blocks = role == Role::teacher ? config.teacher_blocks : config.student_blocks;
  convs_per_block_ = role == Role::teacher ? 2 : 1;
  time_pools_ = role == Role::teacher ? split_time_factor(config.teacher_time_factor, blocks)
                                      : std::vector<std::size_t>(blocks, 1);
  time_factor_ = role == Role::teacher ? config.teacher_time_factor : 1;

  const std::size_t k = config.kernel;
  std::size_t in_ch = 1, width = config.feat_dim;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t out_ch = config.channels[b];
    for (std::size_t l = 0; l < convs_per_block_; ++l) {
      const std::string name = prefix + ".conv" + std::to_string(convs_.size());
      convs_.push_back({he({out_ch, in_ch, k, k}, in_ch * k * k, rng, name + ".w"),
                        zeros({out_ch}, name + ".b")});
      in_ch = out_ch;
    }
    const std::size_t fp = width >= 2 ? 2 : 1;
    freq_pools_.push_back(fp);
    width = (width + fp - 1) / fp;
  }
  feature_dim_ = in_ch * width;

  const std::size_t h = config.gru_hidden;
  std::size_t gru_in = feature_dim_;
  for (std::size_t l = 0; l < config.gru_layers; ++l) {
    BiGru g;
    for (int d = 0; d < 2; ++d) {
      const std::string name = prefix + ".gru" + std::to_string(l) + (d ? ".bwd" : ".fwd");
      g.wx[d] = glorot({gru_in, 3 * h}, gru_in, 3 * h, rng, name + ".wx");
      g.wh[d] = glorot({h, 3 * h}, h, 3 * h, rng, name + ".wh");
      g.bx[d] = zeros({3 * h}, name + ".bx");
      g.bh[d] = zeros({3 * h}, name + ".bh");
    }
    grus_.push_back(std::move(g));
    gru_in = 2 * h;
  }
  const std::size_t at_in = feature_dim_ + (config.gru_layers ? 2 * h : 0);
  at_linear_ = make_linear(at_in, config.linear_dim, rng, prefix + ".at_linear");
  at_pool_.classifier = make_linear(config.linear_dim, config.n_classes, rng, prefix + ".at_cls");
  at_pool_.attention = make_linear(config.linear_dim, config.n_classes, rng, prefix + ".at_att");
  aed_linear_ = make_linear(feature_dim_, config.linear_dim, rng, prefix + ".aed_linear");
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    const std::string name = prefix + ".head" + std::to_string(c);
    heads_.emplace_back(make_linear(config.linear_dim, config.head_hidden, rng, name + ".hidden"),
                        make_linear(config.head_hidden, 1, rng, name + ".out"));
  }
}

ModelOutput Crnn::forward(const nd::Array& features, const ForwardOptions& opts) const {
  require(features.rank() == 2 && features.dim(1) == config_.feat_dim, ErrorKind::dimension,
          std::string(role_name(role_)) + ": features " + nd::shape_str(features.shape()) +
              " do not match feat_dim " + std::to_string(config_.feat_dim));
  const std::size_t frames = features.dim(0);
  require(frames >= time_factor_ && frames >= 1, ErrorKind::dimension,
          std::string(role_name(role_)) + ": " + std::to_string(frames) +
              " frames is shorter than the time factor " + std::to_string(time_factor_));
  const bool drop = opts.training && config_.dropout > 0.0;
  require(!drop || opts.rng, ErrorKind::contract, "dropout needs an rng");

  const std::size_t pad = config_.kernel / 2;
  nd::Var x = nd::constant(features.reshaped({1, frames, config_.feat_dim}));
  std::size_t conv = 0;
  for (std::size_t b = 0; b < time_pools_.size(); ++b) {
    for (std::size_t l = 0; l < convs_per_block_; ++l, ++conv) {
      x = nd::conv2d(nd::pad2d(x, pad, pad), convs_[conv].kernel);
      x = nd::relu(nd::add_channel_bias(x, convs_[conv].bias));
    }
    if (time_pools_[b] > 1) x = nd::pool_time(x, time_pools_[b]);
    if (freq_pools_[b] > 1) x = nd::pool_freq(x, freq_pools_[b]);
    if (drop) x = nd::dropout(x, config_.dropout, *opts.rng);
  }

  ModelOutput out;
  out.feature_map = nd::map_to_frames(x);

  nd::Var seq = out.feature_map;
  for (const auto& g : grus_) {
    nd::Var fwd = nd::gru(seq, g.wx[0], g.wh[0], g.bx[0], g.bh[0], false);
    nd::Var bwd = nd::gru(seq, g.wx[1], g.wh[1], g.bx[1], g.bh[1], true);
    seq = nd::concat_cols(fwd, bwd);
  }
  nd::Var at_in = grus_.empty() ? out.feature_map : nd::concat_cols(out.feature_map, seq);
  AttentionOutput at = attention_pool(nd::relu(at_linear_(at_in)), at_pool_);
  out.clip_probs = at.clip_probs;
  out.attention = at.weights;

  nd::Var hidden = nd::relu(aed_linear_(out.feature_map));
  std::vector<nd::Var> columns;
  columns.reserve(heads_.size());
  for (const auto& [inner, outer] : heads_) columns.push_back(outer(nd::relu(inner(hidden))));
  out.frame_probs = nd::sigmoid(nd::stack_cols(columns));
  return out;
}

std::vector<std::pair<std::string, nd::Var>> Crnn::named_parameters() const {
  std::vector<std::pair<std::string, nd::Var>> params;
  auto add = [&](const nd::Var& v) { params.emplace_back(v.name(), v); };
  auto add_linear = [&](const Linear& l) {
    add(l.weight);
    add(l.bias);
  };
  for (const auto& c : convs_) {
    add(c.kernel);
    add(c.bias);
  }
  for (const auto& g : grus_) {
    for (int d = 0; d < 2; ++d) {
      add(g.wx[d]);
      add(g.wh[d]);
      add(g.bx[d]);
      add(g.bh[d]);
    }
  }
  add_linear(at_linear_);
  add_linear(at_pool_.classifier);
  add_linear(at_pool_.attention);
  add_linear(aed_linear_);
  for (const auto& [inner, outer] : heads_) {
    add_linear(inner);
    add_linear(outer);
  }
  return params;
}

ModelOutput teacher_forward(const Crnn& teacher, const nd::Array& features,
                            const ForwardOptions& opts) {
  require(teacher.role() == Role::teacher, ErrorKind::contract, "teacher_forward on a student");
  return teacher.forward(features, opts);
}

ModelOutput student_forward(const Crnn& student, const nd::Array& features,
                            const ForwardOptions& opts) {
  require(student.role() == Role::student, ErrorKind::contract, "student_forward on a teacher");
  return student.forward(features, opts);
}

}  // namespace sedkd::models
