#pragma once

// Teacher and student CRNNs of the joint tagging/detection framework.
//
// Both share one topology template: convolution blocks, a bidirectional GRU
// stack, an AT branch (CNN and GRU features concatenated, a linear layer,
// attention pooling) and an AED branch (a shared linear layer on the CNN
// features followed by one small sigmoid head per class). The teacher uses
// two conv layers per block and compresses time; the student uses one conv
// layer per block and keeps full time resolution.

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sedkd/ndgrad.hpp"

namespace sedkd::models {

struct ModelConfig {
  std::size_t n_classes = 10;
  std::size_t feat_dim = 64;
  std::size_t teacher_blocks = 5;
  std::size_t student_blocks = 3;
  std::size_t teacher_time_factor = 8;
  std::vector<std::size_t> channels{16, 32, 32, 64, 64};
  std::size_t gru_hidden = 32;
  std::size_t gru_layers = 2;
  std::size_t tfd_dim = 32;
  std::size_t linear_dim = 64;
  std::size_t head_hidden = 8;
  std::size_t kernel = 3;
  double dropout = 0.0;

  // Throws a parameter error on the first violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Role { teacher, student };

struct ModelOutput {
  nd::Var clip_probs;   // [C]
  nd::Var frame_probs;  // [T', C]
  nd::Var feature_map;  // [T', d'] CNN output before the recurrent layers
  nd::Var attention;    // [T', C] softmax weights of the AT pooling
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

struct Linear {
  nd::Var weight;  // [in, out]
  nd::Var bias;    // [out]
  nd::Var operator()(const nd::Var& x) const;
};

struct AttentionPool {
  Linear classifier;  // per-frame class logits
  Linear attention;   // per-frame attention logits
};

struct AttentionOutput {
  nd::Var clip_probs;   // [C]
  nd::Var frame_probs;  // [T', C]
  nd::Var weights;      // [T', C], each column sums to one
};

// Clip probability per class = attention-weighted mean over time of the
// per-frame class probabilities.
AttentionOutput attention_pool(const nd::Var& frame_feats, const AttentionPool& pool);

// Zeroes every column whose clip tag is 0. frame_probs: [T, C].
nd::Array apply_tag_mask(const nd::Array& frame_probs, const std::vector<double>& clip_onehot);

class Crnn {
 public:
  Crnn(Role role, const ModelConfig& config, std::mt19937_64& rng);

  ModelOutput forward(const nd::Array& features, const ForwardOptions& opts = {}) const;

  Role role() const noexcept { return role_; }
  std::size_t time_factor() const noexcept { return time_factor_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const std::vector<std::size_t>& block_time_pools() const noexcept { return time_pools_; }

  // Parameters with stable, role-prefixed names ("teacher.conv0.w", ...).
  std::vector<std::pair<std::string, nd::Var>> named_parameters() const;

  // Per-class AED heads, exposed for structural tests.
  const std::vector<std::pair<Linear, Linear>>& heads() const noexcept { return heads_; }

 private:
  struct Conv {
    nd::Var kernel;
    nd::Var bias;
  };
  struct BiGru {
    nd::Var wx[2], wh[2], bx[2], bh[2];
  };

  Role role_;
  ModelConfig config_;
  std::size_t convs_per_block_;
  std::vector<std::size_t> time_pools_;
  std::vector<std::size_t> freq_pools_;
  std::size_t time_factor_;
  std::size_t feature_dim_;
  std::vector<Conv> convs_;
  std::vector<BiGru> grus_;
  Linear at_linear_;
  AttentionPool at_pool_;
  Linear aed_linear_;
  std::vector<std::pair<Linear, Linear>> heads_;
};

// Time pooling factor of each teacher block: the prime factors of the total
// factor, one per block from the input side, the remainder on the last block.
std::vector<std::size_t> split_time_factor(std::size_t factor, std::size_t blocks);

ModelOutput teacher_forward(const Crnn& teacher, const nd::Array& features,
                            const ForwardOptions& opts = {});
ModelOutput student_forward(const Crnn& student, const nd::Array& features,
                            const ForwardOptions& opts = {});

}  // namespace sedkd::models
