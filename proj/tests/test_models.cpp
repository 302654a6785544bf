#include <cmath>
#include <cstring>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sedkd/errors.hpp"
#include "sedkd/models.hpp"

using namespace sedkd;
using namespace sedkd::models;
using sedkd::testing::gradcheck;
using sedkd::testing::random_array;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_classes = 3;
  cfg.feat_dim = 8;
  cfg.channels = {2, 3, 3, 4, 4};
  cfg.gru_hidden = 3;
  cfg.gru_layers = 1;
  cfg.linear_dim = 5;
  cfg.head_hidden = 2;
  cfg.tfd_dim = 4;
  return cfg;
}

bool all_in_unit(const nd::Array& a) {
  for (double v : a.data())
    if (!(v >= 0.0 && v <= 1.0)) return false;
  return true;
}

}  // namespace

TEST_CASE("split_time_factor distributes prime factors") {
  CHECK(split_time_factor(8, 5) == std::vector<std::size_t>{2, 2, 2, 1, 1});
  CHECK(split_time_factor(1, 3) == std::vector<std::size_t>{1, 1, 1});
  CHECK(split_time_factor(12, 2) == std::vector<std::size_t>{2, 6});
  CHECK(split_time_factor(5, 5) == std::vector<std::size_t>{5, 1, 1, 1, 1});
}

TEST_CASE("full-shape teacher and student output sizes") {
  ModelConfig cfg;  // declared defaults
  cfg.n_classes = 10;
  cfg.feat_dim = 64;
  std::mt19937_64 rng(1);
  Crnn teacher(Role::teacher, cfg, rng);
  Crnn student(Role::student, cfg, rng);
  nd::Array clip({600, 64});
  nd::NoGradGuard no_grad;
  auto t = teacher_forward(teacher, clip);
  auto s = student_forward(student, clip);
  CHECK(t.frame_probs.shape() == nd::Shape{75, 10});
  CHECK(s.frame_probs.shape() == nd::Shape{600, 10});
  CHECK(t.feature_map.shape()[0] == 75);
  CHECK(s.feature_map.shape()[0] == 600);
  CHECK(t.clip_probs.shape() == nd::Shape{10});
  // All-zero input stays finite and inside [0,1].
  CHECK(all_in_unit(t.frame_probs.value()));
  CHECK(all_in_unit(t.clip_probs.value()));
  CHECK(all_in_unit(s.frame_probs.value()));
  CHECK(all_in_unit(s.clip_probs.value()));
}

TEST_CASE("forward is deterministic and rejects bad shapes") {
  auto cfg = tiny_config();
  std::mt19937_64 rng(2);
  Crnn teacher(Role::teacher, cfg, rng);
  auto clip = random_array({24, 8}, rng);
  auto a = teacher.forward(clip).frame_probs.value();
  auto b = teacher.forward(clip).frame_probs.value();
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);

  try {
    teacher.forward(nd::Array({24, 9}));
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
  }
  CHECK_THROWS_AS(teacher.forward(nd::Array({7, 8})), Error);  // T < factor
  CHECK_THROWS_AS(student_forward(teacher, clip), Error);
}

TEST_CASE("student keeps the input time length for any T") {
  auto cfg = tiny_config();
  std::mt19937_64 rng(3);
  Crnn student(Role::student, cfg, rng);
  Crnn teacher(Role::teacher, cfg, rng);
  std::uniform_int_distribution<int> len(8, 90);
  nd::NoGradGuard no_grad;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t frames = len(rng);
    auto clip = random_array({frames, 8}, rng);
    auto s = student.forward(clip);
    CHECK(s.frame_probs.shape() == nd::Shape{frames, 3});
    CHECK(all_in_unit(s.frame_probs.value()));
    CHECK(all_in_unit(s.clip_probs.value()));
    auto t = teacher.forward(clip);
    CHECK(t.frame_probs.shape()[0] == (frames + 7) / 8);
  }
}

TEST_CASE("per-class heads are independent") {
  auto cfg = tiny_config();
  std::mt19937_64 rng(4);
  Crnn student(Role::student, cfg, rng);
  auto clip = random_array({20, 8}, rng);
  auto before = student.forward(clip).frame_probs.value();
  // Perturb head 1's output layer.
  auto w = student.heads()[1].second.weight;
  for (auto& v : w.mutable_value().data()) v += 0.5;
  auto after = student.forward(clip).frame_probs.value();
  bool changed = false;
  for (std::size_t t = 0; t < 20; ++t) {
    CHECK(after.at(t, 0) == before.at(t, 0));
    CHECK(after.at(t, 2) == before.at(t, 2));
    changed = changed || after.at(t, 1) != before.at(t, 1);
  }
  CHECK(changed);
}

TEST_CASE("attention pooling") {
  std::mt19937_64 rng(5);
  AttentionPool pool;
  pool.classifier = {sedkd::testing::random_param({4, 2}, rng), sedkd::testing::random_param({2}, rng)};
  pool.attention = {nd::parameter(nd::Array({4, 2})), nd::parameter(nd::Array({2}))};
  auto feats = sedkd::testing::random_param({6, 4}, rng);

  // Zero attention logits give uniform weights, i.e. the temporal mean.
  auto out = attention_pool(feats, pool);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (std::size_t t = 0; t < 6; ++t) mean += out.frame_probs.value().at(t, c) / 6;
    CHECK(out.clip_probs.value()[c] == doctest::Approx(mean).epsilon(1e-12));
  }

  pool.attention = {sedkd::testing::random_param({4, 2}, rng),
                    sedkd::testing::random_param({2}, rng)};
  out = attention_pool(feats, pool);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0;
    for (std::size_t t = 0; t < 6; ++t) s += out.weights.value().at(t, c);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK(all_in_unit(out.clip_probs.value()));

  auto single = nd::constant(random_array({1, 4}, rng));
  auto one = attention_pool(single, pool);
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(one.clip_probs.value()[c] == doctest::Approx(one.frame_probs.value().at(0, c)));

  CHECK_THROWS_AS(attention_pool(nd::constant(nd::Array({0, 4})), pool), Error);

  double err = gradcheck([&] { return nd::sum(attention_pool(feats, pool).clip_probs); },
                         {feats, pool.classifier.weight, pool.attention.weight, pool.attention.bias});
  CHECK(err < 1e-6);
}

TEST_CASE("apply_tag_mask") {
  nd::Array grid({3, 2}, {0.1, 0.9, 0.4, 0.6, 0.7, 0.3});
  CHECK(apply_tag_mask(grid, {1, 1}) == grid);
  CHECK(apply_tag_mask(grid, {0, 0}) == nd::Array({3, 2}));
  CHECK(apply_tag_mask(grid, {1, 0}) == nd::Array({3, 2}, {0.1, 0, 0.4, 0, 0.7, 0}));
  CHECK_THROWS_AS(apply_tag_mask(grid, {1, 0, 1}), Error);
}

TEST_CASE("composite CRNN graph passes a global finite-difference check") {
  auto cfg = tiny_config();
  cfg.n_classes = 2;
  std::mt19937_64 rng(6);
  Crnn teacher(Role::teacher, cfg, rng);
  Crnn student(Role::student, cfg, rng);
  auto clip = random_array({16, 8}, rng);
  auto wt = constant(random_array({2, 2}, rng));
  auto ws = constant(random_array({16, 2}, rng));

  auto loss = [&] {
    auto t = teacher.forward(clip);
    auto s = student.forward(clip);
    auto l = nd::add(nd::sum(nd::mul(t.frame_probs, wt)), nd::sum(nd::mul(s.frame_probs, ws)));
    l = nd::add(l, nd::sum(nd::log(t.clip_probs)));
    return nd::add(l, nd::sum(nd::log(s.clip_probs)));
  };
  // Zero-initialised biases put ReLUs exactly on their kink; move off it.
  std::vector<nd::Var> params;
  std::uniform_real_distribution<double> nudge(-0.3, 0.3);
  for (const auto* model : {&teacher, &student}) {
    for (auto& [name, p] : model->named_parameters()) {
      if (name.back() != 'w' && name.substr(name.size() - 2) != "wx" &&
          name.substr(name.size() - 2) != "wh")
        for (auto& v : p.mutable_value().data()) v = nudge(rng);
      params.push_back(p);
    }
  }
  CHECK(gradcheck(loss, params) < 1e-4);
}
