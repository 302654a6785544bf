#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "sedkd/errors.hpp"
#include "sedkd/trainer.hpp"

using namespace sedkd;
using namespace sedkd::train;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sedkd_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const data::TrainingData& tiny_data() {
  static const data::TrainingData d = [] {
    TempDir dir("trainer_data");
    data::SynthConfig c;
    c.n_strong = 8;
    c.n_weak = 8;
    c.n_unlabeled = 8;
    c.n_dev = 6;
    c.n_classes = 3;
    c.n_frames = 32;
    c.n_features = 8;
    c.clip_seconds = 3.2;
    c.durations = data::parse_duration_specs("0.3-0.8; 0.5-1.2; 0.2-0.5");
    c.seed = 3;
    data::generate_synthetic(c, dir.path.string());
    return data::load_training_data(dir.path.string());
  }();
  return d;
}

models::ModelConfig tiny_model() {
  models::ModelConfig m;
  m.n_classes = 3;
  m.feat_dim = 8;
  m.channels = {2, 3, 3, 4, 4};
  m.gru_hidden = 3;
  m.gru_layers = 1;
  m.linear_dim = 5;
  m.head_hidden = 2;
  m.tfd_dim = 4;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 4;
  t.n_strong = 2;
  t.n_weak = 2;
  t.n_unlabeled = 4;
  t.schedule.stage_switch = 2;
  t.schedule.beta_ramp_len = 2;
  t.adam.lr = 1e-2;
  t.seed = 11;
  return t;
}

std::vector<data::TrainClip> pool(std::size_t n, Tier tier) {
  std::vector<data::TrainClip> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i].id = std::to_string(i);
    p[i].tier = tier;
  }
  return p;
}

}  // namespace

TEST_CASE("ablation strings") {
  CHECK(parse_ablation("pts") == AblationFlags{false, false, losses::DfdVariant::none});
  CHECK(parse_ablation("pts+tfd") == AblationFlags{true, false, losses::DfdVariant::none});
  CHECK(parse_ablation("pts+tfd+afl") == AblationFlags{true, true, losses::DfdVariant::none});
  CHECK(parse_ablation("pts+dfd_dist_wu").dfd == losses::DfdVariant::dist_wu);
  for (const char* s : {"pts", "pts+afl", "pts+tfd+afl", "pts+tfd+dfd_mse"})
    CHECK(format_ablation(parse_ablation(s)) == s);
  for (const char* bad : {"", "tfd", "pts+xyz", "pts+dfd_none", "pts+dfd_foo"})
    CHECK_THROWS_AS(parse_ablation(bad), Error);
}

TEST_CASE("batch assembly") {
  const auto strong = pool(10, Tier::strong), weak = pool(7, Tier::weak),
             unlabeled = pool(12, Tier::unlabeled);
  const Pools pools{&strong, &weak, &unlabeled};

  SUBCASE("unlabeled-only batches") {
    TrainConfig c;
    c.n_strong = c.n_weak = 0;
    c.n_unlabeled = 4;
    for (const auto& b : epoch_batches(c, pools, 1)) {
      CHECK(b.size() == 4);
      for (const auto& e : b) CHECK(e.tier == Tier::unlabeled);
    }
  }

  SUBCASE("exact tier proportions and fair coverage") {
    TrainConfig c;
    c.n_strong = 3;
    c.n_weak = 2;
    c.n_unlabeled = 5;
    const auto batches = epoch_batches(c, pools, 3);
    CHECK(batches.size() == 4);  // max(ceil(10/3), ceil(7/2), ceil(12/5))
    std::map<Tier, std::map<std::size_t, int>> seen;
    for (const auto& b : batches) {
      std::map<Tier, std::size_t> per_tier;
      for (const auto& e : b) {
        ++per_tier[e.tier];
        ++seen[e.tier][e.index];
      }
      CHECK(per_tier[Tier::strong] == 3);
      CHECK(per_tier[Tier::weak] == 2);
      CHECK(per_tier[Tier::unlabeled] == 5);
    }
    // Every clip is drawn once per pass: counts differ by at most one.
    for (auto& [tier, counts] : seen) {
      const std::size_t size = tier == Tier::strong ? 10 : tier == Tier::weak ? 7 : 12;
      CHECK(counts.size() == size);
      int lo = 1 << 30, hi = 0;
      for (auto& [idx, n] : counts) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      CHECK(hi - lo <= 1);
    }
  }

  SUBCASE("determinism in seed and epoch") {
    TrainConfig c;
    auto flat = [](const std::vector<Batch>& bs) {
      std::vector<std::size_t> v;
      for (const auto& b : bs)
        for (const auto& e : b) v.push_back(e.index * 4 + static_cast<std::size_t>(e.tier));
      return v;
    };
    c.n_strong = c.n_weak = 2;
    c.n_unlabeled = 3;
    CHECK(flat(epoch_batches(c, pools, 5)) == flat(epoch_batches(c, pools, 5)));
    CHECK(flat(epoch_batches(c, pools, 5)) != flat(epoch_batches(c, pools, 6)));
    TrainConfig d = c;
    d.seed = 2;
    CHECK(flat(epoch_batches(c, pools, 5)) != flat(epoch_batches(d, pools, 5)));
  }

  SUBCASE("empty or undersized pools") {
    const std::vector<data::TrainClip> none;
    TrainConfig c;
    c.n_strong = c.n_weak = 1;
    c.n_unlabeled = 1;
    try {
      epoch_batches(c, Pools{&strong, &weak, &none}, 1);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::data);
      CHECK(std::string(e.what()).find("unlabeled") != std::string::npos);
    }
    c.n_unlabeled = 0;
    CHECK_NOTHROW(epoch_batches(c, Pools{&strong, &weak, &none}, 1));
    c.n_weak = 8;
    CHECK_THROWS_AS(epoch_batches(c, pools, 1), Error);
  }
}

TEST_CASE("stage switching and schedules per epoch") {
  const auto& data = tiny_data();
  TrainConfig tc = tiny_train();
  Trainer trainer(tiny_model(), tc, PostConfig{}, data);
  for (int e = 1; e <= 4; ++e) {
    const auto r = trainer.train_epoch();
    CHECK(r.epoch == e);
    CHECK(r.stage == (e <= tc.schedule.stage_switch ? 1 : 2));
    CHECK(r.alpha == losses::alpha_schedule(e, tc.schedule));
    CHECK(r.beta == losses::beta_schedule(e, tc.schedule.beta_ramp_len));
    if (e <= tc.schedule.stage_switch) {
      CHECK(r.alpha == 0.0);
      CHECK(r.totals.con_student_to_teacher == 0.0);
    } else {
      CHECK(r.alpha > 0.0);
      CHECK(r.totals.con_student_to_teacher > 0.0);
    }
  }
}

TEST_CASE("epoch totals equal the sum of per-batch terms") {
  Trainer trainer(tiny_model(), tiny_train(), PostConfig{}, tiny_data());
  const auto r = trainer.train_epoch();
  REQUIRE(r.batches.size() == 4);  // max(ceil(8/2), ceil(8/2), ceil(8/4))
  std::vector<double> sum(losses::LossTerms::names().size(), 0.0);
  for (const auto& b : r.batches) {
    const auto v = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
  }
  const auto totals = r.totals.values();
  for (std::size_t i = 0; i < sum.size(); ++i) CHECK(totals[i] == doctest::Approx(sum[i]).epsilon(1e-14));
  // Batch total is the weighted sum of its terms.
  for (const auto& b : r.batches) {
    const double expect = b.weak_teacher + b.weak_student + b.strong_teacher + b.strong_student +
                          b.con_teacher_to_student + r.alpha * b.con_student_to_teacher +
                          r.beta * b.tfd;
    CHECK(b.total == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("adaptive focal replaces BCE exactly at s+1") {
  const auto& data = tiny_data();
  TrainConfig with = tiny_train(), without = tiny_train();
  with.ablation = parse_ablation("pts+tfd+afl");
  without.ablation = parse_ablation("pts+tfd");
  Trainer a(tiny_model(), with, PostConfig{}, data), b(tiny_model(), without, PostConfig{}, data);
  for (int e = 1; e <= with.schedule.stage_switch; ++e) {
    const auto ra = a.train_epoch(), rb = b.train_epoch();
    CHECK(ra.totals.values() == rb.totals.values());
  }
  const auto ra = a.train_epoch(), rb = b.train_epoch();
  // First batch of epoch s+1 sees identical parameters in both runs.
  const auto& fa = ra.batches.front();
  const auto& fb = rb.batches.front();
  CHECK(fa.con_teacher_to_student == fb.con_teacher_to_student);
  CHECK(fa.con_student_to_teacher == fb.con_student_to_teacher);
  CHECK(fa.tfd == fb.tfd);
  // Focal weights lie in [0, 1]: supervised terms shrink but stay positive.
  for (auto [x, y] : {std::pair{fa.weak_teacher, fb.weak_teacher},
                      std::pair{fa.weak_student, fb.weak_student},
                      std::pair{fa.strong_teacher, fb.strong_teacher},
                      std::pair{fa.strong_student, fb.strong_student}}) {
    CHECK(x > 0.0);
    CHECK(x < y);
  }
}

TEST_CASE("disabling a term leaves the other terms unchanged") {
  const auto& data = tiny_data();
  TrainConfig on = tiny_train(), off = tiny_train();
  on.ablation = parse_ablation("pts+tfd");
  off.ablation = parse_ablation("pts");
  Trainer a(tiny_model(), on, PostConfig{}, data), b(tiny_model(), off, PostConfig{}, data);
  const auto fa = a.train_epoch().batches.front(), fb = b.train_epoch().batches.front();
  CHECK(fa.tfd > 0.0);
  CHECK(fb.tfd == 0.0);
  CHECK(fa.weak_teacher == fb.weak_teacher);
  CHECK(fa.weak_student == fb.weak_student);
  CHECK(fa.strong_teacher == fb.strong_teacher);
  CHECK(fa.strong_student == fb.strong_student);
  CHECK(fa.con_teacher_to_student == fb.con_teacher_to_student);
}

TEST_CASE("pure stage-1 run when E equals s") {
  TrainConfig tc = tiny_train();
  tc.epochs = tc.schedule.stage_switch;
  Trainer trainer(tiny_model(), tc, PostConfig{}, tiny_data());
  const auto trace = trainer.run();
  REQUIRE(trace.size() == static_cast<std::size_t>(tc.epochs));
  for (const auto& row : trace) {
    CHECK(row.stage == 1);
    CHECK(row.alpha == 0.0);
  }
}

TEST_CASE("run writes traces and checkpoints; best never decreases") {
  TempDir dir("trainer_run");
  Trainer trainer(tiny_model(), tiny_train(), PostConfig{}, tiny_data());
  const auto trace = trainer.run(dir.path.string());
  REQUIRE(trace.size() == 4);
  double best = -1.0;
  for (const auto& row : trace) {
    best = std::max(best, row.dev_event_f1);
    CHECK(row.best_event_f1 == best);
    for (double v : {row.dev_event_f1, row.dev_segment_f1, row.dev_at_f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(trainer.state().best_f1 == best);
  for (const char* f : {"trace.csv", "loss_trace.csv", "best.ckpt", "last.ckpt"})
    CHECK(fs::exists(dir.path / f));

  std::ifstream in(dir.path / "trace.csv");
  std::string header, line;
  std::getline(in, header);
  CHECK(header == trace_header());
  CHECK(header.rfind("epoch,stage,alpha,beta,", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) CHECK(line == trace_line(trace[rows++]));
  CHECK(rows == 4);

  std::ifstream long_in(dir.path / "loss_trace.csv");
  int long_rows = -1;
  while (std::getline(long_in, line)) ++long_rows;
  CHECK(long_rows == 4 * static_cast<int>(losses::LossTerms::names().size()));

  // The best checkpoint restores into a fresh bundle; a foreign shape does not.
  ModelBundle fresh(tiny_model(), 999);
  CHECK_NOTHROW(restore_parameters(fresh, nd::load_checkpoint(dir.sub("best.ckpt"))));
  auto other = tiny_model();
  other.gru_hidden = 4;
  ModelBundle wrong(other, 1);
  try {
    restore_parameters(wrong, nd::load_checkpoint(dir.sub("best.ckpt")));
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::version);
  }
}

TEST_CASE("identical seeds give bit-identical runs") {
  TempDir a("trainer_det_a"), b("trainer_det_b");
  Trainer(tiny_model(), tiny_train(), PostConfig{}, tiny_data()).run(a.path.string());
  Trainer(tiny_model(), tiny_train(), PostConfig{}, tiny_data()).run(b.path.string());
  for (const char* f : {"trace.csv", "loss_trace.csv", "best.ckpt", "last.ckpt"})
    CHECK(file_bytes(a.path / f) == file_bytes(b.path / f));
}

TEST_CASE("resumed run continues identically") {
  TempDir full("trainer_full"), part("trainer_part");
  Trainer(tiny_model(), tiny_train(), PostConfig{}, tiny_data()).run(full.path.string());

  TrainConfig first = tiny_train();
  first.epochs = 3;
  Trainer(tiny_model(), first, PostConfig{}, tiny_data()).run(part.path.string());
  Trainer resumed(tiny_model(), tiny_train(), PostConfig{}, tiny_data());
  resumed.resume(part.path.string());
  CHECK(resumed.state().epoch == 3);
  resumed.run(part.path.string());

  for (const char* f : {"trace.csv", "loss_trace.csv", "best.ckpt", "last.ckpt"})
    CHECK(file_bytes(full.path / f) == file_bytes(part.path / f));
}

TEST_CASE("non-finite loss aborts naming the term") {
  Trainer trainer(tiny_model(), tiny_train(), PostConfig{}, tiny_data());
  for (auto& [name, var] : trainer.models().student.named_parameters()) {
    auto v = var;
    v.mutable_value().fill(std::nan(""));
  }
  try {
    trainer.train_epoch();
    FAIL("expected a numeric failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric_failure);
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss term '") != std::string::npos);
    CHECK(msg.find("_student'") != std::string::npos);
  }
}

TEST_CASE("configuration validation") {
  const auto& data = tiny_data();
  TrainConfig tc = tiny_train();
  tc.epochs = 0;
  CHECK_THROWS_AS(Trainer(tiny_model(), tc, PostConfig{}, data), Error);
  tc = tiny_train();
  tc.n_strong = tc.n_weak = tc.n_unlabeled = 0;
  CHECK_THROWS_AS(Trainer(tiny_model(), tc, PostConfig{}, data), Error);
  auto mc = tiny_model();
  mc.n_classes = 4;
  try {
    Trainer(mc, tiny_train(), PostConfig{}, data);
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
  }
  PostConfig pc;
  pc.threshold = 1.0;
  CHECK_THROWS_AS(Trainer(tiny_model(), tiny_train(), pc, data), Error);
}

TEST_CASE("window table follows the post-processing mode") {
  const auto& data = tiny_data();
  const auto strong = data.strong_segments();
  PostConfig p;
  p.mode = PostMode::none;
  for (const auto& e : window_table_for(p, strong, 3, data.frame_rate).entries) CHECK(e.window == 1);
  p.mode = PostMode::esp;
  const auto esp = window_table_for(p, strong, 3, data.frame_rate);
  p.mode = PostMode::avg;
  const auto avg = window_table_for(p, strong, 3, data.frame_rate);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(esp.entries[c].window % 2 == 1);
    CHECK(esp.entries[c].knee <= avg.entries[c].knee);
  }
}
