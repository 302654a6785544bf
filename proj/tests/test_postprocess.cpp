#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "sedkd/errors.hpp"
#include "sedkd/postprocess.hpp"

using namespace sedkd;
using namespace sedkd::post;

namespace {

std::vector<double> naive_median(const std::vector<double>& seq, std::size_t w) {
  const long n = static_cast<long>(seq.size()), half = static_cast<long>(w / 2);
  std::vector<double> out;
  for (long j = 0; j < n; ++j) {
    std::vector<double> win;
    for (long k = j - half; k <= j + half; ++k) win.push_back(seq[std::clamp(k, 0L, n - 1)]);
    std::sort(win.begin(), win.end());
    out.push_back(win[win.size() / 2]);
  }
  return out;
}

std::vector<EventSegment> segs_of(std::size_t label, const std::vector<double>& durations) {
  std::vector<EventSegment> out;
  for (double d : durations) out.push_back({"clip", label, 0.0, d});
  return out;
}

}  // namespace

TEST_CASE("duration profile") {
  auto p = build_duration_profile(segs_of(0, {1, 3, 2}), 2);
  CHECK(p.durations[0] == std::vector<double>{1, 2, 3});
  CHECK(p.cumulative[0] == std::vector<double>{1, 3, 6});
  CHECK(p.durations[1].empty());
  auto single = build_duration_profile(segs_of(0, {2}), 1);
  CHECK(single.cumulative[0] == std::vector<double>{2});
  try {
    build_duration_profile({{"bad_clip", 0, 2.0, 2.0}}, 1);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("bad_clip") != std::string::npos);
  }
}

TEST_CASE("knee index") {
  CHECK(knee_index({2, 4, 6, 8, 20}) == 4);
  CHECK(knee_index({1, 2, 3, 4, 5, 6}) == 2);
  CHECK(knee_index({5}) == 1);
  CHECK(knee_index({5, 7}) == 2);
  CHECK_THROWS_AS(knee_index({}), Error);
}

TEST_CASE("round to odd") {
  CHECK(round_to_odd(40.0) == 41);
  CHECK(round_to_odd(39.99999999999) == 41);
  CHECK(round_to_odd(41.9) == 41);
  CHECK(round_to_odd(42.0) == 43);
  CHECK(round_to_odd(0.3) == 1);
  CHECK(round_to_odd(1.0) == 1);
  CHECK(round_to_odd(2.5) == 3);
}

TEST_CASE("window table worked example") {
  auto profile = build_duration_profile(segs_of(0, {2, 2, 2, 2, 12}), 1);
  auto table = compute_window_table(profile, 1.0 / 3.0, 60.0);
  CHECK(table.entries[0].knee == 4);
  CHECK(table.entries[0].mean_duration_s == doctest::Approx(2.0));
  CHECK(table.entries[0].window == 41);
  CHECK_FALSE(table.entries[0].fallback);

  auto avg = compute_window_table(profile, 1.0 / 3.0, 60.0, WindowRule::average);
  CHECK(avg.entries[0].mean_duration_s == doctest::Approx(4.0));
  CHECK(avg.entries[0].window == 81);
  CHECK(avg.windows() != table.windows());

  auto one = compute_window_table(build_duration_profile(segs_of(0, {3}), 1), 1.0 / 3.0, 1.0);
  CHECK(one.entries[0].window == 1);

  CHECK_THROWS_AS(compute_window_table(profile, 0.0, 60.0), Error);
}

TEST_CASE("window table ordering invariance, linearity and fallback") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dur(0.2, 6.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EventSegment> segs;
    for (std::size_t c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i) segs.push_back({"x", c, 1.0, 1.0 + dur(rng)});
    auto a = compute_window_table(build_duration_profile(segs, 4), 1.0 / 3.0, 10.0);
    std::shuffle(segs.begin(), segs.end(), rng);
    auto b = compute_window_table(build_duration_profile(segs, 4), 1.0 / 3.0, 10.0);
    CHECK(a == b);
    CHECK(a.entries[3].fallback);
    CHECK(a.entries[3].knee == 0);
    for (auto w : a.windows()) CHECK(w % 2 == 1);
    auto d = compute_window_table(build_duration_profile(segs, 4), 2.0 / 3.0, 10.0);
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(d.entries[c].mean_duration_s * (2.0 / 3.0) ==
            doctest::Approx(2 * a.entries[c].mean_duration_s * (1.0 / 3.0)));
  }
  std::vector<EventSegment> segs = segs_of(0, {3});
  for (auto s : segs_of(1, {6})) segs.push_back(s);
  for (auto s : segs_of(2, {9})) segs.push_back(s);
  auto t = compute_window_table(build_duration_profile(segs, 4), 1.0, 1.0);
  CHECK(t.windows() == std::vector<std::size_t>{3, 7, 9, 7});

  auto empty = compute_window_table(build_duration_profile({}, 2), 1.0 / 3.0, 10.0);
  CHECK(empty.windows() == std::vector<std::size_t>{1, 1});
}

TEST_CASE("median filter") {
  std::vector<double> spike{0, 0, 1, 0, 0};
  CHECK(median_filter(spike, 3) == std::vector<double>(5, 0.0));
  CHECK(median_filter(spike, 1) == spike);
  CHECK_THROWS_AS(median_filter(spike, 4), Error);
  CHECK_THROWS_AS(median_filter(spike, 0), Error);

  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> len(1, 600), half(0, 15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> seq(len(rng));
    const bool binary = trial % 2 == 0;
    for (auto& v : seq) v = binary ? (coin(rng) ? 1.0 : 0.0) : u(rng);
    const std::size_t w = 2 * half(rng) + 1;
    auto out = median_filter(seq, w);
    REQUIRE(out == naive_median(seq, w));
    std::vector<double> higher = seq;
    for (auto& v : higher) v += u(rng);
    auto hi = median_filter(higher, w);
    for (std::size_t i = 0; i < seq.size(); ++i) REQUIRE(hi[i] >= out[i]);
  }
  // One pass is not idempotent in general (0,1,0,1,0 with W = 3 gives
  // 0,0,1,0,0); binary sequences whose runs are at least W/2 + 1 long are fixed points.
  CHECK(median_filter({0, 1, 0, 1, 0}, 3) == std::vector<double>{0, 0, 1, 0, 0});
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t w = 2 * half(rng) + 1;
    std::uniform_int_distribution<int> run(static_cast<int>(w / 2 + 1), static_cast<int>(w + 20));
    std::vector<double> seq;
    const std::size_t target = len(rng);
    double bit = coin(rng) ? 1.0 : 0.0;
    while (seq.size() < target) {
      seq.insert(seq.end(), run(rng), bit);
      bit = 1.0 - bit;
    }
    REQUIRE(median_filter(seq, w) == seq);
    // Repeated passes reach such a fixed point.
    std::vector<double> noisy(seq.size());
    for (auto& v : noisy) v = coin(rng) ? 1.0 : 0.0;
    auto cur = median_filter(noisy, w);
    for (int pass = 0; pass < 1000; ++pass) {
      auto next = median_filter(cur, w);
      if (next == cur) break;
      cur = next;
    }
    REQUIRE(median_filter(cur, w) == cur);
  }
  std::vector<double> constant(37, 0.25);
  CHECK(median_filter(constant, 9) == constant);
}

TEST_CASE("decode and rasterize") {
  CHECK(decode_segments(nd::Array({4, 2}), 1.0).empty());
  auto segs = decode_segments(nd::Array({4, 1}, {0, 1, 1, 0}), 1.0, "c1");
  REQUIRE(segs.size() == 1);
  CHECK(segs[0] == EventSegment{"c1", 0, 1.0, 3.0});
  auto tail = decode_segments(nd::Array({3, 1}, {1, 0, 1}), 2.0);
  REQUIRE(tail.size() == 2);
  CHECK(tail[1].onset == 1.0);
  CHECK(tail[1].offset == 1.5);

  std::mt19937_64 rng(23);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    nd::Array grid({50, 3});
    for (auto& v : grid.data()) v = coin(rng) ? 1.0 : 0.0;
    for (double fr : {1.0, 10.0, 7.3}) {
      auto decoded = decode_segments(grid, fr);
      CHECK(rasterize_segments(decoded, 50, 3, fr) == grid);
    }
  }
}

TEST_CASE("esp pipeline") {
  const std::size_t frames = 40;
  nd::Array probs({frames, 2});
  for (std::size_t t = 10; t < 30; ++t) probs.at(t, 0) = 0.9;  // long event
  probs.at(5, 1) = 0.95;                                      // spike
  probs.at(6, 1) = 0.95;
  WindowTable table{{WindowEntry{7, 1, 0.7, false}, WindowEntry{7, 1, 0.7, false}}};

  auto segs = esp_pipeline(probs, {1, 1}, table, 0.5, 10.0, "clip");
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].label == 0);
  CHECK(segs[0].onset == doctest::Approx(1.0));
  CHECK(segs[0].offset == doctest::Approx(3.0));

  // Class rejected by the tag mask never yields segments.
  for (std::size_t t = 0; t < frames; ++t) probs.at(t, 1) = 0.99;
  auto masked = esp_pipeline(probs, {1, 0}, table, 0.5, 10.0);
  for (const auto& s : masked) CHECK(s.label == 0);
  CHECK(esp_pipeline(probs, {0, 0}, table, 0.5, 10.0).empty());

  // Unit windows reduce to plain thresholding and decoding.
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0, 1);
  WindowTable unit{{WindowEntry{}, WindowEntry{}}};
  for (int trial = 0; trial < 20; ++trial) {
    nd::Array p({frames, 2});
    for (auto& v : p.data()) v = u(rng);
    CHECK(esp_pipeline(p, {1, 1}, unit, 0.5, 10.0) == decode_segments(binarize(p, 0.5), 10.0));
  }
  CHECK_THROWS_AS(esp_pipeline(probs, {1, 1, 1}, table, 0.5, 10.0), Error);
}

TEST_CASE("window table csv") {
  auto table = compute_window_table(build_duration_profile(segs_of(0, {2, 2, 2, 2, 12}), 2),
                                    1.0 / 3.0, 60.0);
  const std::string path = "window_table_test.csv";
  write_window_table(path, table, {"alarm", "speech"});
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "class,N_c,mean_duration_s,window_frames\nalarm,4,2,41\nspeech,0,0,41\n");
  std::remove(path.c_str());
}
