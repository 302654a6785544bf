#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "sedkd/errors.hpp"
#include "sedkd/metrics.hpp"
#include "sedkd/segment_io.hpp"

using namespace sedkd;
using namespace sedkd::metrics;

namespace {

std::vector<EventSegment> random_segments(std::mt19937_64& rng, std::size_t n, std::size_t classes,
                                          std::size_t clips, double max_len) {
  std::uniform_real_distribution<double> start(0.0, 9.0), len(0.05, max_len);
  std::uniform_int_distribution<std::size_t> cls(0, classes - 1), clip(0, clips - 1);
  std::vector<EventSegment> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double on = start(rng);
    out.push_back({"clip" + std::to_string(clip(rng)), cls(rng), on, on + len(rng)});
  }
  return out;
}

// Jitters each reference to produce plausible predictions.
std::vector<EventSegment> jitter(const std::vector<EventSegment>& refs, std::mt19937_64& rng,
                                 double amount) {
  std::normal_distribution<double> noise(0.0, amount);
  std::bernoulli_distribution keep(0.8);
  std::vector<EventSegment> out;
  for (auto s : refs) {
    if (!keep(rng)) continue;
    s.onset = std::max(0.0, s.onset + noise(rng));
    s.offset = std::max(s.onset + 0.01, s.offset + noise(rng));
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("F1 arithmetic") {
  auto s = class_score(1, 1, 1);
  CHECK(s.f1 == doctest::Approx(0.5));
  auto z = class_score(0, 0, 3);
  CHECK(z.f1 == 0.0);
  CHECK(z.precision == 0.0);
  CHECK_FALSE(z.excluded);
  CHECK(class_score(0, 0, 0).excluded);
}

TEST_CASE("event-based collar cases") {
  std::vector<EventSegment> ref{{"a", 0, 0.0, 2.0}};
  auto tp = event_based_f1(ref, {{"a", 0, 0.15, 2.3}}, 1);
  CHECK(tp.per_class[0].tp == 1);
  CHECK(tp.macro_f1 == 1.0);
  auto miss = event_based_f1(ref, {{"a", 0, 0.25, 2.0}}, 1);
  CHECK(miss.per_class[0].tp == 0);
  CHECK(miss.per_class[0].fp == 1);
  CHECK(miss.per_class[0].fn == 1);
  CHECK(miss.macro_f1 == 0.0);
  // Offset collar floors at 0.2 s for short references.
  CHECK(event_based_f1({{"a", 0, 1.0, 1.5}}, {{"a", 0, 1.0, 1.7}}, 1).per_class[0].tp == 1);
  CHECK(event_based_f1({{"a", 0, 1.0, 1.5}}, {{"a", 0, 1.0, 1.75}}, 1).per_class[0].tp == 0);
  // Different clip or class never matches.
  CHECK(event_based_f1(ref, {{"b", 0, 0.0, 2.0}}, 1).per_class[0].tp == 0);
  CHECK(event_based_f1(ref, {{"a", 1, 0.0, 2.0}}, 2).per_class[0].fn == 1);
  CHECK_THROWS_AS(event_based_f1(ref, {{"a", 0, 1.0, 1.0}}, 1), Error);
}

TEST_CASE("event-based properties") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    auto refs = random_segments(rng, 30, 3, 4, 3.0);
    CHECK(event_based_f1(refs, refs, 3).macro_f1 == 1.0);
    auto preds = jitter(refs, rng, 0.2);
    auto base = event_based_f1(refs, preds, 3);
    CHECK(base.macro_f1 >= 0.0);
    CHECK(base.macro_f1 <= 1.0);
    std::shuffle(refs.begin(), refs.end(), rng);
    std::shuffle(preds.begin(), preds.end(), rng);
    auto shuffled = event_based_f1(refs, preds, 3);
    CHECK(shuffled.tp == base.tp);
    CHECK(shuffled.macro_f1 == base.macro_f1);
    auto greedy = event_based_f1(refs, preds, 3, {}, MatchingRule::greedy);
    CHECK(greedy.tp <= base.tp);

    double prev = 2.0;
    for (double onset : {0.5, 0.3, 0.2, 0.1, 0.05, 0.01}) {
      Collar c;
      c.onset = onset;
      const double f = event_based_f1(refs, preds, 3, c).macro_f1;
      CHECK(f <= prev);
      prev = f;
    }
  }
}

TEST_CASE("event-based swap symmetry with fixed offset collar") {
  // References no longer than 1 s keep the offset collar at 0.2 s both ways.
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    auto refs = random_segments(rng, 20, 2, 3, 0.9);
    auto preds = jitter(refs, rng, 0.15);
    for (auto& p : preds) p.offset = std::min(p.offset, p.onset + 1.0);
    auto a = event_based_f1(refs, preds, 2);
    auto b = event_based_f1(preds, refs, 2);
    CHECK(a.tp == b.tp);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(a.per_class[c].precision == b.per_class[c].recall);
      CHECK(a.per_class[c].f1 == doctest::Approx(b.per_class[c].f1));
    }
  }
}

TEST_CASE("greedy matching can lose a match that the optimal matching keeps") {
  // p1 is compatible with both references, p2 only with r1; greedy hands r1 to p1.
  std::vector<EventSegment> refs{{"a", 0, 0.0, 1.0}, {"a", 0, 0.3, 1.3}};
  std::vector<EventSegment> preds{{"a", 0, 0.12, 1.12}, {"a", 0, 0.15, 0.95}};
  auto greedy = event_based_f1(refs, preds, 1, {}, MatchingRule::greedy);
  auto optimal = event_based_f1(refs, preds, 1);
  CHECK(optimal.tp == 2);
  CHECK(greedy.tp == 1);
}

TEST_CASE("segment-based F1") {
  auto r = segment_based_f1({{"a", 0, 0.0, 2.0}}, {{"a", 0, 1.0, 3.0}}, 1);
  CHECK(r.per_class[0].tp == 1);
  CHECK(r.per_class[0].fp == 1);
  CHECK(r.per_class[0].fn == 1);
  CHECK(r.macro_f1 == doctest::Approx(0.5));
  std::vector<EventSegment> same{{"a", 0, 0.3, 4.2}, {"b", 1, 7.0, 9.5}};
  CHECK(segment_based_f1(same, same, 2).macro_f1 == 1.0);

  // Oracle: rasterize at 100 frames/s on a 0.01 s grid, a bin is active iff any
  // of its frames overlaps a segment.
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> tick(0, 990), len(1, 400);
  std::uniform_int_distribution<std::size_t> cls(0, 2), clip(0, 2);
  for (int trial = 0; trial < 500; ++trial) {
    auto make = [&](int n) {
      std::vector<EventSegment> out;
      for (int i = 0; i < n; ++i) {
        const int on = tick(rng), off = std::min(1000, on + len(rng));
        out.push_back({"c" + std::to_string(clip(rng)), cls(rng), on / 100.0, off / 100.0});
      }
      return out;
    };
    auto refs = make(8), preds = make(8);
    auto report = segment_based_f1(refs, preds, 3, 1.0, 10.0);
    std::size_t tp[3] = {}, fp[3] = {}, fn[3] = {};
    for (int c_id = 0; c_id < 3; ++c_id) {
      const std::string clip_id = "c" + std::to_string(c_id);
      for (std::size_t c = 0; c < 3; ++c) {
        for (int bin = 0; bin < 10; ++bin) {
          auto active = [&](const std::vector<EventSegment>& segs) {
            for (int f = bin * 100; f < bin * 100 + 100; ++f)
              for (const auto& s : segs)
                if (s.clip == clip_id && s.label == c &&
                    std::lround(s.onset * 100) <= f && std::lround(s.offset * 100) > f)
                  return true;
            return false;
          };
          const bool a = active(refs), b = active(preds);
          tp[c] += a && b;
          fp[c] += !a && b;
          fn[c] += a && !b;
        }
      }
    }
    for (std::size_t c = 0; c < 3; ++c) {
      REQUIRE(report.per_class[c].tp == tp[c]);
      REQUIRE(report.per_class[c].fp == fp[c]);
      REQUIRE(report.per_class[c].fn == fn[c]);
    }
    auto swapped = segment_based_f1(preds, refs, 3, 1.0, 10.0);
    CHECK(swapped.macro_f1 == doctest::Approx(report.macro_f1));
  }
  CHECK_THROWS_AS(segment_based_f1({}, {}, 1, 0.0), Error);
}

TEST_CASE("clip macro F1") {
  nd::Array ref({4, 2}, {1, 0, 1, 1, 0, 1, 0, 0});
  CHECK(clip_macro_f1(ref, ref).macro_f1 == 1.0);
  // Class 0 never predicted: its F1 is 0 and the macro mean halves.
  nd::Array pred({4, 2}, {0, 0, 0, 1, 0, 1, 0, 0});
  auto r = clip_macro_f1(ref, pred);
  CHECK(r.per_class[0].f1 == 0.0);
  CHECK(r.macro_f1 == doctest::Approx(0.5));
  CHECK_THROWS_AS(clip_macro_f1(ref, nd::Array({3, 2})), Error);

  std::mt19937_64 rng(34);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    nd::Array a({20, 4}), b({20, 4});
    for (auto& v : a.data()) v = coin(rng);
    for (auto& v : b.data()) v = coin(rng);
    auto rep = clip_macro_f1(a, b);
    double macro = 0;
    int scored = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      int tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < 20; ++i) {
        tp += a.at(i, c) && b.at(i, c);
        fp += !a.at(i, c) && b.at(i, c);
        fn += a.at(i, c) && !b.at(i, c);
      }
      if (tp + fp + fn == 0) continue;
      ++scored;
      macro += 2.0 * tp / (2.0 * tp + fp + fn);
    }
    CHECK(rep.macro_f1 == doctest::Approx(scored ? macro / scored : 0.0));
    CHECK(clip_macro_f1(b, a).macro_f1 == doctest::Approx(rep.macro_f1));
  }
}

TEST_CASE("classes without references or predictions are excluded") {
  auto r = event_based_f1({{"a", 0, 0.0, 1.0}}, {{"a", 0, 0.0, 1.0}}, 3);
  CHECK(r.per_class[1].excluded);
  CHECK(r.per_class[2].excluded);
  CHECK(r.scored_classes() == 1);
  CHECK(r.macro_f1 == 1.0);
  auto empty = event_based_f1({{"a", 0, 0.0, 1.0}}, {}, 1);
  CHECK(empty.macro_recall == 0.0);
}

TEST_CASE("segment file round trip and report output") {
  std::vector<std::string> names{"dog", "siren"};
  SegmentList list;
  list.clips = {"x.wav", "y.wav", "z.wav"};
  list.segments = {{"x.wav", 0, 0.1, 1.25}, {"x.wav", 1, 3.0, 9.999}, {"z.wav", 1, 0.0, 10.0}};
  const std::string path = "segments_test.tsv";
  write_segments(path, list, names);
  auto back = read_segments(path, names);
  CHECK(back.clips == list.clips);
  CHECK(back.segments == list.segments);
  std::remove(path.c_str());

  {
    std::ofstream bad(path);
    bad << "x.wav\t0.1\t1.0\tcat\n";
  }
  try {
    read_segments(path, names);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
  {
    std::ofstream bad(path);
    bad << "x.wav\t0.1\t1.0\n";
  }
  CHECK_THROWS_AS(read_segments(path, names), Error);
  std::remove(path.c_str());

  auto rep = event_based_f1(list.segments, list.segments, 2);
  std::ostringstream csv;
  append_report_csv(csv, "event", rep, names);
  CHECK(csv.str().find("event,macro,3,0,0,1.000000,1.000000,1.000000,0") != std::string::npos);
  CHECK(report_table("event", rep, names).find("siren") != std::string::npos);
}
