#pragma once

// Event-based F1 with onset/offset collars, segment-based F1 on fixed time
// bins and clip-level macro F1 for tagging.

#include <cstddef>
#include <string>
#include <vector>

#include "sedkd/ndgrad.hpp"
#include "sedkd/types.hpp"

namespace sedkd::metrics {

struct ClassScore {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  bool excluded = false;  // no references and no predictions: left out of the macro mean
};

struct ScoreReport {
  std::vector<ClassScore> per_class;
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;

  std::size_t scored_classes() const;
};

// 0/0 -> 0 for precision, recall and F1.
ClassScore class_score(std::size_t tp, std::size_t fp, std::size_t fn);
ScoreReport make_report(std::vector<ClassScore> per_class);

struct Collar {
  double onset = 0.2;         // seconds
  double offset = 0.2;        // seconds
  double offset_ratio = 0.2;  // fraction of the reference length
};

enum class MatchingRule {
  bipartite,  // maximum-cardinality one-to-one matching
  greedy,     // predictions in onset order take the earliest compatible reference
};

bool segments_match(const EventSegment& ref, const EventSegment& pred, const Collar& collar);

ScoreReport event_based_f1(const std::vector<EventSegment>& refs,
                           const std::vector<EventSegment>& preds, std::size_t n_classes,
                           const Collar& collar = {},
                           MatchingRule rule = MatchingRule::bipartite);

// Clips are those appearing in either list; each is partitioned into
// ceil(clip_len / segment_len) bins.
ScoreReport segment_based_f1(const std::vector<EventSegment>& refs,
                             const std::vector<EventSegment>& preds, std::size_t n_classes,
                             double segment_len = 1.0, double clip_len = 10.0);

// Tag matrices [clips, C] with 0/1 entries.
ScoreReport clip_macro_f1(const nd::Array& ref_tags, const nd::Array& pred_tags);

// Tags of each listed clip from the classes present among its segments.
nd::Array tags_from_segments(const std::vector<EventSegment>& segments,
                             const std::vector<std::string>& clips, std::size_t n_classes);

// CSV columns: metric,class,tp,fp,fn,precision,recall,f1,excluded
void append_report_csv(std::ostream& out, const std::string& metric, const ScoreReport& report,
                       const std::vector<std::string>& class_names);
std::string report_table(const std::string& title, const ScoreReport& report,
                         const std::vector<std::string>& class_names);

}  // namespace sedkd::metrics
