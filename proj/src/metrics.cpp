#include "sedkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "sedkd/errors.hpp"

namespace sedkd::metrics {

namespace {

constexpr double kTimeSlack = 1e-9;

using Groups = std::map<std::pair<std::string, std::size_t>, std::vector<const EventSegment*>>;

Groups group_by_clip_and_class(const std::vector<EventSegment>& segs, std::size_t n_classes) {
  Groups groups;
  for (const auto& s : segs) {
    validate_segment(s, n_classes);
    groups[{s.clip, s.label}].push_back(&s);
  }
  return groups;
}

bool by_onset(const EventSegment* a, const EventSegment* b) {
  if (a->onset != b->onset) return a->onset < b->onset;
  return a->offset < b->offset;
}

// Kuhn's augmenting paths.
std::size_t max_matching(const std::vector<std::vector<std::size_t>>& adj, std::size_t n_right) {
  std::vector<long> owner(n_right, -1);
  std::size_t matched = 0;
  for (std::size_t left = 0; left < adj.size(); ++left) {
    std::vector<char> visited(n_right, 0);
    auto augment = [&](auto&& self, std::size_t u) -> bool {
      for (std::size_t v : adj[u]) {
        if (visited[v]) continue;
        visited[v] = 1;
        if (owner[v] < 0 || self(self, static_cast<std::size_t>(owner[v]))) {
          owner[v] = static_cast<long>(u);
          return true;
        }
      }
      return false;
    };
    if (augment(augment, left)) ++matched;
  }
  return matched;
}

std::size_t count_matches(std::vector<const EventSegment*> refs,
                          std::vector<const EventSegment*> preds, const Collar& collar,
                          MatchingRule rule) {
  std::sort(refs.begin(), refs.end(), by_onset);
  std::sort(preds.begin(), preds.end(), by_onset);
  if (rule == MatchingRule::greedy) {
    std::vector<char> used(refs.size(), 0);
    std::size_t matched = 0;
    for (const auto* p : preds) {
      for (std::size_t r = 0; r < refs.size(); ++r) {
        if (!used[r] && segments_match(*refs[r], *p, collar)) {
          used[r] = 1;
          ++matched;
          break;
        }
      }
    }
    return matched;
  }
  std::vector<std::vector<std::size_t>> adj(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t r = 0; r < refs.size(); ++r)
      if (segments_match(*refs[r], *preds[p], collar)) adj[p].push_back(r);
  return max_matching(adj, refs.size());
}

std::size_t bin_count(double clip_len, double segment_len) {
  return static_cast<std::size_t>(std::ceil(clip_len / segment_len - kTimeSlack));
}

}  // namespace

std::size_t ScoreReport::scored_classes() const {
  return static_cast<std::size_t>(
      std::count_if(per_class.begin(), per_class.end(), [](const auto& c) { return !c.excluded; }));
}

ClassScore class_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScore s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                      : 0.0;
  s.excluded = tp + fp + fn == 0;
  return s;
}

ScoreReport make_report(std::vector<ClassScore> per_class) {
  ScoreReport r;
  r.per_class = std::move(per_class);
  std::size_t scored = 0;
  for (const auto& c : r.per_class) {
    r.tp += c.tp;
    r.fp += c.fp;
    r.fn += c.fn;
    if (c.excluded) continue;
    ++scored;
    r.macro_f1 += c.f1;
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
  }
  if (scored) {
    r.macro_f1 /= static_cast<double>(scored);
    r.macro_precision /= static_cast<double>(scored);
    r.macro_recall /= static_cast<double>(scored);
  }
  return r;
}

bool segments_match(const EventSegment& ref, const EventSegment& pred, const Collar& collar) {
  if (ref.label != pred.label || ref.clip != pred.clip) return false;
  const double offset_collar = std::max(collar.offset, collar.offset_ratio * ref.duration());
  return std::abs(pred.onset - ref.onset) <= collar.onset + kTimeSlack &&
         std::abs(pred.offset - ref.offset) <= offset_collar + kTimeSlack;
}

ScoreReport event_based_f1(const std::vector<EventSegment>& refs,
                           const std::vector<EventSegment>& preds, std::size_t n_classes,
                           const Collar& collar, MatchingRule rule) {
  require(collar.onset > 0.0 && collar.offset > 0.0 && collar.offset_ratio >= 0.0,
          ErrorKind::parameter, "event_based_f1: collars must be positive");
  const Groups ref_groups = group_by_clip_and_class(refs, n_classes);
  const Groups pred_groups = group_by_clip_and_class(preds, n_classes);
  std::vector<std::size_t> tp(n_classes, 0), n_ref(n_classes, 0), n_pred(n_classes, 0);
  for (const auto& [key, group] : ref_groups) n_ref[key.second] += group.size();
  for (const auto& [key, group] : pred_groups) {
    n_pred[key.second] += group.size();
    auto it = ref_groups.find(key);
    if (it != ref_groups.end()) tp[key.second] += count_matches(it->second, group, collar, rule);
  }
  std::vector<ClassScore> per_class;
  for (std::size_t c = 0; c < n_classes; ++c)
    per_class.push_back(class_score(tp[c], n_pred[c] - tp[c], n_ref[c] - tp[c]));
  return make_report(std::move(per_class));
}

ScoreReport segment_based_f1(const std::vector<EventSegment>& refs,
                             const std::vector<EventSegment>& preds, std::size_t n_classes,
                             double segment_len, double clip_len) {
  require(segment_len > 0.0, ErrorKind::parameter, "segment_based_f1: segment_len must be > 0");
  require(clip_len > 0.0, ErrorKind::parameter, "segment_based_f1: clip_len must be > 0");
  const std::size_t bins = bin_count(clip_len, segment_len);
  std::map<std::string, std::pair<std::vector<char>, std::vector<char>>> grids;
  auto paint = [&](const std::vector<EventSegment>& segs, bool is_ref) {
    for (const auto& s : segs) {
      validate_segment(s, n_classes);
      auto& entry = grids[s.clip];
      auto& grid = is_ref ? entry.first : entry.second;
      grid.resize(bins * n_classes, 0);
      for (std::size_t k = 0; k < bins; ++k) {
        const double lo = static_cast<double>(k) * segment_len;
        const double hi = static_cast<double>(k + 1) * segment_len;
        if (s.onset < hi && s.offset > lo) grid[k * n_classes + s.label] = 1;
      }
    }
  };
  paint(refs, true);
  paint(preds, false);
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (auto& [clip, pair] : grids) {
    pair.first.resize(bins * n_classes, 0);
    pair.second.resize(bins * n_classes, 0);
    for (std::size_t i = 0; i < bins * n_classes; ++i) {
      const std::size_t c = i % n_classes;
      const bool r = pair.first[i], p = pair.second[i];
      tp[c] += r && p;
      fp[c] += !r && p;
      fn[c] += r && !p;
    }
  }
  std::vector<ClassScore> per_class;
  for (std::size_t c = 0; c < n_classes; ++c) per_class.push_back(class_score(tp[c], fp[c], fn[c]));
  return make_report(std::move(per_class));
}

ScoreReport clip_macro_f1(const nd::Array& ref_tags, const nd::Array& pred_tags) {
  require(ref_tags.rank() == 2 && ref_tags.shape() == pred_tags.shape(), ErrorKind::dimension,
          "clip_macro_f1: tag matrices " + nd::shape_str(ref_tags.shape()) + " and " +
              nd::shape_str(pred_tags.shape()) + " differ");
  const std::size_t clips = ref_tags.dim(0), classes = ref_tags.dim(1);
  std::vector<ClassScore> per_class;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < clips; ++i) {
      const bool r = ref_tags.at(i, c) > 0.5, p = pred_tags.at(i, c) > 0.5;
      tp += r && p;
      fp += !r && p;
      fn += r && !p;
    }
    per_class.push_back(class_score(tp, fp, fn));
  }
  return make_report(std::move(per_class));
}

nd::Array tags_from_segments(const std::vector<EventSegment>& segments,
                             const std::vector<std::string>& clips, std::size_t n_classes) {
  std::map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < clips.size(); ++i) row.emplace(clips[i], i);
  nd::Array tags({clips.size(), n_classes});
  for (const auto& s : segments) {
    auto it = row.find(s.clip);
    require(it != row.end(), ErrorKind::data, "segment for unlisted clip '" + s.clip + "'");
    require(s.label < n_classes, ErrorKind::data, "segment class out of range");
    tags.at(it->second, s.label) = 1.0;
  }
  return tags;
}

void append_report_csv(std::ostream& out, const std::string& metric, const ScoreReport& report,
                       const std::vector<std::string>& class_names) {
  require(class_names.size() == report.per_class.size(), ErrorKind::dimension,
          "report: class name count mismatch");
  auto row = [&](const std::string& name, std::size_t tp, std::size_t fp, std::size_t fn,
                 double p, double r, double f, bool excluded) {
    out << metric << ',' << name << ',' << tp << ',' << fp << ',' << fn << ',' << std::setprecision(6)
        << std::fixed << p << ',' << r << ',' << f << ',' << (excluded ? 1 : 0) << '\n';
    out.unsetf(std::ios::floatfield);
  };
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto& s = report.per_class[c];
    row(class_names[c], s.tp, s.fp, s.fn, s.precision, s.recall, s.f1, s.excluded);
  }
  row("macro", report.tp, report.fp, report.fn, report.macro_precision, report.macro_recall,
      report.macro_f1, report.scored_classes() == 0);
}

std::string report_table(const std::string& title, const ScoreReport& report,
                         const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << title << '\n';
  os << std::left << std::setw(16) << "class" << std::right << std::setw(6) << "TP" << std::setw(6)
     << "FP" << std::setw(6) << "FN" << std::setw(10) << "P" << std::setw(10) << "R"
     << std::setw(10) << "F1" << '\n';
  os << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    os << std::left << std::setw(16) << (c < class_names.size() ? class_names[c] : std::to_string(c))
       << std::right << std::setw(6) << s.tp << std::setw(6) << s.fp << std::setw(6) << s.fn
       << std::setw(10) << s.precision << std::setw(10) << s.recall << std::setw(10) << s.f1
       << (s.excluded ? "  (excluded: no refs, no preds)" : "") << '\n';
  }
  os << std::left << std::setw(16) << "macro" << std::right << std::setw(6) << report.tp
     << std::setw(6) << report.fp << std::setw(6) << report.fn << std::setw(10)
     << report.macro_precision << std::setw(10) << report.macro_recall << std::setw(10)
     << report.macro_f1 << '\n';
  return os.str();
}

}  // namespace sedkd::metrics
