#include "sedkd/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "sedkd/errors.hpp"
#include "sedkd/models.hpp"

namespace sedkd::post {

std::vector<std::size_t> WindowTable::windows() const {
  std::vector<std::size_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.window);
  return out;
}

DurationProfile build_duration_profile(const std::vector<EventSegment>& strong_labels,
                                       std::size_t n_classes) {
  DurationProfile profile;
  profile.durations.resize(n_classes);
  profile.cumulative.resize(n_classes);
  for (const auto& seg : strong_labels) {
    validate_segment(seg, n_classes);
    profile.durations[seg.label].push_back(seg.duration());
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& d = profile.durations[c];
    std::sort(d.begin(), d.end());
    profile.cumulative[c].resize(d.size());
    std::partial_sum(d.begin(), d.end(), profile.cumulative[c].begin());
  }
  return profile;
}

std::size_t knee_index(const std::vector<double>& cumulative) {
  require(!cumulative.empty(), ErrorKind::contract, "knee_index: empty cumulative curve");
  const std::size_t n = cumulative.size();
  if (n <= 2) return n;
  std::size_t best = 1;  // 0-based interior index
  double best_diff = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double diff = cumulative[i + 1] - 2.0 * cumulative[i] + cumulative[i - 1];
    if (diff > best_diff) {
      best_diff = diff;
      best = i;
    }
  }
  return best + 1;
}

std::size_t round_to_odd(double frames) {
  require(std::isfinite(frames), ErrorKind::numeric_domain, "round_to_odd: non-finite window");
  if (frames <= 1.0) return 1;
  return 2 * static_cast<std::size_t>(std::floor(frames / 2.0 + 1e-9)) + 1;
}

WindowTable compute_window_table(const DurationProfile& profile, double eta, double frame_rate,
                                 WindowRule rule) {
  require(eta > 0.0, ErrorKind::parameter, "window table: eta must be > 0");
  require(frame_rate > 0.0, ErrorKind::parameter, "window table: frame_rate must be > 0");
  WindowTable table;
  table.entries.resize(profile.durations.size());
  std::vector<std::size_t> measured;
  for (std::size_t c = 0; c < profile.durations.size(); ++c) {
    const auto& d = profile.durations[c];
    auto& e = table.entries[c];
    if (d.empty()) {
      e.fallback = true;
      continue;
    }
    e.knee = rule == WindowRule::knee ? knee_index(profile.cumulative[c]) : d.size();
    e.mean_duration_s = profile.cumulative[c][e.knee - 1] / static_cast<double>(e.knee);
    e.window = round_to_odd(e.mean_duration_s * eta * frame_rate);
    measured.push_back(e.window);
  }
  std::size_t fallback = 1;
  if (!measured.empty()) {
    std::sort(measured.begin(), measured.end());
    fallback = measured[(measured.size() - 1) / 2];
  }
  for (auto& e : table.entries)
    if (e.fallback) e.window = fallback;
  return table;
}

std::vector<double> median_filter(const std::vector<double>& seq, std::size_t window) {
  require(window >= 1 && window % 2 == 1, ErrorKind::parameter,
          "median_filter: window must be odd and >= 1, got " + std::to_string(window));
  if (window == 1 || seq.empty()) return seq;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(seq.size());
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> out(seq.size());
  std::vector<double> buf(window);
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    for (std::ptrdiff_t k = -half; k <= half; ++k)
      buf[k + half] = seq[std::clamp<std::ptrdiff_t>(j + k, 0, n - 1)];
    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    out[j] = buf[half];
  }
  return out;
}

std::vector<EventSegment> decode_segments(const nd::Array& binary_frames, double frame_rate,
                                          const std::string& clip) {
  require(binary_frames.rank() == 2, ErrorKind::dimension, "decode_segments: expected [T,C]");
  require(frame_rate > 0.0, ErrorKind::parameter, "decode_segments: frame_rate must be > 0");
  const std::size_t frames = binary_frames.dim(0), classes = binary_frames.dim(1);
  std::vector<EventSegment> out;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t t = 0;
    while (t < frames) {
      if (binary_frames.at(t, c) <= 0.5) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end + 1 < frames && binary_frames.at(end + 1, c) > 0.5) ++end;
      out.push_back({clip, c, static_cast<double>(t) / frame_rate,
                     static_cast<double>(end + 1) / frame_rate});
      t = end + 1;
    }
  }
  return out;
}

nd::Array rasterize_segments(const std::vector<EventSegment>& segments, std::size_t n_frames,
                             std::size_t n_classes, double frame_rate) {
  require(frame_rate > 0.0, ErrorKind::parameter, "rasterize_segments: frame_rate must be > 0");
  nd::Array grid({n_frames, n_classes});
  for (const auto& seg : segments) {
    require(seg.label < n_classes, ErrorKind::data,
            "rasterize_segments: class id " + std::to_string(seg.label) + " out of range");
    for (std::size_t j = 0; j < n_frames; ++j) {
      const double centre = (static_cast<double>(j) + 0.5) / frame_rate;
      if (centre >= seg.onset && centre < seg.offset) grid.at(j, seg.label) = 1.0;
    }
  }
  return grid;
}

nd::Array binarize(const nd::Array& probs, double threshold) {
  nd::Array out = probs;
  for (auto& v : out.data()) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

std::vector<EventSegment> esp_pipeline(const nd::Array& frame_probs,
                                       const std::vector<double>& clip_onehot,
                                       const WindowTable& table, double threshold,
                                       double frame_rate, const std::string& clip) {
  nd::Array masked = models::apply_tag_mask(frame_probs, clip_onehot);
  const std::size_t frames = masked.dim(0), classes = masked.dim(1);
  require(table.entries.size() == classes, ErrorKind::dimension,
          "esp_pipeline: window table has " + std::to_string(table.entries.size()) +
              " classes, posteriors have " + std::to_string(classes));
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::parameter,
          "esp_pipeline: threshold must lie in (0,1)");
  nd::Array binary({frames, classes});
  std::vector<double> column(frames);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t t = 0; t < frames; ++t) column[t] = masked.at(t, c);
    const std::size_t w = table.entries[c].window;
    auto smooth = median_filter(column, w);
    for (auto& v : smooth) v = v >= threshold ? 1.0 : 0.0;
    smooth = median_filter(smooth, w);
    for (std::size_t t = 0; t < frames; ++t) binary.at(t, c) = smooth[t];
  }
  return decode_segments(binary, frame_rate, clip);
}

void write_window_table(const std::string& path, const WindowTable& table,
                        const std::vector<std::string>& class_names) {
  require(class_names.size() == table.entries.size(), ErrorKind::dimension,
          "write_window_table: class name count mismatch");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << "class,N_c,mean_duration_s,window_frames\n";
  out << std::setprecision(10);
  for (std::size_t c = 0; c < table.entries.size(); ++c) {
    const auto& e = table.entries[c];
    out << class_names[c] << ',' << e.knee << ',' << e.mean_duration_s << ',' << e.window << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

}  // namespace sedkd::post
